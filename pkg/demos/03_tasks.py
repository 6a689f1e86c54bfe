"""
The two synthetic tasks
=======================

Parity: a single vector with a random number of ±1 entries; the label is the
parity of the count of +1 entries. Addition: a sequence of numbers given as
one-hot digits; after each number the network must emit the running sum,
digit by digit, with class 10 marking positions past the end.
"""

import numpy as np

from ponderbench.tasks import COMPLETE, AdditionSpec, ParitySpec, addition_batch, gen_addition, gen_parity

rng = np.random.default_rng(3)

s = gen_parity(rng, ParitySpec(size=16))
print("parity input :", s.inputs[0].astype(int))
print("parity target:", s.targets)

s = gen_addition(rng)
print("numbers:", s.values)
for t, row in enumerate(np.asarray(s.targets)):
    value = "".join(str(d) for d in reversed(row.tolist()) if d != COMPLETE)
    shown = "" if s.mask[t] else "(not scored)"
    print(f"  after number {t + 1}: classes {row.tolist()} read back as {value} {shown}")

# The reduced desk variant: two numbers of at most two digits, three output heads.
desk = AdditionSpec(n_numbers=2, max_digits=2)
b = addition_batch(rng, 4, desk)
print("desk batch inputs:", b.inputs.shape, "targets:", b.targets.shape, "mask:", b.mask.tolist())
