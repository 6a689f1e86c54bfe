"""
Fixed repetition versus learned halting
=======================================

A token can be shown to a recurrent cell more than once. The *repeat* wrapper
does this a fixed number of times ρ and keeps the last state. The *adaptive*
wrapper lets a sigmoid halting unit decide, then emits a weighted average of the
intermediate states.
"""

import numpy as np

from ponderbench.adaptive import ActConfig, act_rollout, act_schedule, repeat_expand, repeat_rollout
from ponderbench.autodiff import ParamStore, Tensor
from ponderbench.cells import init_linear, init_rnn, rnn_step

# Repetition prepends a flag that is 1 only on the first presentation.
tokens = [Tensor([0.2, 0.3]), Tensor([0.7, 0.1])]
for t in repeat_expand(tokens, 3):
    print(t.value)

# The halting schedule on hand-picked halting values: the first two sum to
# 0.9 + 0.05 < 0.99, the third pushes the total past 1 - ε.
rec = act_schedule([0.9, 0.05, 0.5], epsilon=0.01)
print(f"N={rec.N}  R={rec.R:.2f}  weights={np.round(rec.p, 2)}  ponder={rec.ponder:.2f}")

# The same mechanism on a real cell and a batch of 6 sequences of 2 tokens.
rng = np.random.default_rng(1)
store = ParamStore()
cell = init_rnn(store, "cell", 4, 8, rng)
halt = init_linear(store, "halt", 8, 1, rng, bias=-1.0)
seq = [Tensor(rng.normal(size=(6, 3))) for _ in range(2)]

states, traces = act_rollout(rnn_step, cell, halt, seq, ActConfig(tau=0.01))
for t, tr in enumerate(traces):
    print(f"token {t}: steps per sequence {tr.N.tolist()}  ponder {np.round(tr.ponder, 2).tolist()}")

fixed = repeat_rollout(rnn_step, cell, seq, rho=2)
print("repeat wrapper output shape:", fixed[-1].h.shape)
