"""
Reverse-mode gradients and finite-difference checks
===================================================

Every model in the package is built from a small tape of numpy operations.
This walk-through builds a one-step RNN by hand, backpropagates through it and
compares the result with central differences.
"""

import numpy as np

from ponderbench.autodiff import ParamStore, Tensor, backward, grad_check, total
from ponderbench.cells import CellState, init_linear, init_rnn, readout, rnn_step

rng = np.random.default_rng(0)

# Parameters live in a store so they can be iterated in a stable order.
store = ParamStore()
cell = init_rnn(store, "cell", input_size=3, hidden=4, rng=rng)
head = init_linear(store, "head", 4, 1, rng)
print("parameters:", list(store))

# One cell step from a zero state, then a linear readout summed to a scalar.
x = Tensor(rng.normal(size=3))


def loss():
    s = rnn_step(cell, CellState(Tensor(np.zeros(4))), x)
    return total(readout(head, s))


value = loss()
backward(value, store)
print(f"loss = {value.item():+.6f}")
print("d loss / d W_rec (first row):", np.round(store["cell.W_rec"].grad[0], 6))

# The recurrent matrix gets a zero gradient here: h0 is zero, so W_rec·h0 does
# not depend on it. grad_check rebuilds the loss for every perturbation.
err = grad_check(loss, store)
print(f"max relative error against central differences: {err:.2e}")
assert err < 1e-6
