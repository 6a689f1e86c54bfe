"""Recurrent state-transition cells and linear heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, ParamStore, Tensor, add, affine, concat, mul, sigmoid, tanh


@dataclass
class CellState:
    h: Tensor
    c: Tensor | None = None

    @property
    def is_lstm(self) -> bool:
        return self.c is not None


@dataclass
class Linear:
    W: Tensor
    b: Tensor

    @property
    def in_size(self) -> int:
        return self.W.shape[1]

    @property
    def out_size(self) -> int:
        return self.W.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.W, self.b)


@dataclass
class RnnParams:
    W_in: Tensor
    W_rec: Tensor
    b: Tensor

    def __post_init__(self):
        H, I = self.W_in.shape
        if self.W_rec.shape != (H, H) or self.b.shape != (H,):
            raise DimensionError(
                f"inconsistent RNN shapes W_in{self.W_in.shape} W_rec{self.W_rec.shape} b{self.b.shape}")

    @property
    def hidden(self) -> int:
        return self.W_in.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_in.shape[1]


GATES = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    """Per-gate weights over the concatenated ``[x; h]`` plus biases.

    Gates: ``i`` input, ``f`` forget, ``o`` output, ``g`` candidate.
    """

    W: dict[str, Tensor]
    b: dict[str, Tensor]

    def __post_init__(self):
        if set(self.W) != set(GATES) or set(self.b) != set(GATES):
            raise DimensionError("LSTM needs exactly the gates i, f, o, g")
        shape = self.W["i"].shape
        H = shape[0]
        for k in GATES:
            if self.W[k].shape != shape or self.b[k].shape != (H,):
                raise DimensionError(f"gate {k}: W{self.W[k].shape} b{self.b[k].shape}, expected W{shape}")
        if shape[1] <= H:
            raise DimensionError(f"gate weights {shape} leave no input columns")

    @property
    def hidden(self) -> int:
        return self.W["i"].shape[0]

    @property
    def input_size(self) -> int:
        return self.W["i"].shape[1] - self.hidden


def _check_input(x: Tensor, size: int, state: CellState, hidden: int) -> None:
    if x.shape[-1] != size:
        raise DimensionError(f"cell expects input size {size}, got {x.shape}")
    if state.h.shape[-1] != hidden:
        raise DimensionError(f"cell expects hidden size {hidden}, got {state.h.shape}")


def rnn_step(p: RnnParams, s: CellState, x: Tensor) -> CellState:
    _check_input(x, p.input_size, s, p.hidden)
    pre = add(affine(x, p.W_in, p.b), affine(s.h, p.W_rec))
    return CellState(tanh(pre))


def lstm_step(p: LstmParams, s: CellState, x: Tensor) -> CellState:
    _check_input(x, p.input_size, s, p.hidden)
    if s.c is None:
        raise DimensionError("LSTM state needs a cell-memory vector")
    xh = concat([x, s.h])
    i = sigmoid(affine(xh, p.W["i"], p.b["i"]))
    f = sigmoid(affine(xh, p.W["f"], p.b["f"]))
    o = sigmoid(affine(xh, p.W["o"], p.b["o"]))
    g = tanh(affine(xh, p.W["g"], p.b["g"]))
    c = add(mul(f, s.c), mul(i, g))
    return CellState(mul(o, tanh(c)), c)


def readout(head: Linear, s: CellState) -> Tensor:
    if head.in_size != s.h.shape[-1]:
        raise DimensionError(f"head expects {head.in_size} hidden units, state has {s.h.shape}")
    return head(s.h)


# ---------------------------------------------------------------------------
# construction


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    r = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-r, r, size=shape)


def init_rnn(store: ParamStore, prefix: str, input_size: int, hidden: int,
             rng: np.random.Generator) -> RnnParams:
    fan_in = input_size + hidden
    return RnnParams(
        W_in=store.add(f"{prefix}.W_in", _uniform(rng, (hidden, input_size), fan_in)),
        W_rec=store.add(f"{prefix}.W_rec", _uniform(rng, (hidden, hidden), fan_in)),
        b=store.add(f"{prefix}.b", np.zeros(hidden)),
    )


def init_lstm(store: ParamStore, prefix: str, input_size: int, hidden: int,
              rng: np.random.Generator, forget_bias: float = 1.0) -> LstmParams:
    fan_in = input_size + hidden
    W, b = {}, {}
    for k in GATES:
        W[k] = store.add(f"{prefix}.W_{k}", _uniform(rng, (hidden, fan_in), fan_in))
        b[k] = store.add(f"{prefix}.b_{k}", np.full(hidden, forget_bias if k == "f" else 0.0))
    return LstmParams(W, b)


def init_linear(store: ParamStore, prefix: str, in_size: int, out_size: int,
                rng: np.random.Generator, bias: float = 0.0) -> Linear:
    return Linear(
        W=store.add(f"{prefix}.W", _uniform(rng, (out_size, in_size), in_size)),
        b=store.add(f"{prefix}.b", np.full(out_size, bias)),
    )


def zero_state(hidden: int, lstm: bool, batch: int | None = None) -> CellState:
    shape = (hidden,) if batch is None else (batch, hidden)
    return CellState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)) if lstm else None)


def step_fn(params):
    """The transition function matching a parameter bundle."""
    if isinstance(params, RnnParams):
        return rnn_step
    if isinstance(params, LstmParams):
        return lstm_step
    raise TypeError(f"not a cell parameter bundle: {type(params).__name__}")
