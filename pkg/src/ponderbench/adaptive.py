"""Per-token computation wrappers: fixed repetition and adaptive halting.

Both wrappers feed the cell a flag-augmented input whose first component is
1 on the first presentation of a token and 0 on every repeat.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Tensor, add, as_tensor, concat, mul, reshape, sigmoid, take, total, weighted_sum
from .cells import CellState, Linear, LstmParams, zero_state

Cell = Callable[[object, CellState, Tensor], CellState]


@dataclass(frozen=True)
class RepeatConfig:
    rho: int = 1

    def __post_init__(self):
        if int(self.rho) != self.rho or self.rho < 1:
            raise ValueError(f"rho must be an integer >= 1, got {self.rho}")


@dataclass(frozen=True)
class ActConfig:
    tau: float = 1e-2
    epsilon: float = 0.01
    max_steps: int = 50

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass
class HaltingRecord:
    """Halting trace of one token: steps, halting values, weights, remainder."""

    N: int
    h: list[float]
    p: list[float]
    R: float
    ponder: float


@dataclass
class HaltingTrace:
    """Halting traces of one token position across a batch.

    ``h`` and ``p`` are ``[B, steps]`` with zero weight past each row's halt;
    ``remainder`` stays in the graph so the ponder cost can be differentiated.
    """

    N: np.ndarray
    h: np.ndarray
    p: np.ndarray
    remainder: Tensor

    @property
    def R(self) -> np.ndarray:
        return self.remainder.value

    @property
    def ponder(self) -> np.ndarray:
        return self.N + self.remainder.value

    def __len__(self) -> int:
        return len(self.N)

    def records(self) -> list[HaltingRecord]:
        out = []
        for b, n in enumerate(self.N):
            n = int(n)
            out.append(HaltingRecord(n, self.h[b, :n].tolist(), self.p[b, :n].tolist(),
                                     float(self.R[b]), float(n + self.R[b])))
        return out


def augment_input(x, n: int) -> Tensor:
    """Prepend the first-presentation flag (1 when ``n == 1``) to ``x``."""
    if n < 1:
        raise ValueError("step index starts at 1")
    x = as_tensor(x)
    flag_shape = x.shape[:-1] + (1,)
    flag = Tensor(np.full(flag_shape, 1.0 if n == 1 else 0.0))
    return concat([flag, x])


def repeat_expand(seq: Sequence, rho: int) -> list[Tensor]:
    RepeatConfig(rho)
    return [augment_input(x, n) for x in seq for n in range(1, rho + 1)]


def repeat_rollout(cell: Cell, params, seq: Sequence, rho: int,
                   s0: CellState | None = None) -> list[CellState]:
    """Run ``rho`` cell updates per token; each token emits its last state."""
    RepeatConfig(rho)
    s = s0 if s0 is not None else _zero_like(params, seq)
    emitted = []
    for x in seq:
        for n in range(1, rho + 1):
            s = cell(params, s, augment_input(x, n))
        emitted.append(s)
    return emitted


def _zero_like(params, seq) -> CellState:
    if not hasattr(params, "hidden"):
        raise ValueError("an initial state is required for this cell")
    x0 = as_tensor(seq[0])
    batch = x0.shape[0] if x0.value.ndim == 2 else None
    return zero_state(params.hidden, isinstance(params, LstmParams), batch)


def act_schedule(h: Iterable[float], epsilon: float = 0.01, max_steps: int = 50) -> HaltingRecord:
    """Apply the halting rule to halting values consumed one at a time."""
    hs: list[float] = []
    acc = 0.0
    for n, hn in enumerate(h, start=1):
        hn = float(hn)
        if acc + hn >= 1.0 - epsilon or n >= max_steps:
            R = 1.0 - acc
            return HaltingRecord(n, hs + [hn], hs + [R], R, n + R)
        hs.append(hn)
        acc += hn
    raise ValueError(f"halting values ran out after {len(hs)} steps without halting")


def act_rollout(cell: Cell, params, halt_head: Linear, seq: Sequence, cfg: ActConfig,
                s0: CellState | None = None) -> tuple[list[CellState], list[HaltingTrace]]:
    """Adaptive rollout; each token emits the halting-weighted mean of its
    intermediate states, and that mean is carried to the next token.

    Accepts vector tokens ``[I]`` or batched tokens ``[B, I]``; with vector
    tokens the batch axis is added and dropped internally.
    """
    seq = [as_tensor(x) for x in seq]
    single = seq[0].value.ndim == 1
    if single:
        seq = [reshape(x, (1,) + x.shape) for x in seq]
        if s0 is not None:
            s0 = CellState(*(None if t is None else reshape(t, (1,) + t.shape) for t in (s0.h, s0.c)))
    s = s0 if s0 is not None else _zero_like(params, seq)
    emitted, traces = [], []
    for x in seq:
        s, trace = _act_token(cell, params, halt_head, s, x, cfg)
        emitted.append(s)
        traces.append(trace)
    if single:
        emitted = [CellState(*(None if t is None else take(t, 0) for t in (e.h, e.c))) for e in emitted]
    return emitted, traces


def _act_token(cell, params, halt_head, s, x, cfg):
    B = x.shape[0]
    threshold = 1.0 - cfg.epsilon
    running = np.ones(B, dtype=bool)
    N = np.zeros(B, dtype=np.int64)
    cum = Tensor(np.zeros(B))
    remainder = Tensor(np.zeros(B))
    states, weights, hs, ps = [], [], [], []
    for n in range(1, cfg.max_steps + 1):
        s = cell(params, s, augment_input(x, n))
        hn = take(sigmoid(halt_head(s.h)), (slice(None), 0))
        halt_now = running & ((cum.value + hn.value >= threshold) | (n == cfg.max_steps))
        cont = running & ~halt_now
        r = mul(1.0 - cum, halt_now.astype(np.float64))
        w = add(mul(hn, cont.astype(np.float64)), r)
        remainder = add(remainder, r)
        cum = add(cum, mul(hn, cont.astype(np.float64)))
        N[halt_now] = n
        states.append(s)
        weights.append(w)
        hs.append(hn.value)
        ps.append(w.value)
        running = cont
        if not running.any():
            break
    h = weighted_sum([st.h for st in states], weights)
    c = weighted_sum([st.c for st in states], weights) if s.c is not None else None
    trace = HaltingTrace(N, np.stack(hs, axis=1), np.stack(ps, axis=1), remainder)
    return CellState(h, c), trace


def ponder_loss(records: Sequence, tau: float) -> Tensor:
    """``tau`` times the per-sequence ponder sum, averaged over sequences.

    ``records`` is one entry per token: a :class:`HaltingTrace` (gradients
    flow through the remainder) or a :class:`HaltingRecord` for a single
    sequence. Step counts carry no gradient.
    """
    if not records:
        return Tensor(0.0)
    if isinstance(records[0], HaltingRecord):
        return Tensor(tau * sum(r.ponder for r in records))
    B = len(records[0])
    per_seq = None
    for tr in records:
        term = add(tr.remainder, tr.N.astype(np.float64))
        per_seq = term if per_seq is None else add(per_seq, term)
    return mul(total(per_seq), tau / B)


def mean_repetitions(records) -> float:
    """Mean step count per token over traces, records, or plain counts."""
    counts = []
    for r in records:
        if isinstance(r, HaltingTrace):
            counts.append(np.asarray(r.N, dtype=np.float64))
        elif isinstance(r, HaltingRecord):
            counts.append(np.array([r.N], dtype=np.float64))
        else:
            counts.append(np.atleast_1d(np.asarray(r, dtype=np.float64)))
    if not counts:
        raise ValueError("mean_repetitions of an empty set")
    allc = np.concatenate(counts)
    if allc.size == 0:
        raise ValueError("mean_repetitions of an empty set")
    return float(allc.mean())
