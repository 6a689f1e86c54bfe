"""Parity and cumulative-addition tasks: generators, target oracles, metrics.

Digits are little-endian everywhere (least significant first), both in the
input encoding and in the target classes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor, bce_with_logits, mean, mul, reshape, softmax_cross_entropy, total

PARITY_SIZE = 64
DIGIT_CLASSES = 11
COMPLETE = 10  # class index marking a position past the last digit


@dataclass(frozen=True)
class ParitySpec:
    size: int = PARITY_SIZE
    count_all_nonzero: bool = False

    name = "parity"

    @property
    def input_size(self) -> int:
        return self.size

    @property
    def output_size(self) -> int:
        return 1

    @property
    def length(self) -> int:
        return 1


@dataclass(frozen=True)
class AdditionSpec:
    n_numbers: int = 5
    max_digits: int = 5

    name = "addition"

    @property
    def input_size(self) -> int:
        return 10 * self.max_digits

    @property
    def heads(self) -> int:
        return self.max_digits + 1

    @property
    def output_size(self) -> int:
        return self.heads * DIGIT_CLASSES

    @property
    def length(self) -> int:
        return self.n_numbers


@dataclass
class Sample:
    inputs: list[np.ndarray]
    targets: object
    mask: list[bool]
    values: list[int] | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.mask) != len(self.inputs):
            raise ValueError("mask length must equal sequence length")


@dataclass
class Batch:
    """Stacked samples: ``inputs[T, B, I]``; targets ``[B]`` (parity) or ``[T, B, heads]``."""

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    values: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.inputs.shape[1]

    @property
    def length(self) -> int:
        return self.inputs.shape[0]

    def sequence(self) -> list[Tensor]:
        return [Tensor(x) for x in self.inputs]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Batch":
        lengths = {len(s.inputs) for s in samples}
        if len(lengths) != 1:
            raise ValueError(f"mixed sequence lengths in batch: {sorted(lengths)}")
        inputs = np.stack([np.stack(s.inputs) for s in samples], axis=1)
        first = samples[0].targets
        if np.ndim(first) == 0:
            targets = np.array([s.targets for s in samples], dtype=np.int64)
        else:
            targets = np.stack([np.asarray(s.targets) for s in samples], axis=1)
        return cls(inputs, targets, np.array(samples[0].mask, dtype=bool))

    def samples(self) -> list[Sample]:
        out = []
        for b in range(self.size):
            tgt = int(self.targets[b]) if self.targets.ndim == 1 else self.targets[:, b]
            out.append(Sample(list(self.inputs[:, b]), tgt, self.mask.tolist()))
        return out


# ---------------------------------------------------------------------------
# parity


def parity_oracle(x, count_all_nonzero: bool = False) -> int:
    x = np.asarray(x)
    if not np.isin(x, (-1, 0, 1)).all():
        raise ValueError("parity inputs must be in {-1, 0, 1}")
    hits = np.count_nonzero(x) if count_all_nonzero else np.count_nonzero(x == 1)
    return int(hits % 2)


def gen_parity(rng: np.random.Generator, spec: ParitySpec = ParitySpec()) -> Sample:
    n = spec.size
    k = rng.integers(1, n + 1)
    x = np.zeros(n)
    pos = rng.choice(n, size=k, replace=False)
    x[pos] = rng.choice((-1.0, 1.0), size=k)
    return Sample([x], parity_oracle(x, spec.count_all_nonzero), [True])


def parity_batch(rng: np.random.Generator, size: int, spec: ParitySpec = ParitySpec()) -> Batch:
    """Vectorised draw from the same distribution as :func:`gen_parity`."""
    n = spec.size
    k = rng.integers(1, n + 1, size=size)
    ranks = np.argsort(rng.random((size, n)), axis=1).argsort(axis=1)
    signs = np.where(rng.random((size, n)) < 0.5, -1.0, 1.0)
    x = np.where(ranks < k[:, None], signs, 0.0)
    hits = (x != 0) if spec.count_all_nonzero else (x == 1)
    targets = (hits.sum(axis=1) % 2).astype(np.int64)
    return Batch(x[None], targets, np.array([True]))


def parity_metrics(logit: Tensor, target) -> tuple[Tensor, object]:
    """BCE loss of ``sigmoid(logit)`` and whether the thresholded output is right.

    For a single logit this returns ``(loss, bool)``; for a batch ``[B, 1]`` the
    loss is the batch mean and ``correct`` a boolean array.
    """
    target = np.asarray(target, dtype=np.float64)
    z = reshape(logit, target.shape) if logit.value.size == target.size else logit
    loss = mean(bce_with_logits(z, target))
    correct = (z.value >= 0.0) == (target == 1.0)
    if correct.ndim == 0:
        correct = bool(correct)
    return loss, correct


# ---------------------------------------------------------------------------
# addition


def encode_number(value: int, D: int, max_digits: int = 5) -> np.ndarray:
    if not 1 <= D <= max_digits:
        raise ValueError(f"digit count must be in 1..{max_digits}")
    if not 0 <= value < 10 ** D:
        raise ValueError(f"{value} does not fit in {D} digits")
    out = np.zeros(10 * max_digits)
    for i in range(D):
        out[10 * i + (value // 10 ** i) % 10] = 1.0
    return out


def decode_number(x) -> int:
    x = np.asarray(x).reshape(-1, 10)
    value = 0
    for i, block in enumerate(x):
        if not block.any():
            break
        value += int(np.argmax(block)) * 10 ** i
    return value


def render_digits(value: int, heads: int) -> list[int]:
    """Little-endian digit classes of ``value``, padded with the complete marker."""
    digits = [int(c) for c in reversed(str(value))]
    if len(digits) > heads:
        raise ValueError(f"{value} needs more than {heads} digit positions")
    return digits + [COMPLETE] * (heads - len(digits))


def addition_oracle(values: Sequence[int], heads: int = 6) -> np.ndarray:
    """Target classes ``[T, heads]`` for the running sums of ``values``."""
    out, acc = [], 0
    for v in values:
        acc += int(v)
        out.append(render_digits(acc, heads))
    return np.array(out, dtype=np.int64)


def gen_addition(rng: np.random.Generator, spec: AdditionSpec = AdditionSpec()) -> Sample:
    inputs, values = [], []
    for _ in range(spec.n_numbers):
        D = int(rng.integers(1, spec.max_digits + 1))
        digits = rng.integers(0, 10, size=D)
        value = int(sum(int(d) * 10 ** i for i, d in enumerate(digits)))
        inputs.append(encode_number(value, D, spec.max_digits))
        values.append(value)
    mask = [False] + [True] * (spec.n_numbers - 1)
    return Sample(inputs, addition_oracle(values, spec.heads), mask, values)


def addition_batch(rng: np.random.Generator, size: int, spec: AdditionSpec = AdditionSpec()) -> Batch:
    """Vectorised draw from the same distribution as :func:`gen_addition`."""
    T, M = spec.n_numbers, spec.max_digits
    D = rng.integers(1, M + 1, size=(T, size))
    digits = rng.integers(0, 10, size=(T, size, M))
    present = np.arange(M) < D[..., None]
    inputs = np.zeros((T, size, M, 10))
    t_idx, b_idx, m_idx = np.nonzero(present)
    inputs[t_idx, b_idx, m_idx, digits[t_idx, b_idx, m_idx]] = 1.0
    values = (np.where(present, digits, 0) * 10 ** np.arange(M)).sum(axis=-1)
    sums = np.cumsum(values, axis=0)
    heads = spec.heads
    place = (sums[..., None] // 10 ** np.arange(heads)) % 10
    ndig = np.maximum(1, np.floor(np.log10(np.maximum(sums, 1))).astype(np.int64) + 1)
    targets = np.where(np.arange(heads) < ndig[..., None], place, COMPLETE).astype(np.int64)
    mask = np.arange(T) > 0
    return Batch(inputs.reshape(T, size, 10 * M), targets, mask, values)


def addition_metrics(logits: Sequence[Tensor], targets, mask, heads: int = 6) -> tuple[Tensor, np.ndarray]:
    """Summed per-head cross-entropy over masked-in steps, averaged over the batch.

    ``logits`` holds one ``[B, heads*11]`` (or ``[heads*11]``) tensor per step and
    ``targets`` is ``[T, B, heads]`` (or ``[T, heads]``). Returns the loss and a
    ``[T, B]`` array marking steps where every head's argmax is right; masked-out
    steps are always False there.
    """
    targets = np.asarray(targets)
    single = targets.ndim == 2
    if single:
        targets = targets[:, None, :]
    B = targets.shape[1]
    loss = None
    correct = np.zeros(targets.shape[:2], dtype=bool)
    for t, (z, on) in enumerate(zip(logits, mask)):
        if not on:
            continue
        z = reshape(z, (B, heads, DIGIT_CLASSES))
        term = total(softmax_cross_entropy(z, targets[t]))
        loss = term if loss is None else loss + term
        correct[t] = (z.value.argmax(axis=-1) == targets[t]).all(axis=-1)
    if loss is None:
        loss = Tensor(0.0)
    loss = mul(loss, 1.0 / B)
    return loss, (correct[:, 0] if single else correct)


# ---------------------------------------------------------------------------
# fixture dump


def dump_samples(path, samples: Iterable[Sample], task: str, seed: int) -> None:
    """One JSON object per line: task, inputs, targets, mask, seed."""
    with open(path, "w") as fh:
        for s in samples:
            tgt = s.targets.tolist() if isinstance(s.targets, np.ndarray) else s.targets
            rec = {"task": task, "inputs": [np.asarray(x).tolist() for x in s.inputs],
                   "targets": tgt, "mask": list(map(bool, s.mask)), "seed": seed}
            fh.write(json.dumps(rec) + "\n")


def load_samples(path) -> list[Sample]:
    out = []
    for line in Path(path).read_text().splitlines():
        rec = json.loads(line)
        tgt = rec["targets"]
        tgt = np.array(tgt, dtype=np.int64) if isinstance(tgt, list) else tgt
        out.append(Sample([np.array(x, dtype=np.float64) for x in rec["inputs"]], tgt, rec["mask"]))
    return out
