"""Models, optimisers and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adaptive import ActConfig, act_rollout, mean_repetitions, ponder_loss, repeat_rollout
from .autodiff import ParamStore, Tensor, backward
from .cells import CellState, init_linear, init_lstm, init_rnn, readout, step_fn, zero_state
from .config import ExperimentConfig
from .tasks import AdditionSpec, Batch, ParitySpec, addition_batch, addition_metrics, parity_batch, parity_metrics


class Model:
    """A cell, an optional wrapper, a task readout and (for ACT) a halting head."""

    def __init__(self, cfg: ExperimentConfig, rng: np.random.Generator, params: ParamStore | None = None):
        self.cfg = cfg
        self.spec = cfg.task_spec()
        self.lstm = cfg.cell == "lstm"
        flag = 0 if cfg.wrapper == "none" else 1
        in_size = self.spec.input_size + flag
        fresh = params is None
        self.params = ParamStore() if fresh else params
        store = self.params if fresh else ParamStore()
        if self.lstm:
            self.cell = init_lstm(store, "cell", in_size, cfg.hidden, rng)
        else:
            self.cell = init_rnn(store, "cell", in_size, cfg.hidden, rng)
        self.head = init_linear(store, "head", cfg.hidden, self.spec.output_size, rng)
        self.halt = None
        if cfg.wrapper == "act":
            self.halt = init_linear(store, "halt", cfg.hidden, 1, rng, bias=cfg.halt_bias)
        if not fresh:
            self._rebind(params)
        self.step = step_fn(self.cell)
        self.act = ActConfig(cfg.tau, cfg.epsilon, cfg.max_steps) if cfg.wrapper == "act" else None

    def _rebind(self, params: ParamStore) -> None:
        for bundle in (self.cell, self.head, self.halt):
            if bundle is None:
                continue
            for attr, val in vars(bundle).items():
                if isinstance(val, Tensor):
                    setattr(bundle, attr, params[val.name])
                elif isinstance(val, dict):
                    for k, t in val.items():
                        val[k] = params[t.name]

    def frozen(self) -> "Model":
        """Same weights (copied) with gradient tracking off, for evaluation."""
        ps = self.params.copy()
        for _, t in ps.items():
            t.requires_grad = False
        return Model(self.cfg, np.random.default_rng(0), ps)

    def forward(self, batch: Batch):
        """Per-step logits and, for ACT, per-step halting traces."""
        seq = batch.sequence()
        s0 = zero_state(self.cfg.hidden, self.lstm, batch.size)
        traces = None
        if self.cfg.wrapper == "none":
            states, s = [], s0
            for x in seq:
                s = self.step(self.cell, s, x)
                states.append(s)
        elif self.cfg.wrapper == "repeat":
            states = repeat_rollout(self.step, self.cell, seq, self.cfg.rho, s0)
        else:
            states, traces = act_rollout(self.step, self.cell, self.halt, seq, self.act, s0)
        return [readout(self.head, s) for s in states], traces

    def repetitions(self, traces, batch: Batch) -> float:
        if traces is not None:
            return mean_repetitions(traces)
        return float(self.cfg.rho) if self.cfg.wrapper == "repeat" else 1.0


@dataclass
class StepResult:
    loss: Tensor
    task_loss: float
    ponder: float
    correct: np.ndarray
    repetitions: float
    traces: list | None


def compute_loss(model: Model, batch: Batch) -> StepResult:
    logits, traces = model.forward(batch)
    if isinstance(model.spec, ParitySpec):
        task_loss, correct = parity_metrics(logits[-1], batch.targets)
        correct = np.atleast_1d(correct)
    else:
        task_loss, correct = addition_metrics(logits, batch.targets, batch.mask, model.spec.heads)
        correct = correct[batch.mask]
    loss, ponder = task_loss, 0.0
    if traces is not None:
        ponder = float(np.mean(sum(tr.ponder for tr in traces)))
        loss = task_loss + ponder_loss(traces, model.cfg.tau)
    return StepResult(loss, task_loss.item(), ponder, correct, model.repetitions(traces, batch), traces)


def make_batch(spec, rng: np.random.Generator, size: int) -> Batch:
    if isinstance(spec, ParitySpec):
        return parity_batch(rng, size, spec)
    if isinstance(spec, AdditionSpec):
        return addition_batch(rng, size, spec)
    raise TypeError(f"unknown task spec {spec!r}")


# ---------------------------------------------------------------------------
# optimisation


def grad_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float | None) -> tuple[dict[str, np.ndarray], float]:
    """Rescale to global norm ``max_norm``; returns the grads and the pre-clip norm."""
    norm = grad_norm(grads)
    if max_norm is None or not np.isfinite(norm) or norm <= max_norm:
        return grads, norm
    k = max_norm / norm
    return {n: g * k for n, g in grads.items()}, norm


def sgd_update(params: ParamStore, grads: dict[str, np.ndarray], lr: float) -> bool:
    """``θ ← θ − lr·g`` in place. Returns False, leaving params untouched, if any grad is non-finite."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if not all(np.isfinite(g).all() for g in grads.values()):
        return False
    if lr == 0:
        return True
    for name, t in params.trainable():
        t.value = t.value - lr * grads[name]
    return True


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def update(self, params: ParamStore, grads: dict[str, np.ndarray]) -> bool:
        if not all(np.isfinite(g).all() for g in grads.values()):
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, t in params.trainable():
            g = grads[name]
            m = self.m.get(name, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(name, 0.0) * b2 + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            t.value = t.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return True


# ---------------------------------------------------------------------------
# evaluation and the loop


@dataclass
class EvalResult:
    accuracy: float
    mean_repetitions: float
    mean_ponder: float
    loss: float


def evaluate(model: Model, spec, n_batches: int, rng: np.random.Generator, batch_size: int = 128) -> EvalResult:
    """Accuracy on freshly drawn batches, plus repetition and ponder statistics."""
    if n_batches < 1:
        raise ValueError("need at least one evaluation batch")
    frozen = model.frozen()
    hits, count, reps, ponders, losses = 0, 0, [], [], []
    for _ in range(n_batches):
        res = compute_loss(frozen, make_batch(spec, rng, batch_size))
        hits += int(res.correct.sum())
        count += res.correct.size
        reps.append(res.repetitions)
        ponders.append(res.ponder)
        losses.append(res.task_loss)
        if res.traces is not None:
            _check_traces(res.traces, frozen.act)
    return EvalResult(hits / count, float(np.mean(reps)), float(np.mean(ponders)), float(np.mean(losses)))


def _check_traces(traces, act: ActConfig) -> None:
    for tr in traces:
        if not (np.all(tr.N >= 1) and np.all(tr.N <= act.max_steps)):
            raise AssertionError("halting step count out of range")
        if np.max(np.abs(tr.p.sum(axis=1) - 1.0)) > 1e-12:
            raise AssertionError("halting weights do not sum to one")


@dataclass
class MetricsRecord:
    step: int
    train_loss: float
    eval_accuracy: float
    mean_repetitions: float
    mean_ponder: float
    diverged: bool


@dataclass
class TrainState:
    step: int
    params: ParamStore
    data_rng: np.random.Generator
    eval_rng: np.random.Generator
    eval_accuracy: float = 0.0
    diverged: bool = False


@dataclass
class TrainReport:
    solved: bool
    steps_to_solve: int | None
    mean_repetitions: float
    curve: list[tuple[int, float, float, float]] = field(default_factory=list)
    diverged: bool = False
    final_accuracy: float = 0.0
    peak_accuracy: float = 0.0

    def to_dict(self) -> dict:
        return {"solved": self.solved, "steps_to_solve": self.steps_to_solve,
                "mean_repetitions": self.mean_repetitions, "diverged": self.diverged,
                "final_accuracy": self.final_accuracy, "peak_accuracy": self.peak_accuracy,
                "curve": [list(c) for c in self.curve]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(d["solved"], d["steps_to_solve"], d["mean_repetitions"],
                   [tuple(c) for c in d.get("curve", [])], d.get("diverged", False),
                   d.get("final_accuracy", 0.0), d.get("peak_accuracy", 0.0))


def seed_streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent generators for init, training data and evaluation data."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def train_run(cfg: ExperimentConfig, on_record: Callable[[MetricsRecord], None] | None = None,
              model: Model | None = None) -> TrainReport:
    cfg = cfg.resolved()
    init_rng, data_rng, eval_rng = seed_streams(cfg.seed)
    model = model if model is not None else Model(cfg, init_rng)
    spec = model.spec
    state = TrainState(0, model.params, data_rng, eval_rng)
    opt = Adam(cfg.lr) if cfg.optimizer == "adam" else None
    report = TrainReport(False, None, 1.0)
    window: list[float] = []

    def record(ev: EvalResult | None) -> None:
        acc = ev.accuracy if ev else state.eval_accuracy
        reps = ev.mean_repetitions if ev else report.mean_repetitions
        pond = ev.mean_ponder if ev else float("nan")
        loss = float(np.mean(window)) if window else float("nan")
        report.curve.append((state.step, acc, loss, pond))
        if on_record is not None:
            on_record(MetricsRecord(state.step, loss, acc, reps, pond, state.diverged))
        window.clear()

    while state.step < cfg.budget:
        batch = make_batch(spec, state.data_rng, cfg.batch)
        state.step += 1
        # non-finite values are caught below and latch the diverged flag
        with np.errstate(all="ignore"):
            res = compute_loss(model, batch)
            if not np.isfinite(res.loss.value).all():
                state.diverged = True
            else:
                window.append(res.loss.item())
                backward(res.loss, model.params)
                grads, _ = clip_grads(model.params.grads(), cfg.clip)
                ok = opt.update(model.params, grads) if opt else sgd_update(model.params, grads, cfg.lr)
                if not ok or not all(np.isfinite(t.value).all() for _, t in model.params.items()):
                    state.diverged = True
        if state.diverged:
            record(None)
            break
        if state.step % cfg.eval_interval == 0 or state.step == cfg.budget:
            ev = evaluate(model, spec, cfg.eval_batches, state.eval_rng, cfg.batch)
            state.eval_accuracy = ev.accuracy
            report.mean_repetitions = ev.mean_repetitions
            report.peak_accuracy = max(report.peak_accuracy, ev.accuracy)
            record(ev)
            if ev.accuracy >= cfg.solve_threshold:
                report.solved, report.steps_to_solve = True, state.step
                break
    report.diverged = state.diverged
    report.final_accuracy = state.eval_accuracy
    model.state = state
    return report
