"""Experiment configuration and profile defaults."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .adaptive import ActConfig, RepeatConfig
from .tasks import AdditionSpec, ParitySpec

TASKS = ("parity", "addition")
CELLS = ("rnn", "lstm")
WRAPPERS = ("none", "repeat", "act")
PROFILES = ("desk", "paper")
OPTIMIZERS = ("sgd", "adam")

DEFAULT_CELL = {"parity": "rnn", "addition": "lstm"}

# (hidden, budget, n_numbers, max_digits) per task and profile
PROFILE_DEFAULTS = {
    ("parity", "desk"): dict(hidden=128, budget=200_000),
    ("parity", "paper"): dict(hidden=128, budget=200_000),
    ("addition", "desk"): dict(hidden=128, budget=60_000, n_numbers=2, max_digits=2),
    ("addition", "paper"): dict(hidden=512, budget=1_200_000, n_numbers=5, max_digits=5),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str = "parity"
    cell: str | None = None
    wrapper: str = "none"
    rho: int | None = None
    tau: float | None = None
    epsilon: float = 0.01
    max_steps: int = 50
    hidden: int | None = None
    lr: float = 1e-3
    batch: int = 128
    seed: int = 0
    budget: int | None = None
    eval_interval: int = 1000
    eval_batches: int = 20
    clip: float | None = 1.0
    profile: str = "desk"
    optimizer: str = "sgd"
    n_numbers: int | None = None
    max_digits: int | None = None
    count_all_nonzero: bool = False
    parity_size: int = 64
    halt_bias: float = 1.0
    solve_threshold: float = 0.98

    def resolved(self) -> "ExperimentConfig":
        """Copy with profile defaults filled in; raises ConfigError if invalid."""
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}")
        if self.wrapper not in WRAPPERS:
            raise ConfigError(f"wrapper must be one of {WRAPPERS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        cfg = dataclasses.replace(self)
        for k, v in PROFILE_DEFAULTS[(cfg.task, cfg.profile)].items():
            if getattr(cfg, k) is None:
                setattr(cfg, k, v)
        if cfg.cell is None:
            cfg.cell = DEFAULT_CELL[cfg.task]
        if cfg.cell not in CELLS:
            raise ConfigError(f"cell must be one of {CELLS}")
        if cfg.wrapper == "repeat":
            if cfg.rho is None:
                raise ConfigError("wrapper=repeat requires rho")
            _wrap(lambda: RepeatConfig(cfg.rho))
        if cfg.wrapper == "act":
            if cfg.tau is None:
                raise ConfigError("wrapper=act requires tau")
            _wrap(lambda: ActConfig(cfg.tau, cfg.epsilon, cfg.max_steps))
        if cfg.clip is not None and cfg.clip <= 0:
            cfg.clip = None
        for name in ("hidden", "batch", "budget", "eval_interval", "eval_batches"):
            if getattr(cfg, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if cfg.parity_size < 1:
            raise ConfigError("parity_size must be positive")
        if cfg.lr < 0:
            raise ConfigError("lr must be non-negative")
        return cfg

    def task_spec(self):
        if self.task == "parity":
            return ParitySpec(self.parity_size, self.count_all_nonzero)
        return AdditionSpec(self.n_numbers, self.max_digits)

    @property
    def hyperparameter(self) -> str:
        if self.wrapper == "repeat":
            return f"rho={self.rho}"
        if self.wrapper == "act":
            return f"tau={self.tau:g}"
        return ""

    @property
    def model_name(self) -> str:
        base = self.cell.upper()
        return {"none": base, "repeat": f"Repeat-{base}", "act": f"ACT-{base}"}[self.wrapper]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _wrap(fn):
    try:
        return fn()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
