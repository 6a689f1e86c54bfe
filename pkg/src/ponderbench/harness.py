"""Command-line harness: single runs, sweeps, CSV summaries, accuracy plots.

Every run directory holds ``config.json`` (fully resolved), ``metrics.jsonl``
(one record per evaluation) and ``report.json``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from .config import CELLS, OPTIMIZERS, PROFILES, TASKS, WRAPPERS, ConfigError, ExperimentConfig
from .training import MetricsRecord, TrainReport, train_run

OUT_ENV = "PONDERBENCH_OUT"
SUMMARY_COLUMNS = ("model", "wrapper", "hyperparameter", "solved", "training_steps", "average_repetitions")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


class UsageError(Exception):
    pass


def _finite_or_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def emit_metrics(record: MetricsRecord, stream: TextIO) -> None:
    row = {k: _finite_or_none(v) for k, v in dataclasses.asdict(record).items()}
    stream.write(json.dumps(row) + "\n")
    stream.flush()


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def run_experiment(cfg: ExperimentConfig, out_dir) -> TrainReport:
    """Train one config, writing config.json, metrics.jsonl and report.json."""
    cfg = cfg.resolved()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "metrics.jsonl", "w") as fh:
        report = train_run(cfg, on_record=lambda r: emit_metrics(r, fh))
    doc = {"config": cfg.to_dict(), "task": cfg.task, "model": cfg.model_name, "wrapper": cfg.wrapper,
           "hyperparameter": cfg.hyperparameter, **report.to_dict()}
    doc["curve"] = [[_finite_or_none(v) for v in row] for row in doc["curve"]]
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return report


def _run_job(args):
    cfg, out = args
    report = run_experiment(cfg, out)
    return str(out), report.solved, report.diverged


# ---------------------------------------------------------------------------
# summaries


def _hyper_value(doc: dict) -> float:
    cfg = doc.get("config", {})
    if doc.get("wrapper") == "repeat":
        return float(cfg.get("rho") or 0)
    if doc.get("wrapper") == "act":
        return -float(cfg.get("tau") or 0)  # large penalties first
    return 0.0


def export_summary(reports: Sequence[dict]) -> str:
    """CSV with one row per run report, ordered by task, wrapper, hyperparameter."""
    order = {w: i for i, w in enumerate(WRAPPERS)}
    rows = sorted(reports, key=lambda d: (d.get("task", ""), order.get(d.get("wrapper"), 9),
                                          _hyper_value(d), d.get("config", {}).get("seed", 0)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for d in rows:
        digits = 3 if d.get("wrapper") == "act" else 2
        steps = d.get("steps_to_solve")
        w.writerow([d.get("model", ""), d.get("wrapper", ""), d.get("hyperparameter", ""),
                    "yes" if d.get("solved") else "no", "" if steps is None else steps,
                    f"{d.get('mean_repetitions', 1.0):.{digits}f}"])
    return buf.getvalue()


def collect_reports(paths: Iterable) -> list[dict]:
    docs = []
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise UsageError(f"no such path: {p}")
        files = [p] if p.is_file() else sorted(p.rglob("report.json"))
        docs.extend(json.loads(f.read_text()) for f in files)
    return docs


def _series_label(metrics_path: Path) -> tuple[str, dict]:
    cfg_path = metrics_path.parent / "config.json"
    if cfg_path.exists():
        cfg = json.loads(cfg_path.read_text())
        if cfg.get("wrapper") == "repeat":
            return f"ρ={cfg['rho']}", cfg
        if cfg.get("wrapper") == "act":
            return f"τ={cfg['tau']:g}", cfg
        return f"{cfg.get('cell', 'plain')} (ρ=1)", cfg
    return metrics_path.parent.name or metrics_path.stem, {}


def plot_curves(metrics_files: Sequence, out_path, title: str | None = None) -> Path:
    """Accuracy-vs-step line chart as SVG; adds a ponder panel when any run is ACT."""
    if not metrics_files:
        raise UsageError("plot needs at least one metrics file")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = []
    for f in metrics_files:
        f = Path(f)
        if f.is_dir():
            f = f / "metrics.jsonl"
        label, cfg = _series_label(f)
        series.append((label, cfg, read_metrics(f)))
    has_act = any(cfg.get("wrapper") == "act" for _, cfg, _ in series)
    with matplotlib.rc_context({"svg.hashsalt": "ponderbench", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(2 if has_act else 1, 1, figsize=(7, 6 if has_act else 4), sharex=True,
                                 squeeze=False)
        ax = axes[0, 0]
        for label, _, rows in series:
            ax.plot([r["step"] for r in rows], [r["eval_accuracy"] for r in rows], label=label)
        ax.set_ylabel("accuracy")
        ax.set_ylim(0.0, 1.02)
        ax.legend(loc="lower right")
        if title:
            ax.set_title(title)
        if has_act:
            pax = axes[1, 0]
            for label, cfg, rows in series:
                if cfg.get("wrapper") == "act":
                    pax.plot([r["step"] for r in rows], [r["mean_ponder"] for r in rows], label=label)
            pax.set_ylabel("ponder cost")
            pax.legend(loc="upper right")
        axes[-1, 0].set_xlabel("training step")
        fig.tight_layout()
        out = Path(out_path)
        fig.savefig(out, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return out


# ---------------------------------------------------------------------------
# self test


def selftest(stream: TextIO = sys.stdout) -> bool:
    import numpy as np

    from .adaptive import ActConfig, act_rollout, ponder_loss, repeat_expand, repeat_rollout
    from .autodiff import ParamStore, Tensor, grad_check, total, mul
    from .cells import init_linear, init_lstm, init_rnn, lstm_step, readout, rnn_step, zero_state
    from .tasks import addition_oracle, decode_number, encode_number

    rng = np.random.default_rng(0)
    ok = True

    def line(name, passed, detail=""):
        nonlocal ok
        ok &= bool(passed)
        stream.write(f"{'PASS' if passed else 'FAIL'} {name} {detail}\n")

    seq = [Tensor(rng.normal(size=3)) for _ in range(2)]
    for kind in ("rnn", "lstm"):
        ps = ParamStore()
        cell = (init_rnn if kind == "rnn" else init_lstm)(ps, "cell", 4, 4, rng)
        head = init_linear(ps, "head", 4, 1, rng)
        step = rnn_step if kind == "rnn" else lstm_step
        halt = init_linear(ps, "halt", 4, 1, rng, bias=-0.5)

        def f_rep():
            st = repeat_rollout(step, cell, seq, 3)
            return total(readout(head, st[-1]))

        def f_act():
            st, tr = act_rollout(step, cell, halt, seq, ActConfig(0.01))
            return total(readout(head, st[-1])) + ponder_loss(tr, 0.01)

        e1 = grad_check(f_rep, ps, names=[n for n, _ in ps.items() if not n.startswith("halt")])
        e2 = grad_check(f_act, ps)
        line(f"grad_check repeat {kind}", e1 < 1e-4, f"{e1:.2e}")
        line(f"grad_check act {kind}", e2 < 1e-4, f"{e2:.2e}")

    ps = ParamStore()
    cell = init_rnn(ps, "cell", 4, 5, rng)
    same = True
    for _ in range(20):
        rho = int(rng.integers(1, 9))
        s = [Tensor(rng.normal(size=3)) for _ in range(int(rng.integers(1, 5)))]
        a = repeat_rollout(rnn_step, cell, s, rho)
        st, bare = zero_state(5, False), []
        for x in repeat_expand(s, rho):
            st = rnn_step(cell, st, x)
            bare.append(st)
        same &= all(np.array_equal(e.h.value, b.h.value) for e, b in zip(a, bare[rho - 1::rho]))
    line("expansion equivalence", same)

    agree = True
    for _ in range(1000):
        vals = [int(rng.integers(0, 10 ** int(rng.integers(1, 6)))) for _ in range(5)]
        want = [[int(c) for c in reversed(str(s))] for s in np.cumsum(vals).tolist()]
        got = addition_oracle(vals)
        agree &= all(list(row[:len(w)]) == w and all(c == 10 for c in row[len(w):]) for row, w in zip(got, want))
    line("addition oracle", agree)
    rt = all(decode_number(encode_number(v, len(str(v)))) == v for v in range(0, 100000, 7))
    line("encode/decode round trip", rt)
    return ok


# ---------------------------------------------------------------------------
# command line


def _csv_list(kind):
    def parse(text):
        return [kind(t) for t in text.split(",") if t.strip()]
    return parse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser, sweep: bool) -> None:
    p.add_argument("--config", help="JSON file of config values")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--cell", choices=CELLS)
    p.add_argument("--wrapper", choices=WRAPPERS)
    p.add_argument("--rho", type=_csv_list(int) if sweep else int)
    p.add_argument("--tau", type=_csv_list(float) if sweep else float)
    p.add_argument("--seed", type=_csv_list(int) if sweep else int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--eval-interval", type=int, dest="eval_interval")
    p.add_argument("--eval-batches", type=int, dest="eval_batches")
    p.add_argument("--clip", type=float, help="global gradient-norm limit; 0 disables")
    p.add_argument("--no-clip", action="store_const", const=0.0, dest="clip")
    p.add_argument("--profile", choices=PROFILES)
    p.add_argument("--optimizer", choices=OPTIMIZERS)
    p.add_argument("--n-numbers", type=int, dest="n_numbers")
    p.add_argument("--max-digits", type=int, dest="max_digits")
    p.add_argument("--count-all-nonzero", action="store_const", const=True, dest="count_all_nonzero")
    p.add_argument("--parity-size", type=int, dest="parity_size")
    p.add_argument("--halt-bias", type=float, dest="halt_bias")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./runs)")
    if sweep:
        p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ponderbench")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_config_flags(sub.add_parser("run", help="train one configuration"), sweep=False)
    _add_config_flags(sub.add_parser("sweep", help="train a grid over rho, tau and seed"), sweep=True)
    rep = sub.add_parser("report", help="write summary.csv from run directories")
    rep.add_argument("paths", nargs="+")
    rep.add_argument("--out", default=None)
    plot = sub.add_parser("plot", help="accuracy curves as SVG")
    plot.add_argument("paths", nargs="+")
    plot.add_argument("--out", default=None)
    plot.add_argument("--title", default=None)
    sub.add_parser("selftest", help="gradient checks and oracle equivalence")
    return parser


CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def resolve_config(args: argparse.Namespace, overrides: dict | None = None) -> ExperimentConfig:
    """Flags override the config file, which overrides profile defaults."""
    values: dict = {}
    if getattr(args, "config", None):
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
    for k, v in vars(args).items():
        if k in CONFIG_FIELDS and v is not None:
            values[k] = v
    values.update(overrides or {})
    return ExperimentConfig.from_dict(values).resolved()


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "runs")


def _cmd_run(args) -> int:
    cfg = resolve_config(args)
    report = run_experiment(cfg, _out_root(args))
    print(json.dumps({"solved": report.solved, "steps_to_solve": report.steps_to_solve,
                      "mean_repetitions": report.mean_repetitions, "diverged": report.diverged}))
    return EXIT_DIVERGED if report.diverged and not report.solved else EXIT_OK


def _cmd_sweep(args) -> int:
    grid = []
    rhos = args.rho or [None]
    taus = args.tau or [None]
    seeds = args.seed or [None]
    root = _out_root(args)
    for rho in rhos:
        for tau in taus:
            for seed in seeds:
                over = {"rho": rho, "tau": tau, "seed": seed}
                over = {k: v for k, v in over.items() if v is not None}
                base = argparse.Namespace(**{k: v for k, v in vars(args).items() if k not in ("rho", "tau", "seed")})
                cfg = resolve_config(base, over)
                name = "_".join(f"{k}{v:g}" if isinstance(v, float) else f"{k}{v}" for k, v in sorted(over.items()))
                grid.append((cfg, root / (name or "run")))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_job, grid))
    else:
        results = [_run_job(job) for job in grid]
    (root / "summary.csv").write_text(export_summary(collect_reports([root])))
    for out, solved, diverged in results:
        print(f"{out}: solved={solved} diverged={diverged}")
    return EXIT_DIVERGED if any(d and not s for _, s, d in results) else EXIT_OK


def _cmd_report(args) -> int:
    docs = collect_reports(args.paths)
    if not docs:
        raise UsageError("no report.json found")
    text = export_summary(docs)
    out = Path(args.out) if args.out else Path(args.paths[0]) / "summary.csv"
    if out.is_dir():
        out = out / "summary.csv"
    out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_plot(args) -> int:
    files = []
    for p in args.paths:
        p = Path(p)
        if not p.exists():
            raise UsageError(f"no such path: {p}")
        files.extend(sorted(p.rglob("metrics.jsonl")) if p.is_dir() else [p])
    if not files:
        raise UsageError("no metrics files found")
    out = Path(args.out) if args.out else Path(args.paths[0]) / "curves.svg"
    if out.is_dir():
        out = out / "curves.svg"
    plot_curves(files, out, args.title)
    print(out)
    return EXIT_OK


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "plot":
            return _cmd_plot(args)
        return EXIT_OK if selftest() else EXIT_CONFIG
    except (UsageError, ConfigError) as exc:
        sys.stderr.write(f"{exc}\n")
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
