"""Command-line front end: ``netsched {simulate,bounds,compare,sweep}``."""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bounds import AssumptionError, SchemeChoice, choose_scheme
from .dynamics import SystemModel
from .report import emit_summary_csv, emit_trace_csv, fmt
from .scenario import ScenarioError, parse_scenario
from .simulator import (
    ScenarioConfig,
    SimulationError,
    SimulationTrace,
    aggregate_replicates,
    mean_quadratic_error,
    realize_models,
    run_replicates,
    run_simulation,
)
from .types import Policy

__all__ = ["CompareReport", "RunRequest", "compare_command", "default_windows", "main", "worker_count"]

POLICIES = (Policy.PERIODIC, Policy.PREDICTIVE, Policy.ADAPTIVE)


@dataclass(frozen=True)
class RunRequest:
    subcommand: str
    scenario: Path
    out: Path | None = None
    seed: int | None = None
    policy: Policy | None = None
    replicates: int | None = None

    def load(self) -> ScenarioConfig:
        if not self.scenario.is_file():
            raise FileNotFoundError(f"scenario file not found: {self.scenario}")
        return self.apply(parse_scenario(self.scenario.read_bytes()))

    def apply(self, config: ScenarioConfig) -> ScenarioConfig:
        if self.seed is not None:
            config = replace(config, seed=self.seed)
        if self.policy is not None:
            config = config.with_policy(self.policy)
        if self.replicates is not None:
            config = replace(config, replicates=self.replicates)
        return config


def worker_count() -> int:
    """Parallelism cap from ``NETSCHED_THREADS``, defaulting to the available cores."""
    raw = os.environ.get("NETSCHED_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"NETSCHED_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"NETSCHED_THREADS must be a positive integer, got {raw!r}")
    return n


def default_windows(config: ScenarioConfig, settle: int = 20) -> list[tuple[int, int]]:
    """Split the horizon at event steps, skipping ``settle`` steps after each event."""
    cuts = sorted({ev.step for ev in config.events if 0 < ev.step < config.horizon})
    bounds = [0, *cuts, config.horizon]
    windows = []
    for j, (start, stop) in enumerate(zip(bounds, bounds[1:])):
        start = start + settle if j > 0 else start
        if start < stop:
            windows.append((start, stop))
    return windows or [(0, config.horizon)]


@dataclass
class CompareReport:
    """Window means per policy (averaged over seeds) and the adaptive decisions per seed."""

    seeds: tuple[int, ...]
    windows: list[tuple[int, int]]
    per_seed: dict[Policy, np.ndarray]  # (n_seeds, n_windows)
    decisions: dict[int, list[tuple[int, SchemeChoice]]] = field(default_factory=dict)

    def mean(self, policy: Policy | str) -> np.ndarray:
        return self.per_seed[Policy(policy)].mean(axis=0)

    def stderr(self, policy: Policy | str) -> np.ndarray:
        vals = self.per_seed[Policy(policy)]
        if len(vals) < 2:
            return np.zeros(vals.shape[1])
        return vals.std(axis=0, ddof=1) / np.sqrt(len(vals))

    def window_rows(self) -> list[list[str]]:
        rows = [["window_start", "window_stop", *(f"{p.value}" for p in POLICIES), *(f"{p.value}_stderr" for p in POLICIES)]]
        means = [self.mean(p) for p in POLICIES]
        errs = [self.stderr(p) for p in POLICIES]
        for w, (start, stop) in enumerate(self.windows):
            rows.append([str(start), str(stop), *(fmt(m[w]) for m in means), *(fmt(e[w]) for e in errs)])
        return rows

    def decision_rows(self) -> list[list[str]]:
        rows = [["seed", "step", "periodic_bound", "predictive_bound", "chosen"]]
        for seed in self.seeds:
            for step, choice in self.decisions.get(seed, []):
                rows.append(
                    [
                        str(seed),
                        str(step),
                        fmt(choice.periodic_bound_value),
                        fmt(choice.predictive_bound_value),
                        choice.chosen.value,
                    ]
                )
        return rows


def compare_command(
    config: ScenarioConfig,
    seeds: Sequence[int],
    windows: Sequence[tuple[int, int]] | None = None,
    threads: int | None = None,
) -> CompareReport:
    """Run all three policies with each master seed (one replicate each) on shared noise streams."""
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("compare needs at least one seed")
    windows = list(windows) if windows is not None else default_windows(config)
    jobs = [(p, s) for p in POLICIES for s in seeds]

    def run(job: tuple[Policy, int]) -> SimulationTrace:
        policy, seed = job
        return run_simulation(replace(config.with_policy(policy), seed=seed, replicates=1))

    with ThreadPoolExecutor(max_workers=threads or worker_count()) as pool:
        traces = dict(zip(jobs, pool.map(run, jobs)))
    per_seed = {
        p: np.array([[mean_quadratic_error(traces[p, s], w) for w in windows] for s in seeds]) for p in POLICIES
    }
    decisions = {s: traces[Policy.ADAPTIVE, s].decisions for s in seeds}
    return CompareReport(seeds, windows, per_seed, decisions)


def _write_rows(rows: list[list[str]], path: Path) -> None:
    path.write_text("".join(",".join(r) + "\n" for r in rows), encoding="utf-8")


def _print_table(rows: list[list[str]], out) -> None:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    for r in rows:
        print("  ".join(v.rjust(w) for v, w in zip(r, widths)), file=out)


def _out_dir(path: Path | None) -> Path:
    path = path or Path(".")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror}") from exc
    return path


def _cmd_simulate(req: RunRequest, out) -> None:
    config = req.load()
    traces = run_replicates(config)
    dest = _out_dir(req.out)
    if len(traces) == 1:
        emit_trace_csv(traces[0], dest / "trace.csv")
        emit_summary_csv(traces[0].mean_error_sq, dest / "summary.csv")
    else:
        width = len(str(len(traces) - 1))
        for tr in traces:
            emit_trace_csv(tr, dest / f"trace_{tr.replicate:0{width}d}.csv")
        mean, err = aggregate_replicates(traces)
        emit_summary_csv(mean, dest / "summary.csv", err)
    mean, _ = aggregate_replicates(traces)
    print(f"{config.name or req.scenario.stem}: policy={config.policy.value} seed={config.seed} "
          f"replicates={len(traces)} mean_error_sq={fmt(mean.mean())}", file=out)
    for step, choice in traces[0].decisions:
        print(f"decision step={step} chosen={choice.chosen.value} periodic_bound={fmt(choice.periodic_bound_value)} "
              f"predictive_bound={fmt(choice.predictive_bound_value)}", file=out)
    print(f"wrote {dest}", file=out)


def _cmd_bounds(req: RunRequest, out) -> None:
    """Bound values for the replicate-0 realization at k=0 and after each event."""
    config = req.load()
    a_mats, _ = realize_models(config, 0)
    a = [m.copy() for m in a_mats]
    covs = [spec.noise.cov for spec in config.agents]
    rows = [["step", "periodic_bound", "predictive_bound", "chosen"]]
    steps = [0] + sorted({ev.step for ev in config.events})
    for step in steps:
        for ev in config.events:
            if ev.step != step:
                continue
            for i in ev.agents:
                if ev.noise is not None:
                    covs[i - 1] = ev.noise.cov
                if ev.estimate is not None:
                    a[i - 1] = ev.estimate
        models = [SystemModel(ai, ci) for ai, ci in zip(a, covs)]
        choice = choose_scheme(models, config.delta, config.budget, config.inclusive_bound)
        rows.append([str(step), fmt(choice.periodic_bound_value), fmt(choice.predictive_bound_value), choice.chosen.value])
    _print_table(rows, out)


def _cmd_compare(req: RunRequest, seeds: list[int], settle: int, out) -> None:
    config = req.load()
    report = compare_command(config, seeds, default_windows(config, settle))
    _print_table(report.window_rows(), out)
    print(file=out)
    _print_table(report.decision_rows(), out)
    if req.out is not None:
        dest = _out_dir(req.out)
        _write_rows(report.window_rows(), dest / "compare.csv")
        _write_rows(report.decision_rows(), dest / "decisions.csv")


def _set_path(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ScenarioError(dotted, "no such field in the scenario document")
        node = node[key]
    if not isinstance(node, dict):
        raise ScenarioError(dotted, "no such field in the scenario document")
    node[keys[-1]] = value


def _cmd_sweep(req: RunRequest, param: str, values: list[str], out) -> None:
    if not req.scenario.is_file():
        raise FileNotFoundError(f"scenario file not found: {req.scenario}")
    base = json.loads(req.scenario.read_bytes())
    parsed = [_json_or_text(v) for v in values]
    if param == "budget.k_per":
        # k_per and k_total move together
        param_pairs = [[("budget.k_per", v), ("budget.k_total", v)] for v in parsed]
    else:
        param_pairs = [[(param, v)] for v in parsed]

    def run(pairs):
        doc = copy.deepcopy(base)
        for path, v in pairs:
            _set_path(doc, path, v)
        cfg = req.apply(parse_scenario(doc))
        traces = run_replicates(cfg)
        per_rep = np.array([mean_quadratic_error(t) for t in traces])
        err = per_rep.std(ddof=1) / np.sqrt(len(per_rep)) if len(per_rep) > 1 else 0.0
        return cfg.policy.value, per_rep.mean(), err

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run, param_pairs))
    rows = [["param", "value", "policy", "mean_error_sq", "stderr"]]
    for raw, (policy, mean, err) in zip(values, results):
        rows.append([param, raw, policy, fmt(mean), fmt(err)])
    _print_table(rows, out)
    if req.out is not None:
        _write_rows(rows, _out_dir(req.out) / "sweep.csv")


def _json_or_text(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="netsched", description="Slot scheduling for remote state estimation.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(p, out=True):
        p.add_argument("--config", required=True, type=Path, help="scenario JSON file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--policy", choices=[p.value for p in Policy], help="override the policy")
        p.add_argument("--replicates", type=int, help="override the replicate count")
        if out:
            p.add_argument("--out", type=Path, help="output directory")

    common(sub.add_parser("simulate", help="run the scenario and write CSV traces"))
    common(sub.add_parser("bounds", help="print both bounds and the scheme choice"), out=False)
    p = sub.add_parser("compare", help="run all three policies over a list of seeds")
    common(p)
    p.add_argument("--seeds", required=True, type=_int_list, help="comma-separated master seeds")
    p.add_argument("--settle", type=int, default=20, help="steps skipped after each event")
    p = sub.add_parser("sweep", help="vary one scenario field")
    common(p)
    p.add_argument("--param", required=True, help="dotted field path, e.g. delta or budget.k_pred")
    p.add_argument("--values", required=True, help="comma-separated JSON values")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = sys.stdout
    try:
        if args.replicates is not None and args.replicates < 1:
            raise ValueError("--replicates must be positive")
        req = RunRequest(
            args.subcommand,
            args.config,
            getattr(args, "out", None),
            args.seed,
            Policy(args.policy) if args.policy else None,
            args.replicates,
        )
        if args.subcommand == "simulate":
            _cmd_simulate(req, out)
        elif args.subcommand == "bounds":
            _cmd_bounds(req, out)
        elif args.subcommand == "compare":
            _cmd_compare(req, args.seeds, args.settle, out)
        else:
            _cmd_sweep(req, args.param, args.values.split(","), out)
    except (ScenarioError, AssumptionError, SimulationError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
