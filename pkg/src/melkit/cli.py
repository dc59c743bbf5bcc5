"""Command-line front end.

Subcommands: ``gen`` (synthetic dataset to CSV), ``train`` (strategy runs with
report/curve outputs), ``verify-theory`` (bound audits on random finite
problems), ``family`` (deployable ensemble enumeration under a budget), and
``simulate`` (failure-trace replay of a cluster scenario).

Exit codes: 0 on success, 1 on a failed verification / diverged training /
infeasible placement, 2 on bad usage or configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .data import COARSE, FINE, SyntheticSpec, gen_hierarchical, save_csv
from .ensemble import EnsembleSpec, SpecError, SubsetId, all_subsets
from .failover import PlacementError, ensemble_family, load_scenario, save_records_csv, simulate
from .genbounds import audit_random_instances
from .nn import LrSchedule
from .training import (
    ConfigError,
    MelWeights,
    TrainPlan,
    TrainingError,
    run_strategy,
    save_curves,
    save_report,
    STRATEGIES,
)

DEFAULT_P_VALUES = (0.0, 0.25, 0.5, 0.75, 1.0)


def thread_count() -> int:
    """Worker cap from MEL_THREADS; defaults to 1."""
    raw = os.environ.get("MEL_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ConfigError(f"MEL_THREADS must be a positive integer, got {raw!r}")
    return n


def _map_ordered(fn: Callable, items: Sequence) -> list:
    workers = thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def content_checksum(path: str | Path) -> str:
    """SHA-256 of a file's content; for JSON, the volatile timing block is dropped."""
    p = Path(path)
    if p.suffix == ".json":
        doc = json.loads(p.read_text())
        if isinstance(doc, dict):
            doc.pop("timing", None)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    else:
        blob = p.read_bytes()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class ExperimentConfig:
    """Parsed experiment file with defaults filled in."""

    synth: SyntheticSpec
    spec: EnsembleSpec
    weights: MelWeights
    plan: TrainPlan
    strategies: tuple[str, ...]
    seeds: tuple[int, ...]
    out_dir: Path
    family: dict


def _parse_subset_map(section: dict, cast: Callable) -> dict[SubsetId, object]:
    try:
        return {SubsetId.parse(k): cast(v) for k, v in section.items()}
    except ValueError as exc:
        raise ConfigError(f"bad subset key in config: {exc}") from exc


def _take(section: dict, allowed: Iterable[str], where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return section


def load_config(path: str | None) -> ExperimentConfig:
    """Read an experiment JSON file; every section is optional."""
    if path is None:
        raw: dict = {}
        base = Path.cwd()
    else:
        p = Path(path)
        try:
            raw = json.loads(p.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        base = p.parent
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    ds = _take(dict(raw.get("dataset", {})), ("coarse_classes", "fine_per_coarse", "dim", "samples_per_class", "spread_ratio", "seed"), "dataset")
    try:
        synth = SyntheticSpec(**ds)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset section: {exc}") from exc

    ens = _take(dict(raw.get("ensemble", {})), ("upstreams", "widths", "exit_hidden", "downstream_hidden"), "ensemble")
    m = int(ens.get("upstreams", 2))
    widths = tuple(int(w) for w in ens.get("widths", (16, 8)))
    exit_hidden = tuple(int(w) for w in ens.get("exit_hidden", ()))
    downstream_hidden = tuple(int(w) for w in ens.get("downstream_hidden", ()))

    granularity = _parse_subset_map(dict(raw.get("granularity", {})), str) or None
    if granularity is not None:
        for s, g in granularity.items():
            if g not in (FINE, COARSE):
                raise ConfigError(f"granularity for {s} must be '{FINE}' or '{COARSE}'")

    from .training import standard_spec

    spec = standard_spec(
        input_dim=synth.dim,
        num_fine=synth.num_fine,
        num_coarse=synth.coarse_classes,
        m=m,
        widths=widths,
        exit_hidden=exit_hidden,
        downstream_hidden=downstream_hidden,
        granularity=granularity,
    )

    if "weights" in raw:
        lam = {s: 0.0 for s in all_subsets(m)}
        lam.update(_parse_subset_map(dict(raw["weights"]), float))
    else:
        lam = {s: 1.0 for s in all_subsets(m)}
    gamma = _parse_subset_map(dict(raw.get("risk_targets", {})), float)
    weights = MelWeights(lam, gamma)

    pl = _take(
        dict(raw.get("plan", {})),
        ("epochs", "batch_size", "base_rate", "warmup_epochs", "min_rate", "fine_tune_epochs", "weight_decay", "seed"),
        "plan",
    )
    epochs = int(pl.get("epochs", 30))
    try:
        schedule = LrSchedule(
            base_rate=float(pl.get("base_rate", 0.005)),
            warmup_epochs=int(pl.get("warmup_epochs", 3)),
            total_epochs=epochs,
            min_rate=float(pl.get("min_rate", 1e-4)),
        )
        plan = TrainPlan(
            epochs=epochs,
            batch_size=int(pl.get("batch_size", 64)),
            schedule=schedule,
            fine_tune_epochs=int(pl.get("fine_tune_epochs", 5)),
            seed=int(pl.get("seed", 0)),
            granularity=granularity,
            weight_decay=float(pl.get("weight_decay", 0.01)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad plan section: {exc}") from exc

    strategies = tuple(raw.get("strategies", STRATEGIES))
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
    seeds = tuple(int(x) for x in raw.get("seeds", (0, 1, 2, 3, 4)))
    if not seeds:
        raise ConfigError("seeds list must not be empty")

    out_dir = base / str(raw.get("out_dir", "runs"))
    family = dict(raw.get("family", {}))
    return ExperimentConfig(synth, spec, weights, plan, strategies, seeds, out_dir, family)


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    synth = cfg.synth if args.seed is None else replace(cfg.synth, seed=args.seed)
    data = gen_hierarchical(synth)
    out = Path(args.out) if args.out else cfg.out_dir / "dataset.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(data, out)
    print(f"wrote {len(data)} samples ({synth.num_fine} fine / {synth.coarse_classes} coarse classes) to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    strategies = tuple(args.strategy) if args.strategy else cfg.strategies
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
    seeds = tuple(args.seed) if args.seed else cfg.seeds
    out_dir = Path(args.out) if args.out else cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    data = gen_hierarchical(cfg.synth)
    jobs = [(strategy, seed) for strategy in strategies for seed in seeds]

    def run(job: tuple[str, int]):
        strategy, seed = job
        return run_strategy(strategy, data, cfg.spec, cfg.weights, cfg.plan, seed)

    results = _map_ordered(run, jobs)
    summary = []
    for (strategy, seed), result in zip(jobs, results):
        report = result.report
        save_report(report, out_dir / f"report_{strategy}_seed{seed}.json")
        save_curves(report, out_dir / f"curves_{strategy}_seed{seed}.csv")
        summary.append(
            {
                "strategy": strategy,
                "seed": seed,
                "test_accuracy": {s.key(): report.test_accuracy[s] for s in sorted(report.test_accuracy, key=lambda x: (len(x.members), x.members))},
            }
        )
    if args.json:
        print(json.dumps({"out_dir": str(out_dir), "runs": summary}, indent=1, sort_keys=True))
    else:
        for row in summary:
            accs = " ".join(f"{k}={v:.4f}" for k, v in row["test_accuracy"].items())
            print(f"{row['strategy']:<10} seed={row['seed']} {accs}")
        print(f"reports and curves written to {out_dir}")
    return 0


def cmd_verify_theory(args: argparse.Namespace) -> int:
    p_values = tuple(args.p) if args.p else DEFAULT_P_VALUES
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"--p values must sit in [0, 1], got {p}")
    indices = list(range(args.count))

    def run(i: int):
        return audit_random_instances(1, seed=args.seed, start=i, p_values=p_values)[0]

    outcomes = _map_ordered(run, indices)
    max_residual = max((abs(o.residual) for o in outcomes), default=0.0)
    bad = [o for o in outcomes if not o.all_ok()]
    if args.json:
        doc = {
            "instances": args.count,
            "seed": args.seed,
            "p_values": list(p_values),
            "max_abs_residual": max_residual,
            "violations": len(bad),
            "reports": [
                {"index": o.index, "residual": o.residual, "checks": [r.to_json() for r in o.reports]}
                for o in outcomes
            ],
        }
        text = json.dumps(doc, indent=1, sort_keys=True)
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_text(text)
        else:
            print(text)
    else:
        print(f"instances checked: {args.count} at p in {list(p_values)}")
        print(f"max |identity residual|: {max_residual:.3e}")
        print(f"bound violations: {len(bad)}")
        print("PASS" if not bad else "FAIL")
    return 0 if not bad else 1


def cmd_family(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    fam = _take(
        dict(cfg.family),
        ("block_widths", "options", "num_upstreams", "input_dim", "num_classes"),
        "family",
    )
    block_widths = tuple(int(w) for w in fam.get("block_widths", (16, 16, 8)))
    options = [(str(tag), tuple(int(w) for w in hidden)) for tag, hidden in fam.get("options", [["concat", []], ["hidden32", [32]]])]
    entries = ensemble_family(
        block_widths,
        options,
        budget=args.budget,
        num_upstreams=int(fam.get("num_upstreams", 2)),
        input_dim=int(fam.get("input_dim", 16)),
        num_classes=int(fam.get("num_classes", 16)),
    )
    if args.json:
        print(json.dumps([e.__dict__ for e in entries], indent=1))
    else:
        print(f"{'blocks':>6} {'option':<10} {'demand':>8} feasible")
        for e in entries:
            print(f"{e.blocks:>6} {e.option:<10} {e.demand:>8} {'yes' if e.feasible else 'no'}")
        feasible = sum(1 for e in entries if e.feasible)
        print(f"{feasible}/{len(entries)} candidates fit budget {args.budget}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config)
    if args.policy:
        scenario.placement_policy = args.policy
    result = simulate(scenario)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_records_csv(result.records, out_dir / "requests.csv")
        (out_dir / "summary.json").write_text(json.dumps(result.summary, indent=1, sort_keys=True))
    if args.json:
        print(json.dumps(result.summary, indent=1, sort_keys=True))
    else:
        s = result.summary
        print(f"served {s['served']}/{s['requests']} requests ({s['served_fraction']:.1%})")
        if s["ensemble_latency_ms"]["mean"] is not None:
            print(f"ensemble latency: mean {s['ensemble_latency_ms']['mean']:.3f} ms, max {s['ensemble_latency_ms']['max']:.3f} ms")
        print(f"split-baseline latency: {s['split_latency_ms']:.3f} ms")
        for key, count in s["subset_usage"].items():
            print(f"  subset {{{key.replace('+', ',')}}}: {count} requests")
        if args.out:
            print(f"records and summary written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="melkit", description="Multi-level ensemble toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic hierarchical dataset as CSV")
    p.add_argument("--config", help="experiment JSON file")
    p.add_argument("--seed", type=int, help="override the dataset seed")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train strategies and write reports/curves")
    p.add_argument("--config", help="experiment JSON file")
    p.add_argument("--strategy", action="append", choices=STRATEGIES, help="strategy to run (repeatable)")
    p.add_argument("--seed", action="append", type=int, help="seed to run (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--json", action="store_true", help="print a JSON summary")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify-theory", help="audit identity and bounds on random finite problems")
    p.add_argument("--count", type=int, default=100, help="number of random instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", action="append", type=float, help="mixing weight (repeatable)")
    p.add_argument("--json", action="store_true", help="emit full reports as JSON")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("family", help="enumerate deployable ensembles under a parameter budget")
    p.add_argument("--budget", type=float, required=True, help="parameter budget")
    p.add_argument("--config", help="experiment JSON file with a family section")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_family)

    p = sub.add_parser("simulate", help="replay a failure scenario")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--out", help="directory for requests.csv and summary.json")
    p.add_argument("--policy", choices=("best-fit", "worst-fit"), help="auto-placement policy override")
    p.add_argument("--json", action="store_true", help="print the summary as JSON")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrainingError, PlacementError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, SpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
