"""Command-line experiment runner.

Subcommands: ``run``, ``toy``, ``compare``, ``partition``. Exit status is 0 on
success, 2 for config/usage errors and 3 for numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import (
    build_experiment,
    load_config,
    load_datasets,
    partition_spec,
)
from .data import FormatError, PartitionError, label_histograms, partition
from .objectives import (
    SumObjective,
    three_client_quadratics,
    two_client_quadratics,
)
from .penalties import PenaltyConfig
from .simulator import ClientSpec, ConfigError, History, SimConfig, rounds_to_target, run_experiment
from .strategies import DivergenceError, LocalPlan, ServerRule

log = logging.getLogger("fedcos")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

# Local steps long enough for each client to nearly reach its own optimum.
TOY_ETA, TOY_STEPS = 0.25, 80


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def _resolve(args, path) -> dict:
    cfg = load_config(path)
    if getattr(args, "seed", None) is not None:
        cfg["experiment"]["root_seed"] = args.seed
    if getattr(args, "eval_every", None) is not None:
        if args.eval_every < 1:
            raise ConfigError("sim.eval_every", "must be positive")
        cfg["sim"]["eval_every"] = args.eval_every
    return cfg


def _summary(hist: History, cfg: dict, with_time: bool) -> dict:
    summary = {
        "type": "summary",
        "best_accuracy": hist.best_accuracy(),
        "last_accuracy": hist.last_accuracy(),
        "last_loss": hist.records[-1].eval_loss if hist.records else None,
        "rounds": len(hist.records),
        "partition": hist.metadata.get("partition"),
        "config": cfg,
        "version": __version__,
    }
    if with_time:
        summary["wall_time_s"] = hist.metadata["wall_time_s"]
    return summary


def run_config(cfg: dict, out, workers: int = 1, with_time: bool = False) -> History:
    """Run one resolved config, streaming one JSON line per round to ``out``."""
    exp = build_experiment(cfg, workers=workers)

    def emit(rec):
        out.write(_dump({"type": "round", **rec.to_dict()}) + "\n")
        out.flush()

    hist = run_experiment(exp.sim, on_round=emit if out is not None else None)
    if out is not None:
        out.write(_dump(_summary(hist, cfg, with_time)) + "\n")
    return hist


def cmd_run(args) -> int:
    cfg = _resolve(args, args.config)
    with open(args.out, "w") as out:
        hist = run_config(cfg, out, args.workers, args.record_time)
    if args.figures:
        from .plotting import plot_run
        for p in plot_run(hist, args.figures, cfg["experiment"]["name"]):
            log.info("wrote %s", p)
    return EXIT_OK


def parse_method(spec: str) -> tuple[PenaltyConfig, ServerRule]:
    """Parse ``fedavg``, ``fedcos:0.02``, ``fedprox:0.1+fedcos:0.02`` and similar."""
    mu_cos = mu_prox = 0.0
    rule = ServerRule()
    bases = 0
    for token in spec.split("+"):
        name, _, raw = token.strip().partition(":")
        try:
            value = float(raw) if raw else None
        except ValueError:
            raise UsageError(f"bad number in method spec {token!r}") from None
        if name == "fedcos":
            mu_cos = 0.02 if value is None else value
            continue
        bases += 1
        if name == "fedavg" and value is None:
            pass
        elif name == "fedprox":
            mu_prox = 0.1 if value is None else value
        elif name == "fedavgm":
            rule = ServerRule("momentum", beta=0.5 if value is None else value)
        elif name == "fedopt":
            rule = ServerRule("scaled", eta_g=1.5 if value is None else value)
        else:
            raise UsageError(f"unknown method {token!r}")
    if bases > 1:
        raise UsageError(f"method spec {spec!r} names more than one base method")
    try:
        return PenaltyConfig(mu_cos, mu_prox), rule
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def toy_history(variant: str, method: str, rounds: int, eta: float = TOY_ETA,
                steps: int = TOY_STEPS) -> History:
    if variant == "two_client":
        parts = two_client_quadratics()
    elif variant == "three_client":
        parts = three_client_quadratics()
    else:
        raise UsageError(f"unknown toy variant {variant!r}")
    penalties, rule = parse_method(method)
    sim = SimConfig(clients=[ClientSpec(p) for p in parts], rounds=rounds,
                    plan=LocalPlan(eta, steps, 1, penalties), eval_objective=SumObjective(parts),
                    rule=rule, x0=parts[0].start, keep_models=True)
    return run_experiment(sim)


def cmd_toy(args) -> int:
    if args.rounds < 1:
        raise UsageError("--rounds must be positive")
    hist = toy_history(args.variant, args.method, args.rounds, args.eta, args.steps)
    # Row r is the global model broadcast at the start of round r + 1.
    with open(args.out, "w") as out:
        out.write("round,x0,x1\n")
        for r, x in enumerate(hist.models[:args.rounds]):
            out.write(f"{r},{float(x[0])!r},{float(x[1])!r}\n")
    if args.figures:
        from .plotting import plot_toy
        log.info("wrote %s", plot_toy({args.method: hist}, args.variant, args.figures))
    return EXIT_OK


def compare_configs(cfgs: Sequence[dict], names: Sequence[str], target: Optional[float],
                    workers: int = 1) -> tuple[dict, list[History]]:
    """Run every config and report rounds-to-target against the first one."""
    ref = cfgs[0]
    for name, cfg in zip(names[1:], cfgs[1:]):
        for section in ("data", "model"):
            if cfg[section] != ref[section]:
                raise ConfigError(section, f"{name} differs from {names[0]} in [{section}]")
    hists = [run_config(cfg, None, workers) for cfg in cfgs]
    source = "explicit"
    if target is None:
        target = hists[0].best_accuracy()
        source = "best-of-first"
    rows = []
    first = rounds_to_target(hists[0], target) if target is not None else None
    for name, cfg, hist in zip(names, cfgs, hists):
        r = rounds_to_target(hist, target) if target is not None else None
        rows.append({
            "name": cfg["experiment"]["name"],
            "config": name,
            "best_accuracy": hist.best_accuracy(),
            "last_accuracy": hist.last_accuracy(),
            "rounds_to_target": r,
            "rounds_cap": cfg["experiment"]["rounds"],
            "ratio_vs_first": (r / first) if (r is not None and first) else None,
        })
    return {"type": "compare", "target": target, "target_source": source, "methods": rows}, hists


def cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise UsageError("compare needs at least two --config files")
    cfgs = [_resolve(args, p) for p in args.config]
    target = None
    if args.target != "best-of-first":
        try:
            target = float(args.target)
        except ValueError:
            raise UsageError(f"--target must be a number or best-of-first, got {args.target!r}")
        if not 0.0 <= target <= 1.0:
            raise UsageError("--target must lie in [0, 1]")
    report, hists = compare_configs(cfgs, [str(p) for p in args.config], target, args.workers)
    Path(args.out).write_text(_dump(report) + "\n")
    if args.figures:
        from .plotting import plot_compare
        for p in plot_compare(report, hists, args.figures):
            log.info("wrote %s", p)
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = _resolve(args, args.config)
    if cfg["model"]["kind"] == "quadratic":
        raise ConfigError("model.kind", "quadratic scenes have no data to partition")
    train, _ = load_datasets(cfg)
    split = partition(train, partition_spec(cfg))
    report = {
        "scheme": cfg["data"]["partition"],
        "n_clients": len(split),
        "label_aligned": split.label_aligned,
        "dropped": len(train) - sum(split.sizes()),
        "sizes": split.sizes(),
        "histograms": label_histograms(train, split),
    }
    print(_dump(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedcos", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi=False):
        if multi:
            sp.add_argument("--config", action="append", required=True, type=Path)
        else:
            sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int, help="override experiment.root_seed")
        sp.add_argument("--workers", type=int, default=1, help="client worker threads")
        sp.add_argument("--eval-every", type=int, dest="eval_every")

    run = sub.add_parser("run", help="run one experiment, JSON lines per round")
    common(run)
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--figures", type=Path, help="also render PNG figures into this directory")
    run.add_argument("--record-time", action="store_true",
                     help="include wall time in the summary (breaks byte-identical reruns)")
    run.set_defaults(func=cmd_run)

    toy = sub.add_parser("toy", help="quadratic toy scene, CSV trajectory of the global model")
    toy.add_argument("--variant", default="two_client")
    toy.add_argument("--method", default="fedavg",
                     help="e.g. fedavg, fedcos:0.02, fedprox:0.1, fedopt:1.5+fedcos:0.02")
    toy.add_argument("--rounds", type=int, default=80)
    toy.add_argument("--eta", type=float, default=TOY_ETA)
    toy.add_argument("--steps", type=int, default=TOY_STEPS, help="local steps per round")
    toy.add_argument("--out", required=True, type=Path)
    toy.add_argument("--figures", type=Path)
    toy.set_defaults(func=cmd_toy)

    cmp_ = sub.add_parser("compare", help="rounds-to-target across methods")
    common(cmp_, multi=True)
    cmp_.add_argument("--target", default="best-of-first")
    cmp_.add_argument("--out", required=True, type=Path)
    cmp_.add_argument("--figures", type=Path)
    cmp_.set_defaults(func=cmd_compare)

    part = sub.add_parser("partition", help="print per-client sizes and label histograms")
    common(part)
    part.set_defaults(func=cmd_partition)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, FormatError, PartitionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
