"""Experiment config files: a sectioned INI dialect with a typed, closed key schema."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .data import (
    LabeledDataset,
    PartitionSpec,
    gen_blobs,
    load_cifar10_bin,
    load_idx,
    partition,
    take_subset,
)
from .numkit import SeedPath
from .objectives import (
    MlpObjective,
    SoftmaxRegression,
    SumObjective,
    three_client_quadratics,
    two_client_quadratics,
)
from .penalties import PenaltyConfig
from .simulator import ClientSpec, ConfigError, SimConfig
from .strategies import LocalPlan, ServerRule


def _choice(*options: str) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        v = raw.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _paths(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def _pair(raw: str) -> Optional[tuple[int, int]]:
    if raw.strip().lower() == "none":
        return None
    a, b = (int(p) for p in raw.split(","))
    return (a, b)


def _opt_int(raw: str) -> Optional[int]:
    return None if raw.strip().lower() == "none" else int(raw)


def _opt_float(raw: str) -> Optional[float]:
    return None if raw.strip().lower() == "none" else float(raw)


REQUIRED = object()

# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "experiment": {
        "name": (str, "experiment"),
        "root_seed": (int, 0),
        "rounds": (int, REQUIRED),
    },
    "data": {
        "source": (_choice("blobs", "idx", "cifar10", "toy"), "blobs"),
        "partition": (_choice(*PartitionSpec.SCHEMES), "totally_noniid"),
        "noniid_fraction": (float, 1.0),
        "shards_per_client": (int, 2),
        "classes": (int, 10),
        "per_class": (int, 100),
        "eval_per_class": (_opt_int, None),
        "dim": (int, 20),
        "spread": (float, 0.3),
        "images": (str, ""),
        "labels": (str, ""),
        "eval_images": (str, ""),
        "eval_labels": (str, ""),
        "paths": (_paths, []),
        "eval_paths": (_paths, []),
        "max_samples": (_opt_int, None),
        "eval_max_samples": (_opt_int, None),
    },
    "model": {
        "kind": (_choice("softmax", "mlp", "quadratic"), "softmax"),
        "hidden": (int, 64),
        "init": (_choice("uniform", "zeros"), "uniform"),
        "scene": (_choice("two_client", "three_client"), "two_client"),
    },
    "strategy": {
        "base": (_choice("fedavg", "fedprox", "fedavgm", "fedopt"), "fedavg"),
        "base_param": (_opt_float, None),
        "fedcos_mu": (float, 0.0),
    },
    "sim": {
        "n_clients": (int, 5),
        "participation": (float, 1.0),
        "eta": (float, 0.01),
        "steps_per_round": (int, 50),
        "batch_size": (int, 32),
        "eval_every": (int, 1),
        "tracked_pair": (_pair, (0, 1)),
    },
}

BASE_DEFAULTS = {"fedprox": 0.1, "fedavgm": 0.5, "fedopt": 1.5}


def parse_config(text: str) -> dict[str, dict[str, Any]]:
    """Parse and type-check config text; every problem raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None

    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")

    out: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        out[section] = {}
        for key, (parse, default) in keys.items():
            if cp.has_option(section, key):
                raw = cp[section][key]
                try:
                    out[section][key] = parse(raw)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{section}.{key}", f"bad value {raw!r}: {exc}") from None
            elif default is REQUIRED:
                raise ConfigError(f"{section}.{key}", "missing required key")
            else:
                out[section][key] = default
    validate(out)
    return out


def load_config(path) -> dict[str, dict[str, Any]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def validate(cfg: dict) -> None:
    e, d, m, s, st = cfg["experiment"], cfg["data"], cfg["model"], cfg["sim"], cfg["strategy"]
    if e["rounds"] < 1:
        raise ConfigError("experiment.rounds", "must be positive")
    if not 0.0 < s["participation"] <= 1.0:
        raise ConfigError("sim.participation", f"must lie in (0, 1], got {s['participation']}")
    for key in ("n_clients", "steps_per_round", "batch_size", "eval_every"):
        if s[key] < 1:
            raise ConfigError(f"sim.{key}", "must be positive")
    if not s["eta"] > 0:
        raise ConfigError("sim.eta", "must be positive")
    if s["tracked_pair"] is not None:
        i, j = s["tracked_pair"]
        if not (0 <= i < s["n_clients"] and 0 <= j < s["n_clients"]) or i == j:
            raise ConfigError("sim.tracked_pair", f"ids must be distinct and < {s['n_clients']}")
    if st["fedcos_mu"] < 0:
        raise ConfigError("strategy.fedcos_mu", "must be non-negative")
    bp = st["base_param"]
    if bp is not None:
        if st["base"] == "fedprox" and bp < 0:
            raise ConfigError("strategy.base_param", "fedprox weight must be non-negative")
        if st["base"] == "fedavgm" and not 0 <= bp < 1:
            raise ConfigError("strategy.base_param", "fedavgm beta must lie in [0, 1)")
        if st["base"] == "fedopt" and not bp > 0:
            raise ConfigError("strategy.base_param", "fedopt eta_g must be positive")
    if not 0.0 <= d["noniid_fraction"] <= 1.0:
        raise ConfigError("data.noniid_fraction", "must lie in [0, 1]")
    if m["kind"] == "quadratic":
        if d["source"] != "toy":
            raise ConfigError("data.source", "quadratic models need source = toy")
        want = 2 if m["scene"] == "two_client" else 3
        if s["n_clients"] != want:
            raise ConfigError("sim.n_clients", f"scene {m['scene']} has {want} clients")
        return
    if d["source"] == "toy":
        raise ConfigError("data.source", "toy data only works with model.kind = quadratic")
    if d["source"] == "blobs":
        for key in ("classes", "per_class", "dim"):
            if d[key] < 1:
                raise ConfigError(f"data.{key}", "must be positive")
        if d["spread"] < 0:
            raise ConfigError("data.spread", "must be non-negative")
    if d["source"] == "idx":
        for key in ("images", "labels", "eval_images", "eval_labels"):
            if not d[key]:
                raise ConfigError(f"data.{key}", "required for idx source")
    if d["source"] == "cifar10":
        for key in ("paths", "eval_paths"):
            if not d[key]:
                raise ConfigError(f"data.{key}", "required for cifar10 source")
    if m["kind"] == "mlp" and m["hidden"] < 1:
        raise ConfigError("model.hidden", "must be positive")


def to_ini(cfg: dict) -> str:
    """Render a resolved config back to text that parses to the same values."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section, keys in cfg.items():
        cp[section] = {}
        for key, value in keys.items():
            if value is None:
                text = "none"
            elif isinstance(value, (list, tuple)):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            cp[section][key] = text
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def strategy_parts(st: dict) -> tuple[PenaltyConfig, ServerRule]:
    base = st["base"]
    param = st["base_param"] if st["base_param"] is not None else BASE_DEFAULTS.get(base)
    mu_prox = param if base == "fedprox" else 0.0
    if base == "fedavgm":
        rule = ServerRule("momentum", beta=param)
    elif base == "fedopt":
        rule = ServerRule("scaled", eta_g=param)
    else:
        rule = ServerRule()
    return PenaltyConfig(mu_cos=st["fedcos_mu"], mu_prox=mu_prox), rule


@dataclass
class Experiment:
    sim: SimConfig
    train: Optional[LabeledDataset]
    split_info: dict


def load_datasets(cfg: dict) -> tuple[LabeledDataset, LabeledDataset]:
    d = cfg["data"]
    seed = SeedPath(cfg["experiment"]["root_seed"])
    try:
        if d["source"] == "blobs":
            data_seed = seed.child("data", 0)
            train = gen_blobs(d["classes"], d["per_class"], d["dim"], d["spread"], data_seed, 0)
            per_eval = d["eval_per_class"] or d["per_class"]
            test = gen_blobs(d["classes"], per_eval, d["dim"], d["spread"], data_seed, 1)
        elif d["source"] == "idx":
            train = load_idx(d["images"], d["labels"], d["classes"])
            test = load_idx(d["eval_images"], d["eval_labels"], d["classes"])
        else:
            train = load_cifar10_bin(d["paths"])
            test = load_cifar10_bin(d["eval_paths"])
    except OSError as exc:
        raise ConfigError("data", f"cannot read {exc.filename}: {exc.strerror}") from None
    train = take_subset(train, d["max_samples"], seed.child("train_subset", 0))
    test = take_subset(test, d["eval_max_samples"], seed.child("eval_subset", 0))
    return train, test


def partition_spec(cfg: dict) -> PartitionSpec:
    d = cfg["data"]
    return PartitionSpec(d["partition"], cfg["sim"]["n_clients"],
                         SeedPath(cfg["experiment"]["root_seed"]),
                         p=d["noniid_fraction"], shards_per_client=d["shards_per_client"])


def build_experiment(cfg: dict, workers: int = 1, keep_models: bool = False) -> Experiment:
    e, m, s = cfg["experiment"], cfg["model"], cfg["sim"]
    penalties, rule = strategy_parts(cfg["strategy"])
    plan = LocalPlan(s["eta"], s["steps_per_round"], s["batch_size"], penalties)
    common = dict(rounds=e["rounds"], plan=plan, participation=s["participation"], rule=rule,
                  tracked_pair=s["tracked_pair"], root_seed=e["root_seed"],
                  eval_every=s["eval_every"], workers=workers, keep_models=keep_models)

    if m["kind"] == "quadratic":
        parts = two_client_quadratics() if m["scene"] == "two_client" else three_client_quadratics()
        sim = SimConfig(clients=[ClientSpec(p) for p in parts], eval_objective=SumObjective(parts),
                        x0=parts[0].start, **common)
        return Experiment(sim, None, {"scheme": "toy"})

    train, test = load_datasets(cfg)
    try:
        split = partition(train, partition_spec(cfg))
    except ValueError as exc:
        raise ConfigError("data.partition", str(exc)) from None
    if m["kind"] == "softmax":
        obj = SoftmaxRegression(train.dim, train.n_classes)
    else:
        obj = MlpObjective(train.dim, m["hidden"], train.n_classes)
    clients = [ClientSpec(obj, train.subset(ix)) for ix in split.indices]
    x0 = None
    if m["init"] == "zeros":
        x0 = np.zeros(obj.n_params)
    info = {"scheme": cfg["data"]["partition"], "label_aligned": split.label_aligned,
            "client_sizes": split.sizes(), "dropped": len(train) - sum(split.sizes())}
    sizes = split.sizes()
    info["epochs_per_round"] = [s["steps_per_round"] * s["batch_size"] / n for n in sizes]
    sim = SimConfig(clients=clients, eval_objective=obj, eval_set=test, x0=x0,
                    metadata={"partition": info}, **common)
    return Experiment(sim, train, info)
