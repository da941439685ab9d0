"""Round orchestration, client sampling, evaluation and per-round mechanism metrics."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .data import LabeledDataset
from .numkit import SeedPath, Vector, as_vector, cosine_between
from .objectives import Objective
from .penalties import DirectionAnchor
from .strategies import (
    DIVERGENCE_LIMIT,
    ClientUpdate,
    DivergenceError,
    LocalPlan,
    ServerRule,
    aggregate_weighted,
    local_train,
    server_apply,
    update_direction,
)


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ClientSpec:
    """One client: its local objective and (for statistical objectives) its data."""

    objective: Objective
    data: Optional[LabeledDataset] = None
    n_samples: Optional[int] = None

    @property
    def size(self) -> int:
        if self.n_samples is not None:
            return self.n_samples
        return len(self.data) if self.data is not None else 1


@dataclass
class SimConfig:
    clients: Sequence[ClientSpec]
    rounds: int
    plan: LocalPlan
    eval_objective: Objective
    eval_set: Optional[LabeledDataset] = None
    participation: float = 1.0
    rule: ServerRule = field(default_factory=ServerRule)
    tracked_pair: Optional[tuple[int, int]] = (0, 1)
    root_seed: int = 0
    x0: Optional[Vector] = None
    eval_every: int = 1
    workers: int = 1
    keep_models: bool = False
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        n = len(self.clients)
        if n < 1:
            raise ConfigError("n_clients", "need at least one client")
        if not (0.0 < self.participation <= 1.0) or math.isnan(self.participation):
            raise ConfigError("participation", f"must lie in (0, 1], got {self.participation}")
        if self.rounds < 1:
            raise ConfigError("rounds", "must be positive")
        if self.eval_every < 1:
            raise ConfigError("eval_every", "must be positive")
        if self.tracked_pair is not None:
            i, j = self.tracked_pair
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ConfigError("tracked_pair", f"ids must be distinct and < {n}")
        sizes = {c.objective.n_params for c in self.clients} | {self.eval_objective.n_params}
        if len(sizes) != 1:
            raise ConfigError("model", "clients and evaluator disagree on parameter count")
        for i, c in enumerate(self.clients):
            if c.objective.is_statistical and (c.data is None or len(c.data) == 0):
                raise ConfigError("data", f"client {i} has no samples")


@dataclass
class RoundRecord:
    round: int
    participants: list[int]
    global_move: float
    local_moves: dict[int, float]
    pair_cosine: Optional[float]
    pair_model_distance: Optional[float]
    eval_accuracy: Optional[float]
    eval_loss: Optional[float]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["local_moves"] = {str(k): v for k, v in self.local_moves.items()}
        return d


@dataclass
class History:
    records: list[RoundRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    models: list[Vector] = field(default_factory=list)
    final_model: Optional[Vector] = None

    def accuracies(self) -> list[Optional[float]]:
        return [r.eval_accuracy for r in self.records]

    def best_accuracy(self) -> Optional[float]:
        acc = [a for a in self.accuracies() if a is not None]
        return max(acc) if acc else None

    def last_accuracy(self) -> Optional[float]:
        acc = [a for a in self.accuracies() if a is not None]
        return acc[-1] if acc else None


def sample_clients(n_clients: int, fraction: float, round_index: int, seed: SeedPath) -> list[int]:
    """Uniform sample without replacement of ``max(1, round(C * N))`` ids, ascending."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    m = max(1, int(round(fraction * n_clients)))
    if m >= n_clients:
        return list(range(n_clients))
    rng = seed.child("sample", round_index).rng()
    return sorted(int(i) for i in rng.choice(n_clients, size=m, replace=False))


def evaluate(obj: Objective, x, eval_set: Optional[LabeledDataset]) -> tuple[float, float]:
    """Top-1 accuracy and loss; deterministic objectives report accuracy 0."""
    x = as_vector(x)
    if not obj.is_statistical:
        return 0.0, obj.loss(x)
    if eval_set is None or len(eval_set) == 0:
        raise ValueError("statistical objectives need a non-empty eval set")
    pred = obj.predict(x, eval_set.features)
    acc = float(np.mean(pred == eval_set.labels))
    return acc, obj.loss(x, eval_set.as_batch())


@dataclass
class DisplacementMetrics:
    global_move: float
    local_moves: dict[int, float]
    pair_cosine: Optional[float]
    pair_model_distance: Optional[float]


def displacement_metrics(x_hat, updates: Sequence[ClientUpdate], x_new,
                         tracked_pair: Optional[tuple[int, int]] = None) -> DisplacementMetrics:
    if not updates:
        raise ValueError("no updates")
    x_hat = as_vector(x_hat)
    by_id = {u.client_id: u for u in updates}
    moves = {cid: float(np.linalg.norm(by_id[cid].params - x_hat)) for cid in sorted(by_id)}
    pair_cos = pair_dist = None
    if tracked_pair is not None and all(c in by_id for c in tracked_pair):
        a, b = (by_id[c].params for c in tracked_pair)
        pair_cos = cosine_between(a - x_hat, b - x_hat)
        pair_dist = float(np.linalg.norm(a - b))
    return DisplacementMetrics(float(np.linalg.norm(as_vector(x_new) - x_hat)), moves,
                               pair_cos, pair_dist)


def rounds_to_target(history: History, target: float) -> Optional[int]:
    if not 0.0 <= target <= 1.0:
        raise ValueError("target must lie in [0, 1]")
    for rec in history.records:
        if rec.eval_accuracy is not None and rec.eval_accuracy >= target:
            return rec.round
    return None


def _train_one(cfg: SimConfig, cid: int, x_hat: Vector, anchor: DirectionAnchor,
               round_seed: SeedPath) -> ClientUpdate:
    client = cfg.clients[cid]
    return local_train(client.objective, x_hat, anchor, cfg.plan, client.data,
                       round_seed.child("client", cid), client_id=cid, n_samples=client.size)


def run_experiment(cfg: SimConfig,
                   on_round: Optional[Callable[[RoundRecord], None]] = None) -> History:
    """Broadcast, local training, aggregation, server rule, direction update, evaluation."""
    cfg.validate()
    t0 = time.perf_counter()
    seed = SeedPath(cfg.root_seed)
    n = len(cfg.clients)
    if cfg.x0 is not None:
        x_hat = as_vector(cfg.x0).copy()
    else:
        x_hat = cfg.clients[0].objective.init_params(seed.child("init", 0))
    d_hat = np.zeros_like(x_hat)
    rule = cfg.rule
    hist = History(metadata=dict(cfg.metadata))
    if cfg.keep_models:
        hist.models.append(x_hat.copy())

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for r in range(1, cfg.rounds + 1):
            participants = sample_clients(n, cfg.participation, r, seed)
            anchor = DirectionAnchor(x_hat, d_hat, r)
            round_seed = seed.child("round", r)
            try:
                if pool is None:
                    updates = [_train_one(cfg, c, x_hat, anchor, round_seed) for c in participants]
                else:
                    futs = [pool.submit(_train_one, cfg, c, x_hat, anchor, round_seed)
                            for c in participants]
                    updates = [f.result() for f in futs]
            except DivergenceError as exc:
                raise DivergenceError(exc.step, exc.client_id, r) from None

            aggregated = aggregate_weighted(updates)
            x_new, rule = server_apply(rule, x_hat, aggregated)
            if not np.all(np.isfinite(x_new)) or np.abs(x_new).max() > DIVERGENCE_LIMIT:
                raise DivergenceError(cfg.plan.steps_per_round, "server", r)
            m = displacement_metrics(x_hat, updates, x_new, cfg.tracked_pair)
            d_hat = update_direction(x_new, x_hat)
            x_hat = x_new

            acc = loss = None
            if r % cfg.eval_every == 0 or r == cfg.rounds:
                acc, loss = evaluate(cfg.eval_objective, x_hat, cfg.eval_set)
            rec = RoundRecord(r, participants, m.global_move, m.local_moves,
                              m.pair_cosine, m.pair_model_distance, acc, loss)
            hist.records.append(rec)
            if on_round is not None:
                on_round(rec)
            if cfg.keep_models:
                hist.models.append(x_hat.copy())
    finally:
        if pool is not None:
            pool.shutdown()

    hist.final_model = x_hat
    hist.metadata["wall_time_s"] = time.perf_counter() - t0
    hist.metadata["n_params"] = int(x_hat.size)
    return hist
