"""Client-side local training and server-side update rules."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import BatchStream, LabeledDataset
from .numkit import SeedPath, Vector, as_vector, check_same_length, weighted_sum
from .objectives import Objective
from .penalties import DirectionAnchor, PenaltyConfig, cos_penalty_grad, prox_penalty_grad

# Any parameter beyond this magnitude counts as divergence.
DIVERGENCE_LIMIT = 1e8


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, client_id=None, round_index=None):
        self.step = step
        self.client_id = client_id
        self.round_index = round_index
        parts = [f"step {step}"]
        if client_id is not None:
            parts.insert(0, f"client {client_id}")
        if round_index is not None:
            parts.insert(0, f"round {round_index}")
        super().__init__("parameters diverged at " + ", ".join(parts))


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class LocalPlan:
    eta: float
    steps_per_round: int
    batch_size: int = 32
    penalties: PenaltyConfig = PenaltyConfig()

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.steps_per_round < 1:
            raise ValueError("steps_per_round must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass(frozen=True)
class ClientUpdate:
    params: Vector
    n_samples: int
    client_id: int

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")


def local_train(obj: Objective, start, anchor: DirectionAnchor, plan: LocalPlan,
                data: Optional[LabeledDataset], seed: SeedPath, client_id: int = 0,
                n_samples: Optional[int] = None) -> ClientUpdate:
    """Run ``plan.steps_per_round`` penalised SGD steps from ``start``.

    ``data=None`` means the objective is deterministic (full-batch quadratics).
    """
    x = as_vector(start).copy()
    check_same_length(x, anchor.x_hat)
    mu_cos = plan.penalties.mu_cos
    mu_prox = plan.penalties.mu_prox
    batches: Iterable = iter(BatchStream(data, plan.batch_size, seed)) if data is not None else None

    for step in range(plan.steps_per_round):
        batch = next(batches) if batches is not None else None
        g = obj.grad(x, batch)
        if mu_cos:
            g = g + mu_cos * cos_penalty_grad(x, anchor)
        if mu_prox:
            g = g + mu_prox * prox_penalty_grad(x, anchor.x_hat)
        x = x - plan.eta * g
        if not np.abs(x).max() <= DIVERGENCE_LIMIT:  # also catches NaN
            raise DivergenceError(step, client_id)

    if n_samples is None:
        n_samples = len(data) if data is not None else 1
    return ClientUpdate(x, n_samples, client_id)


def aggregate_weighted(updates: Sequence[ClientUpdate]) -> Vector:
    """Sample-count weighted average, summed in ascending client id order.

    Offsets are taken from the lowest-id update, so identical inputs come back
    exactly rather than up to rounding.
    """
    if not updates:
        raise ProtocolError("no client updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    ref = ordered[0].params
    for u in ordered[1:]:
        check_same_length(u.params, ref)
    if len(ordered) == 1:
        return ref.copy()
    total = sum(u.n_samples for u in ordered)
    offsets = weighted_sum([u.params - ref for u in ordered[1:]],
                           [u.n_samples / total for u in ordered[1:]])
    return ref + offsets


@dataclass(frozen=True)
class ServerRule:
    """How the server turns the client average into the next global model.

    ``average`` takes it as is; ``scaled`` steps ``eta_g`` times the pseudo-gradient;
    ``momentum`` accumulates the pseudo-gradient with factor ``beta``.
    """

    kind: str = "average"
    beta: float = 0.0
    eta_g: float = 1.0
    buffer: Optional[Vector] = None

    def __post_init__(self):
        if self.kind not in ("average", "momentum", "scaled"):
            raise ValueError(f"unknown server rule {self.kind!r}")
        if self.kind == "momentum" and not 0.0 <= self.beta < 1.0:
            raise ValueError("momentum beta must lie in [0, 1)")
        if self.kind == "scaled" and not self.eta_g > 0:
            raise ValueError("eta_g must be positive")


def server_apply(rule: ServerRule, x_prev, aggregated) -> tuple[Vector, ServerRule]:
    x_prev, aggregated = as_vector(x_prev), as_vector(aggregated)
    check_same_length(x_prev, aggregated)
    if rule.kind == "average":
        return aggregated.copy(), rule
    delta = x_prev - aggregated
    if rule.kind == "scaled":
        if rule.eta_g == 1.0:
            return aggregated.copy(), rule
        return x_prev - rule.eta_g * delta, rule
    v = delta if rule.buffer is None else rule.beta * rule.buffer + delta
    if rule.buffer is not None:
        check_same_length(rule.buffer, delta)
    new_rule = replace(rule, buffer=v)
    if rule.buffer is None or rule.beta == 0.0:
        return aggregated.copy(), new_rule
    return x_prev - v, new_rule


def update_direction(x_new, x_prev) -> Vector:
    x_new, x_prev = as_vector(x_new), as_vector(x_prev)
    check_same_length(x_new, x_prev)
    return x_new - x_prev
