"""Direction (cosine) and proximal penalties, values and gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numkit import Vector, as_vector, check_same_length

# Below this displacement norm the cosine penalty is treated as degenerate.
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class DirectionAnchor:
    """Round-start global model and the global direction broadcast with it."""

    x_hat: Vector
    d_hat: Vector
    round: int = 0

    def __post_init__(self):
        check_same_length(as_vector(self.x_hat), as_vector(self.d_hat))

    @classmethod
    def initial(cls, x0) -> "DirectionAnchor":
        x0 = as_vector(x0)
        return cls(x0, np.zeros_like(x0), 0)


@dataclass(frozen=True)
class PenaltyConfig:
    mu_cos: float = 0.0
    mu_prox: float = 0.0

    def __post_init__(self):
        for name in ("mu_cos", "mu_prox"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def _split(x, anchor: DirectionAnchor):
    x = as_vector(x)
    check_same_length(x, anchor.x_hat)
    u = x - anchor.x_hat
    d = anchor.d_hat
    return u, math.sqrt(u @ u), math.sqrt(d @ d)


def cos_penalty_value(x, anchor: DirectionAnchor) -> float:
    """``1 - cos`` of the angle between ``x - x_hat`` and ``d_hat``; 0 when either is zero."""
    u, nu, nd = _split(x, anchor)
    if nu < DEGENERATE_NORM or nd == 0.0:
        return 0.0
    c = float(u @ anchor.d_hat) / (nu * nd)
    return 1.0 - min(1.0, max(-1.0, c))


def cos_penalty_grad(x, anchor: DirectionAnchor) -> Vector:
    u, nu, nd = _split(x, anchor)
    if nu < DEGENERATE_NORM or nd == 0.0:
        return np.zeros_like(u)
    d = anchor.d_hat
    return ((u @ d) * u - (nu * nu) * d) / (nd * nu**3)


def prox_penalty_value(x, x_hat) -> float:
    x, x_hat = as_vector(x), as_vector(x_hat)
    check_same_length(x, x_hat)
    u = x - x_hat
    return float(u @ u)


def prox_penalty_grad(x, x_hat) -> Vector:
    # Factor 2 from the unscaled squared norm; mu_prox is applied by the caller.
    x, x_hat = as_vector(x), as_vector(x_hat)
    check_same_length(x, x_hat)
    return 2.0 * (x - x_hat)
