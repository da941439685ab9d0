"""Local objectives with exact gradients.

Every objective maps a flat parameter vector and a :class:`Batch` to a scalar
loss. Statistical objectives average over the batch; quadratics ignore it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .numkit import DimensionError, NonFiniteError, SeedPath, Vector, as_vector


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if len(self.labels) == 0:
            raise ValueError("empty batch")

    def __len__(self) -> int:
        return len(self.labels)


class Objective:
    n_params: int

    def loss(self, x: Vector, batch: Optional[Batch] = None) -> float:
        raise NotImplementedError

    def grad(self, x: Vector, batch: Optional[Batch] = None) -> Vector:
        raise NotImplementedError

    def predict(self, x: Vector, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} does not classify")

    def init_params(self, seed: SeedPath) -> Vector:
        raise NotImplementedError

    @property
    def is_statistical(self) -> bool:
        return True

    def _check(self, x) -> Vector:
        x = as_vector(x)
        if x.size != self.n_params:
            raise DimensionError(f"expected {self.n_params} parameters, got {x.size}")
        return x


def _finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteError(f"{what} overflowed")
    return float(value)


class QuadraticObjective(Objective):
    """``f(x) = 0.5 (x - c)^T A (x - c)``."""

    def __init__(self, A, center, start=None):
        A = np.asarray(A, dtype=np.float64)
        c = as_vector(center)
        if A.shape != (c.size, c.size):
            raise DimensionError(f"A has shape {A.shape}, center has length {c.size}")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12):
            raise ValueError("A must be symmetric")
        if c.size <= 16 and np.linalg.eigvalsh(A).min() < -1e-12:
            raise ValueError("A must be positive semi-definite")
        self.A = A
        self.center = c
        self.start = None if start is None else as_vector(start)
        self.n_params = c.size

    @property
    def is_statistical(self) -> bool:
        return False

    def loss(self, x, batch=None):
        u = self._check(x) - self.center
        return _finite(0.5 * u @ self.A @ u, "quadratic loss")

    def grad(self, x, batch=None):
        return self.A @ (self._check(x) - self.center)

    def init_params(self, seed=None):
        if self.start is not None:
            return self.start.copy()
        return np.zeros(self.n_params)


class SumObjective(Objective):
    """Sum of several objectives over the same parameters (the toy global loss)."""

    def __init__(self, parts: Sequence[Objective]):
        sizes = {p.n_params for p in parts}
        if len(sizes) != 1:
            raise DimensionError("parts disagree on parameter count")
        self.parts = list(parts)
        self.n_params = sizes.pop()

    @property
    def is_statistical(self) -> bool:
        return any(p.is_statistical for p in self.parts)

    def loss(self, x, batch=None):
        return float(sum(p.loss(x, batch) for p in self.parts))

    def grad(self, x, batch=None):
        return sum(p.grad(x, batch) for p in self.parts)

    def init_params(self, seed=None):
        return self.parts[0].init_params(seed)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _xent(z: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    logp = _log_softmax(z)
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    dz = np.exp(logp)
    dz[np.arange(n), labels] -= 1.0
    return loss, dz / n


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SoftmaxRegression(Objective):
    """Multinomial logistic regression; params are ``W`` (classes x features) then bias."""

    def __init__(self, n_features: int, n_classes: int):
        self.n_features = n_features
        self.n_classes = n_classes
        self.n_params = n_classes * n_features + n_classes

    def unpack(self, x):
        x = self._check(x)
        k = self.n_classes * self.n_features
        return x[:k].reshape(self.n_classes, self.n_features), x[k:]

    def logits(self, x, features):
        W, b = self.unpack(x)
        return features @ W.T + b

    def probabilities(self, x, features):
        return np.exp(_log_softmax(self.logits(x, features)))

    def loss_and_grad(self, x, batch: Batch):
        W, b = self.unpack(x)
        loss, dz = _xent(batch.features @ W.T + b, batch.labels)
        grad = np.concatenate([(dz.T @ batch.features).ravel(), dz.sum(axis=0)])
        return _finite(loss, "softmax loss"), grad

    def loss(self, x, batch):
        return self.loss_and_grad(x, batch)[0]

    def grad(self, x, batch):
        return self.loss_and_grad(x, batch)[1]

    def predict(self, x, features):
        return np.argmax(self.logits(x, features), axis=1)

    def init_params(self, seed: SeedPath):
        rng = seed.rng()
        W = _uniform_init(rng, self.n_features, (self.n_classes, self.n_features))
        b = _uniform_init(rng, self.n_features, self.n_classes)
        return np.concatenate([W.ravel(), b])


class MlpObjective(Objective):
    """Two fully connected layers, rectifier hidden units, softmax cross-entropy."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int):
        self.n_in, self.n_hidden, self.n_out = n_in, n_hidden, n_out
        self.n_params = n_in * n_hidden + n_hidden + n_hidden * n_out + n_out

    def unpack(self, x):
        x = self._check(x)
        i, h, o = self.n_in, self.n_hidden, self.n_out
        s1 = i * h
        s2 = s1 + h
        s3 = s2 + h * o
        return x[:s1].reshape(i, h), x[s1:s2], x[s2:s3].reshape(h, o), x[s3:]

    def _forward(self, x, features):
        W1, b1, W2, b2 = self.unpack(x)
        pre = features @ W1 + b1
        hidden = np.maximum(pre, 0.0)
        return pre, hidden, hidden @ W2 + b2

    def loss_and_grad(self, x, batch: Batch):
        W1, b1, W2, b2 = self.unpack(x)
        pre, hidden, z = self._forward(x, batch.features)
        loss, dz = _xent(z, batch.labels)
        dW2 = hidden.T @ dz
        db2 = dz.sum(axis=0)
        dh = (dz @ W2.T) * (pre > 0)
        dW1 = batch.features.T @ dh
        db1 = dh.sum(axis=0)
        grad = np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])
        return _finite(loss, "mlp loss"), grad

    def loss(self, x, batch):
        return self.loss_and_grad(x, batch)[0]

    def grad(self, x, batch):
        return self.loss_and_grad(x, batch)[1]

    def predict(self, x, features):
        return np.argmax(self._forward(x, features)[2], axis=1)

    def init_params(self, seed: SeedPath):
        rng = seed.rng()
        W1 = _uniform_init(rng, self.n_in, (self.n_in, self.n_hidden))
        b1 = _uniform_init(rng, self.n_in, self.n_hidden)
        W2 = _uniform_init(rng, self.n_hidden, (self.n_hidden, self.n_out))
        b2 = _uniform_init(rng, self.n_hidden, self.n_out)
        return np.concatenate([W1.ravel(), b1, W2.ravel(), b2])


def objective_loss(obj: Objective, x, batch: Optional[Batch] = None) -> float:
    return obj.loss(x, batch)


def objective_grad(obj: Objective, x, batch: Optional[Batch] = None) -> Vector:
    return obj.grad(x, batch)


def init_params(obj: Objective, seed: Optional[SeedPath] = None) -> Vector:
    return obj.init_params(seed)


# Toy scenes. The two-client functions expand to
#   f1 = 0.5 (x0-6)^2 + 0.75 (x0-6) x1 + 0.5 x1^2
#   f2 = 0.5 (x0-3)^2 - 0.5 (x0-3) x1 + 0.5 x1^2
TWO_CLIENT_START = (5.1, -3.1)
THREE_CLIENT_START = (4.53, 0.38)


def two_client_quadratics() -> list[QuadraticObjective]:
    return [
        QuadraticObjective([[1.0, 0.75], [0.75, 1.0]], [6.0, 0.0], TWO_CLIENT_START),
        QuadraticObjective([[1.0, -0.5], [-0.5, 1.0]], [3.0, 0.0], TWO_CLIENT_START),
    ]


def three_client_quadratics() -> list[QuadraticObjective]:
    # Third client added on the far side of the first two's optima, coupling
    # chosen so the composite optimum sits off the line of local optima.
    return [
        QuadraticObjective([[1.0, 0.75], [0.75, 1.0]], [6.0, 0.0], THREE_CLIENT_START),
        QuadraticObjective([[1.0, -0.5], [-0.5, 1.0]], [3.0, 0.0], THREE_CLIENT_START),
        QuadraticObjective([[1.0, 0.25], [0.25, 0.5]], [4.5, 1.5], THREE_CLIENT_START),
    ]


def quadratic_optimum(parts: Sequence[QuadraticObjective]) -> Vector:
    """Stationary point of the sum of quadratics (solves sum A_i (x - c_i) = 0)."""
    A = sum(p.A for p in parts)
    b = sum(p.A @ p.center for p in parts)
    return np.linalg.solve(A, b)
