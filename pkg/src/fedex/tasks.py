"""Learning tasks, mini-batch gradients and smoothness/noise estimates.

Parameters are always a flat float64 vector. Losses are sample means, so
the client objective f_i is the mean loss over its shard and the global
objective is the unweighted mean of the f_i.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fedex.data import ClientShard, Dataset


class Task:
    kind: str = ""
    classifier: bool = True

    @property
    def num_params(self) -> int:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.num_params)

    def loss(self, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, params: np.ndarray, data: Dataset) -> float:
        if not self.classifier:
            return float("nan")
        return float(np.mean(self.predict(params, data.X) == data.y))

    def smoothness_ceiling(self, X: np.ndarray) -> float:
        """Analytic upper bound on the smoothness constant of the mean loss over X."""
        raise NotImplementedError


class QuadraticTask(Task):
    """Per-sample loss 0.5 * ||x - z||^2 where z is the sample's feature row."""

    kind = "quadratic"
    classifier = False

    def __init__(self, dim: int):
        self.dim = dim

    @property
    def num_params(self) -> int:
        return self.dim

    def loss(self, params, X, y):
        diff = X - params
        return 0.5 * float(np.mean(np.einsum("ij,ij->i", diff, diff)))

    def grad(self, params, X, y):
        return params - X.mean(axis=0)

    def smoothness_ceiling(self, X):
        return 1.0

    @staticmethod
    def optimum(shards: Sequence[ClientShard]) -> tuple[np.ndarray, float]:
        """Closed-form minimiser and minimum of the mean of the shard objectives."""
        means = np.stack([s.X.mean(axis=0) for s in shards])
        x_star = means.mean(axis=0)
        task = QuadraticTask(means.shape[1])
        f_star = float(np.mean([task.loss(x_star, s.X, s.y) for s in shards]))
        return x_star, f_star


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class LogisticTask(Task):
    """Logistic regression with a bias term.

    Two classes use a single sigmoid weight vector; more classes use
    multinomial (softmax) regression with one weight row per class.
    """

    kind = "logistic"

    def __init__(self, features: int, classes: int, l2: float = 0.0):
        if classes < 2:
            raise ValueError("logistic regression needs at least two classes")
        self.features = features
        self.classes = classes
        self.l2 = l2

    @property
    def binary(self) -> bool:
        return self.classes == 2

    @property
    def num_params(self) -> int:
        return (self.features + 1) * (1 if self.binary else self.classes)

    def _weights(self, params):
        return params.reshape(-1, self.features + 1)

    def loss(self, params, X, y):
        A = _augment(X)
        reg = 0.5 * self.l2 * float(params @ params)
        if self.binary:
            z = A @ params
            # log(1 + e^z) - y z, stable for large |z|
            return float(np.mean(np.logaddexp(0.0, z) - y * z)) + reg
        logp = _log_softmax(A @ self._weights(params).T)
        return -float(np.mean(logp[np.arange(len(y)), y])) + reg

    def grad(self, params, X, y):
        A = _augment(X)
        n = len(y)
        if self.binary:
            z = A @ params
            p = 0.5 * (1.0 + np.tanh(0.5 * z))
            return A.T @ (p - y) / n + self.l2 * params
        logp = _log_softmax(A @ self._weights(params).T)
        P = np.exp(logp)
        P[np.arange(n), y] -= 1.0
        return (P.T @ A).ravel() / n + self.l2 * params

    def predict(self, params, X):
        A = _augment(X)
        if self.binary:
            return (A @ params > 0).astype(np.int64)
        return np.argmax(A @ self._weights(params).T, axis=1)

    def smoothness_ceiling(self, X):
        # Sigmoid curvature is at most 1/4; softmax cross-entropy at most 1/2.
        r2 = float(np.max(np.einsum("ij,ij->i", _augment(X), _augment(X))))
        return (0.25 if self.binary else 0.5) * r2 + self.l2


class MLPTask(Task):
    """One hidden tanh layer followed by softmax cross-entropy."""

    kind = "mlp"

    def __init__(self, features: int, hidden: int, classes: int):
        self.features = features
        self.hidden = hidden
        self.classes = classes

    @property
    def num_params(self) -> int:
        return self.hidden * (self.features + 1) + self.classes * (self.hidden + 1)

    def init_params(self, rng):
        w1 = rng.standard_normal((self.hidden, self.features)) / np.sqrt(self.features)
        w2 = rng.standard_normal((self.classes, self.hidden)) / np.sqrt(self.hidden)
        return np.concatenate([w1.ravel(), np.zeros(self.hidden), w2.ravel(), np.zeros(self.classes)])

    def _unpack(self, params):
        h, f, c = self.hidden, self.features, self.classes
        i = 0
        W1 = params[i : i + h * f].reshape(h, f)
        i += h * f
        b1 = params[i : i + h]
        i += h
        W2 = params[i : i + c * h].reshape(c, h)
        i += c * h
        b2 = params[i : i + c]
        return W1, b1, W2, b2

    def _forward(self, params, X):
        W1, b1, W2, b2 = self._unpack(params)
        H = np.tanh(X @ W1.T + b1)
        return H, _log_softmax(H @ W2.T + b2)

    def loss(self, params, X, y):
        _, logp = self._forward(params, X)
        return -float(np.mean(logp[np.arange(len(y)), y]))

    def grad(self, params, X, y):
        W1, b1, W2, b2 = self._unpack(params)
        n = len(y)
        H, logp = self._forward(params, X)
        dZ2 = np.exp(logp)
        dZ2[np.arange(n), y] -= 1.0
        dZ2 /= n
        gW2 = dZ2.T @ H
        gb2 = dZ2.sum(axis=0)
        dZ1 = (dZ2 @ W2) * (1.0 - H * H)
        gW1 = dZ1.T @ X
        gb1 = dZ1.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])

    def predict(self, params, X):
        _, logp = self._forward(params, X)
        return np.argmax(logp, axis=1)


def make_task(kind: str, features: int, classes: int, hidden: int = 16, l2: float = 0.0) -> Task:
    if kind == "quadratic":
        return QuadraticTask(features)
    if kind == "logistic":
        return LogisticTask(features, classes, l2)
    if kind == "mlp":
        return MLPTask(features, hidden, classes)
    raise ValueError(f"unknown task kind {kind!r}")


# --- mini-batches ------------------------------------------------------------


def batch_plan(seed: int, client: int, round_index: int, steps: int, n: int, batch_size: int) -> np.ndarray:
    """Mini-batch indices for every step of one local round, shape (steps, batch).

    Row s depends only on (seed, client, round_index, s), never on call
    order, so any executor replaying the same round sees the same batches.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if n == 0:
        raise ValueError("empty shard")
    if batch_size >= n:
        return np.broadcast_to(np.arange(n), (steps, n))
    # The generator fills row-major, so row s is the same for any steps > s.
    keys = np.random.default_rng([seed, client, round_index]).random((steps, n))
    return np.argsort(keys, axis=1, kind="stable")[:, :batch_size]


def stochastic_gradient(
    task: Task, params: np.ndarray, shard: ClientShard, batch_size: int, rng_key: tuple[int, int, int], seed: int = 0
) -> np.ndarray:
    """Mini-batch gradient with the batch drawn by key (client, round, step)."""
    client, round_index, step = rng_key
    idx = batch_plan(seed, client, round_index, step + 1, shard.num_samples, batch_size)[step]
    return task.grad(params, shard.X[idx], shard.y[idx])


def _as_parts(data) -> list:
    if isinstance(data, (Dataset, ClientShard)):
        return [data]
    parts = list(data)
    if not parts:
        raise ValueError("empty dataset")
    return parts


def loss(task: Task, params: np.ndarray, data) -> float:
    """Exact objective: mean loss of a dataset/shard, or mean of per-shard means for a list."""
    parts = _as_parts(data)
    if any(len(p.y) == 0 for p in parts):
        raise ValueError("empty dataset")
    return float(np.mean([task.loss(params, p.X, p.y) for p in parts]))


def full_gradient(task: Task, params: np.ndarray, data) -> np.ndarray:
    parts = _as_parts(data)
    if any(len(p.y) == 0 for p in parts):
        raise ValueError("empty dataset")
    return np.mean([task.grad(params, p.X, p.y) for p in parts], axis=0)


# --- constants -----------------------------------------------------------------


@dataclass(frozen=True)
class ConstantsEstimate:
    L: float
    G: float
    sigma: float
    probes: int
    samples: int


def estimate_constants(
    task: Task,
    shards: Sequence[ClientShard] | Dataset,
    probes: int,
    seed: int,
    batch_size: int = 1,
    center: np.ndarray | None = None,
    scale: float = 1.0,
) -> ConstantsEstimate:
    """Empirical smoothness, gradient-norm and gradient-noise estimates.

    Probe points are ``center + scale * N(0, I)``. L is the largest secant
    ratio ||grad f_i(x) - grad f_i(y)|| / ||x - y|| over probe pairs and
    shards; G the largest mini-batch gradient norm seen; sigma the root mean
    squared deviation of mini-batch from full shard gradients.
    """
    if probes < 2:
        raise ValueError("need at least two probes")
    if isinstance(shards, Dataset):
        shards = [ClientShard(1, shards.X, shards.y, np.arange(len(shards)))]
    rng = np.random.default_rng(seed)
    c = np.zeros(task.num_params) if center is None else np.asarray(center, dtype=float)
    points = c + scale * rng.standard_normal((probes, task.num_params))
    L_hat, G_hat, dev2, count = 0.0, 0.0, 0.0, 0
    for shard in shards:
        grads = [task.grad(x, shard.X, shard.y) for x in points]
        for a in range(probes):
            for b in range(a + 1, probes):
                dx = np.linalg.norm(points[a] - points[b])
                if dx > 0:
                    L_hat = max(L_hat, float(np.linalg.norm(grads[a] - grads[b]) / dx))
        for p, x in enumerate(points):
            g = stochastic_gradient(task, x, shard, batch_size, (shard.client_id, p, 0), seed=seed)
            G_hat = max(G_hat, float(np.linalg.norm(g)))
            dev2 += float(np.sum((g - grads[p]) ** 2))
            count += 1
    return ConstantsEstimate(L_hat, G_hat, float(np.sqrt(dev2 / count)), probes, count)
