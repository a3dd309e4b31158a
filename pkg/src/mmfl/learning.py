"""Local training: losses, mini-batch SGD and reference optima.

Loss objects expose batch-mean ``loss(theta, X, y)`` and ``grad(theta, X, y)``;
the strongly convex ones also give per-sample gradients and curvature bounds
so the convergence constants can be computed.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, UnsupportedTaskError


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.X) != len(self.y):
            raise ValueError("features and labels differ in length")

    def __len__(self):
        return len(self.y)


def split_evenly(data, K, rng):
    """Shuffle and split into ``K`` disjoint shards of ``len(data) // K`` samples.

    Leftover samples beyond ``K * (len(data) // K)`` are dropped.
    """
    n = len(data) // K
    if n == 0:
        raise ConfigurationError(f"{len(data)} samples cannot feed {K} devices")
    perm = rng.permutation(len(data))
    return [Dataset(data.X[perm[k * n:(k + 1) * n]], data.y[perm[k * n:(k + 1) * n]])
            for k in range(K)]


class RidgeLeastSquares:
    """``0.5 * (x.theta - y)^2 + 0.5 * reg * ||theta||^2`` per sample."""

    strongly_convex = True

    def __init__(self, reg):
        if reg < 0:
            raise ValueError("regularization must be non-negative")
        self.reg = float(reg)

    def loss(self, theta, X, y):
        r = X @ theta - y
        return 0.5 * float(np.mean(r * r)) + 0.5 * self.reg * float(theta @ theta)

    def grad(self, theta, X, y):
        return X.T @ (X @ theta - y) / len(y) + self.reg * theta

    def sample_grads(self, theta, X, y):
        return (X @ theta - y)[:, None] * X + self.reg * theta

    def curvature(self, X):
        """(lambda_min, lambda_max) of the exact Hessian ``X^T X / n + reg I``."""
        ev = np.linalg.eigvalsh(X.T @ X / len(X) + self.reg * np.eye(X.shape[1]))
        return float(ev[0]), float(ev[-1])

    def solve(self, X, y):
        A = X.T @ X / len(y) + self.reg * np.eye(X.shape[1])
        return np.linalg.solve(A, X.T @ y / len(y))


class RidgeLogistic:
    """``log(1 + exp(-y x.theta)) + 0.5 * reg * ||theta||^2`` with labels in {-1, +1}."""

    strongly_convex = True

    def __init__(self, reg):
        if reg <= 0:
            raise ValueError("logistic regression needs reg > 0 for strong convexity")
        self.reg = float(reg)

    def loss(self, theta, X, y):
        z = y * (X @ theta)
        return float(np.mean(np.logaddexp(0.0, -z))) + 0.5 * self.reg * float(theta @ theta)

    def grad(self, theta, X, y):
        z = y * (X @ theta)
        return -(X.T @ (y * expit(-z))) / len(y) + self.reg * theta

    def sample_grads(self, theta, X, y):
        z = y * (X @ theta)
        return -(y * expit(-z))[:, None] * X + self.reg * theta

    def curvature(self, X):
        """Global bounds: the logistic curvature lies in ``[0, 1/4]``."""
        top = np.linalg.eigvalsh(X.T @ X / len(X))[-1]
        return self.reg, float(top / 4.0 + self.reg)

    def hessian(self, theta, X, y):
        p = expit(X @ theta)
        d = p * (1.0 - p)
        return (X.T * d) @ X / len(y) + self.reg * np.eye(X.shape[1])

    def solve(self, X, y, tol=1e-10, max_iters=100):
        theta = np.zeros(X.shape[1])
        for _ in range(max_iters):
            g = self.grad(theta, X, y)
            if np.linalg.norm(g) <= tol:
                break
            step = np.linalg.solve(self.hessian(theta, X, y), g)
            # damped Newton: halve until the loss does not increase
            t, f0 = 1.0, self.loss(theta, X, y)
            while self.loss(theta - t * step, X, y) > f0 and t > 1e-12:
                t *= 0.5
            theta = theta - t * step
        return theta


def local_sgd(theta0, shard, loss, local_iters, batch_size, lr, rng, return_path=False):
    """``local_iters`` mini-batch SGD steps from ``theta0`` on one device's shard.

    Each batch is drawn uniformly without replacement; batches of different
    iterations are independent.
    """
    if len(shard) == 0:
        raise ConfigurationError("device shard is empty")
    if not 1 <= batch_size <= len(shard):
        raise ConfigurationError(f"batch size {batch_size} not in 1..{len(shard)}")
    theta = np.array(theta0, dtype=float)
    full = batch_size == len(shard)
    path = [theta.copy()] if return_path else None
    for _ in range(local_iters):
        if full:
            Xb, yb = shard.X, shard.y
        else:
            idx = rng.choice(len(shard), size=batch_size, replace=False)
            Xb, yb = shard.X[idx], shard.y[idx]
        theta = theta - lr * loss.grad(theta, Xb, yb)
        if return_path:
            path.append(theta.copy())
    return (theta, path) if return_path else theta


def global_loss(theta, shards, loss):
    """Sample-size weighted average of the local losses."""
    sizes = np.array([len(s) for s in shards], dtype=float)
    local = np.array([loss.loss(theta, s.X, s.y) for s in shards])
    return float(sizes @ local / sizes.sum())


def global_grad(theta, shards, loss):
    sizes = np.array([len(s) for s in shards], dtype=float)
    grads = np.array([loss.grad(theta, s.X, s.y) for s in shards])
    return sizes @ grads / sizes.sum()


def pooled(shards):
    return Dataset(np.concatenate([s.X for s in shards]), np.concatenate([s.y for s in shards]))


def solve_optimal(loss, shards):
    """Minimizer of the global loss and its value, for strongly convex tasks."""
    if not getattr(loss, "strongly_convex", False):
        raise UnsupportedTaskError(f"{type(loss).__name__} has no certified optimum")
    data = pooled(shards)
    theta = loss.solve(data.X, data.y)
    return theta, global_loss(theta, shards, loss)


def make_regression(n, dim, rng, label_noise=0.1, feature_scale=1.0):
    """Gaussian features with a random planted model and Gaussian label noise."""
    X = feature_scale * rng.standard_normal((n, dim))
    w = rng.standard_normal(dim)
    y = X @ w + label_noise * rng.standard_normal(n)
    return Dataset(X, y)


def make_classification(n, dim, rng, label_noise=0.1, feature_scale=1.0):
    """Labels in {-1, +1} from a random hyperplane, flipped with prob. ``label_noise``."""
    X = feature_scale * rng.standard_normal((n, dim))
    w = rng.standard_normal(dim)
    y = np.sign(X @ w)
    y[y == 0] = 1.0
    flip = rng.random(n) < label_noise
    y[flip] *= -1.0
    return Dataset(X, y)
