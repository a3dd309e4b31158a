"""Optimality-gap bound for multi-model training and its ingredients.

After ``S`` frames the expected squared distance to the optimum is bounded by

    gamma * prod_n g[n] + sum_n (h[n] + c[n]) * prod_{s>n} g[s],

where ``gamma`` is the initial squared distance, ``g[n] = 4 (1 - eta_n lam)^{2J}``
is the per-frame contraction factor, ``h[n] = 4 r M K f_n`` grows with the
frame's beamforming objective ``f_n`` and ``c[n]`` collects the SGD variance,
gradient divergence and uplink noise of frame ``n``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import beamforming
from .errors import PreconditionError, UnsupportedTaskError
from .learning import local_sgd


@dataclass(frozen=True)
class AssumptionConstants:
    L: float
    lam: float
    mu: float
    beta1: float
    beta2: float
    phi: float
    r: float
    margin: float = 1.0

    def __post_init__(self):
        values = (self.L, self.lam, self.mu, self.beta2, self.phi, self.r)
        if any(v < 0 for v in values):
            raise ValueError("assumption constants must be non-negative")
        if self.beta1 < 1:
            raise ValueError("beta1 must be at least 1")
        if self.lam > self.L * (1 + 1e-12):
            raise ValueError("strong convexity cannot exceed smoothness")

    def to_dict(self):
        return asdict(self)


@dataclass
class BoundTerms:
    gamma: float
    g: list
    h: list
    c: list
    lambda_term: float
    total: float

    def to_dict(self):
        return {"gamma": self.gamma, "g": list(self.g), "h": list(self.h),
                "c": list(self.c), "lambda_term": self.lambda_term, "total": self.total}


def g_factor(eta, lam, local_iters):
    """Per-frame contraction factor ``4 (1 - eta lam)^{2J}``."""
    if not 0 <= eta * lam < 1:
        raise PreconditionError(f"need eta < 1/lambda (eta={eta}, lambda={lam})")
    return 4.0 * (1.0 - eta * lam) ** (2 * local_iters)


def c_term(eta, local_iters, K, consts, M, sigma_u_tilde_sq):
    """Per-frame constant from SGD variance, gradient divergence and uplink noise."""
    J = local_iters
    return (4.0 * eta ** 2 * J ** 3 * K ** 2 * (consts.beta1 * consts.mu + consts.beta2)
            + 4.0 * eta ** 2 * J ** 2 * consts.phi
            + 4.0 * M * sigma_u_tilde_sq)


def h_term(W, inst, r, M, K):
    """Beamforming-dependent term ``4 r M K f(W)``."""
    return 4.0 * r * M * K * beamforming.objective(W, inst)


def error_energy_bound(W, inst, r, M, K, sigma_u_tilde_sq):
    """Bound on the expected energy of one frame's accumulated model error."""
    return r * M * K * beamforming.objective(W, inst) + M * sigma_u_tilde_sq


def _tail_products(g):
    """``out[n] = prod_{s>n} g[s]`` (empty product is 1)."""
    out = np.ones(len(g))
    acc = 1.0
    for n in range(len(g) - 1, -1, -1):
        out[n] = acc
        acc *= g[n]
    return out


def gap_bound(gamma, g, h, c, S=None):
    """Evaluate the optimality-gap bound after ``S`` frames."""
    S = len(g) if S is None else S
    if not len(g) == len(h) == len(c) == S:
        raise ValueError(f"need {S} values of G, H and C, got {len(g)}, {len(h)}, {len(c)}")
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    c = np.asarray(c, dtype=float)
    if S == 0:
        return BoundTerms(float(gamma), [], [], [], 0.0, float(gamma))
    tails = _tail_products(g)
    lam_term = float(c @ tails)
    total = float(gamma * np.prod(g) + h @ tails + lam_term)
    return BoundTerms(gamma=float(gamma), g=g.tolist(), h=h.tolist(), c=c.tolist(),
                      lambda_term=lam_term, total=total)


def estimate_constants(loss, shards, trajectory, groups=None, weights=None, *,
                       local_iters, batch_size, lr, rng, margin=1.1,
                       max_points=12, max_samples=200):
    """Instantiate the smoothness, boundedness and divergence constants.

    Parameters
    ----------
    loss : strongly convex loss with ``curvature`` and ``sample_grads``.
    shards : per-device datasets.
    trajectory : global models observed during training (real vectors).
    groups : device-index arrays used as aggregation groups for the
        divergence constant; ``weights[k]`` plays the role of ``c_k``.

    ``L`` and ``lam`` are exact curvature bounds. ``r``, ``mu``, ``beta2`` and
    ``phi`` are suprema over sampled models inflated by ``margin``; ``beta1`` is
    fixed at 1. The divergence constant is probed from ``max_points`` models of
    the trajectory, and ``mu`` and ``beta2`` at up to ``max_samples`` models
    (trajectory plus local SGD iterates). The mini-batch second moment is the
    exact expectation for sampling without replacement.
    """
    if not getattr(loss, "strongly_convex", False) or not hasattr(loss, "curvature"):
        raise UnsupportedTaskError(f"{type(loss).__name__} is not strongly convex")
    K = len(shards)
    if groups is None:
        groups = [np.arange(K)]
    if weights is None:
        weights = np.full(K, 1.0 / K)
    weights = np.asarray(weights, dtype=float)

    curv = [loss.curvature(s.X) for s in shards]
    lam = min(c[0] for c in curv)
    L = max(c[1] for c in curv)

    trajectory = [np.asarray(t, dtype=float) for t in trajectory]
    r = max(float(t @ t) for t in trajectory)
    pick = np.unique(np.linspace(0, len(trajectory) - 1, min(max_points, len(trajectory))).astype(int))
    anchors = [trajectory[i] for i in pick]

    sizes = np.array([len(s) for s in shards], dtype=float)

    def full_grad(theta):
        return sizes @ np.array([loss.grad(theta, s.X, s.y) for s in shards]) / sizes.sum()

    unique_groups = {tuple(sorted(int(k) for k in g)) for g in groups}
    groups = [np.array(g) for g in sorted(unique_groups)]

    phi = 0.0
    points = list(anchors)
    for theta in anchors:
        g_global = full_grad(theta)
        for group in groups:
            paths = {}
            for k in group:
                _, path = local_sgd(theta, shards[k], loss, local_iters, batch_size, lr,
                                    rng, return_path=True)
                paths[int(k)] = path
                points.extend(path[1:])
            for tau in range(local_iters + 1):
                mix = sum(weights[k] * loss.grad(paths[int(k)][tau], shards[k].X, shards[k].y)
                          for k in group)
                phi = max(phi, float(np.sum((g_global - mix) ** 2)))

    if len(points) > max_samples:
        keep = rng.choice(len(points), size=max_samples, replace=False)
        points = [points[i] for i in np.sort(keep)]
    mu = 0.0
    beta2 = 0.0
    for theta in points:
        for s in shards:
            n = len(s)
            g_full = loss.grad(theta, s.X, s.y)
            per_sample = loss.sample_grads(theta, s.X, s.y)
            sq = np.sum(per_sample ** 2, axis=1)
            mean_sq = float(g_full @ g_full)
            beta2 = max(beta2, float(sq.max() - mean_sq))
            spread = float(np.mean(np.sum((per_sample - g_full) ** 2, axis=1)))
            shrink = 0.0 if n == 1 else (n - batch_size) / (batch_size * (n - 1))
            mu = max(mu, mean_sq + shrink * spread)

    return AssumptionConstants(L=L, lam=lam, mu=margin * mu, beta1=1.0,
                               beta2=margin * max(beta2, 0.0), phi=margin * phi,
                               r=margin * r, margin=margin)
