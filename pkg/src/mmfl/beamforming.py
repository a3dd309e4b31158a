"""Multi-group multicast beamforming for the downlink model broadcast.

The design problem minimizes the sum over all devices of the
interference-plus-noise to signal ratio,

    f(W) = sum_i sum_{k in group i} (sum_{j != i} |h_k^H w_j|^2 + s) / |h_k^H w_i|^2,

subject to ``sum_i ||w_i||^2 <= budget``, where ``s`` is the effective
downlink noise. Beamformers are stored as an ``(M, N)`` complex array, one row
per group. Gradients are returned in the same complex layout with the real
gradient w.r.t. ``Re w`` in the real part and w.r.t. ``Im w`` in the imaginary
part, so a gradient step is simply ``W - step * G``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (InfeasibleError, InitializationError, NumericalRankError,
                     OutageError)

OUTAGE_FLOOR = 1e-30


@dataclass
class BeamformerSet:
    w: np.ndarray
    budget: float

    @property
    def power(self):
        return float(np.sum(np.abs(self.w) ** 2))

    @property
    def num_groups(self):
        return self.w.shape[0]

    def is_feasible(self, rtol=1e-9):
        return self.power <= self.budget * (1.0 + rtol)


@dataclass(frozen=True)
class SinrObjectiveInstance:
    """Channel, grouping and effective noise of one frame's design problem.

    ``groups`` holds one array of 0-based device indices (rows of ``h``) per
    beamformer.
    """

    h: np.ndarray
    groups: tuple
    noise: float

    def __post_init__(self):
        if not self.noise >= 0:
            raise ValueError("effective downlink noise must be non-negative")
        members = np.concatenate([np.asarray(g, dtype=int) for g in self.groups])
        if len(np.unique(members)) != len(members):
            raise ValueError("device groups overlap")
        if members.size and (members.min() < 0 or members.max() >= self.h.shape[0]):
            raise ValueError("device index outside the channel matrix")

    @classmethod
    def from_channel(cls, channel, assignment, sigma_d_sq, d_max):
        """Build the instance using ``noise = sigma_d_sq * d_max / 2``."""
        return cls(h=channel.h, groups=tuple(assignment.groups),
                   noise=effective_noise(sigma_d_sq, d_max))

    @property
    def num_groups(self):
        return len(self.groups)

    @property
    def num_antennas(self):
        return self.h.shape[1]

    @property
    def members(self):
        return np.concatenate([np.asarray(g, dtype=int) for g in self.groups])

    def group_of(self):
        """0-based group index per member device, aligned with ``members``."""
        return np.concatenate([np.full(len(g), i) for i, g in enumerate(self.groups)])

    def scaled(self, channel_scale, power_scale):
        """Instance seen by ``W / sqrt(power_scale)`` with ``h / channel_scale``.

        The objective value is unchanged by this rescaling.
        """
        return SinrObjectiveInstance(
            h=self.h / channel_scale, groups=self.groups,
            noise=self.noise / (power_scale * channel_scale ** 2))


def effective_noise(sigma_sq, d_max):
    """Noise variance accumulated over the ``d_max/2`` channel uses."""
    return sigma_sq * d_max / 2.0


def _as_array(W):
    return W.w if isinstance(W, BeamformerSet) else np.asarray(W)


def _gains(W, inst):
    """``P[k, i] = h_k^H w_i`` for member devices ``k`` (rows as in ``members``)."""
    hm = inst.h[inst.members]
    return hm, hm.conj() @ W.T


def _ratio_terms(W, inst, outage_floor):
    hm, P = _gains(W, inst)
    S = np.abs(P) ** 2
    own = inst.group_of()
    rows = np.arange(len(own))
    signal = S[rows, own]
    bad = np.flatnonzero(signal < outage_floor)
    if bad.size:
        k = bad[np.argmin(signal[bad])]
        raise OutageError(inst.members[k], signal[k])
    interference = S.sum(axis=1) - signal
    return hm, P, own, signal, interference


def objective(W, inst, outage_floor=OUTAGE_FLOOR):
    """Sum of inverse SINRs over all grouped devices."""
    W = _as_array(W)
    _, _, _, signal, interference = _ratio_terms(W, inst, outage_floor)
    return float(np.sum((interference + inst.noise) / signal))


def per_device_ratios(W, inst, outage_floor=OUTAGE_FLOOR):
    """Inverse SINR of every grouped device, aligned with ``inst.members``."""
    W = _as_array(W)
    _, _, _, signal, interference = _ratio_terms(W, inst, outage_floor)
    return (interference + inst.noise) / signal


def gradient(W, inst, outage_floor=OUTAGE_FLOOR):
    """Real gradient of :func:`objective`, packed as ``dRe + 1j*dIm``."""
    W = _as_array(W)
    hm, P, own, signal, interference = _ratio_terms(W, inst, outage_floor)
    rows = np.arange(len(own))
    # df/dS[k, j]: 1/S_own for interferers, -(I + s)/S_own^2 for the own group
    coef = np.repeat((1.0 / signal)[:, None], W.shape[0], axis=1)
    coef[rows, own] = -(interference + inst.noise) / signal ** 2
    # dS[k, j]/d conj(w_j) = h_k h_k^H w_j; the real gradient is twice that
    return 2.0 * (coef * P).T @ hm


def stack_real(G):
    """Flatten a complex ``(M, N)`` array to ``[Re(all), Im(all)]``."""
    G = np.asarray(G)
    return np.concatenate([G.real.ravel(), G.imag.ravel()])


def unstack_real(x, shape):
    n = int(np.prod(shape))
    return (x[:n] + 1j * x[n:]).reshape(shape)


def project(W, budget):
    """Euclidean projection onto ``{W : sum_i ||w_i||^2 <= budget}``."""
    if budget <= 0:
        raise ValueError("power budget must be positive")
    is_set = isinstance(W, BeamformerSet)
    w = _as_array(W)
    power = float(np.sum(np.abs(w) ** 2))
    if power > budget:
        w = w * np.sqrt(budget / power)
    return BeamformerSet(w, budget) if is_set else w


def _real_inner(a, b):
    return float(np.real(np.vdot(a, b)))


# -- baselines ---------------------------------------------------------------

def zf_beamformers(inst, budget, rank_tol=1e-10):
    """Zero-forcing multicast beamformers with equal power per group.

    Each group's member channels are projected onto the orthogonal complement
    of all non-member channels; the projections are summed, normalized and
    given ``budget / M`` power.
    """
    h = inst.h
    K, N = h.shape
    members = inst.members
    if N < len(members):
        raise InfeasibleError(f"zero-forcing needs N >= K (N={N}, K={len(members)})")
    M = inst.num_groups
    w = np.zeros((M, N), dtype=complex)
    for i, g in enumerate(inst.groups):
        g = np.asarray(g, dtype=int)
        others = np.setdiff1d(members, g)
        hg = h[g]
        if others.size:
            # h_k^H w = 0  <=>  w orthogonal to h_k in C^N
            B = h[others].T
            U, s, _ = np.linalg.svd(B, full_matrices=False)
            if s[-1] <= rank_tol * max(s[0], np.finfo(float).tiny):
                raise NumericalRankError(
                    f"interfering channels for group {i} are rank deficient "
                    f"(sigma_min/sigma_max = {s[-1] / s[0]:.2e})")
            proj = hg.T - U @ (U.conj().T @ hg.T)
        else:
            proj = hg.T
        v = proj.sum(axis=1)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise NumericalRankError(f"projected channels of group {i} cancel")
        w[i] = v / norm
    return BeamformerSet(w * np.sqrt(budget / M), budget)


def matched_filter_init(inst, budget):
    """Group-wise matched filters ``w_i ~ sum_{k in group i} h_k`` at full power."""
    M, N = inst.num_groups, inst.num_antennas
    w = np.zeros((M, N), dtype=complex)
    for i, g in enumerate(inst.groups):
        v = inst.h[np.asarray(g, dtype=int)].sum(axis=0)
        n = np.linalg.norm(v)
        if n > 0:
            w[i] = v / n
    power = np.sum(np.abs(w) ** 2)
    if power == 0:
        return BeamformerSet(w, budget)
    return BeamformerSet(w * np.sqrt(budget / power), budget)


def random_init(inst, budget, rng):
    M, N = inst.num_groups, inst.num_antennas
    w = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    return BeamformerSet(w * np.sqrt(budget / np.sum(np.abs(w) ** 2)), budget)


# -- projected gradient descent ------------------------------------------------

@dataclass
class PGDResult:
    beamformers: BeamformerSet
    objective: float
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)
    init: str = ""

    @property
    def w(self):
        return self.beamformers.w


def _safe_objective(W, inst, outage_floor):
    try:
        return objective(W, inst, outage_floor)
    except OutageError:
        return np.inf


def _backtrack_armijo(inst, V, f, G, alpha, armijo, shrink, outage_floor):
    while alpha >= 1e-30:
        V_new = project(V - alpha * G, 1.0)
        f_new = _safe_objective(V_new, inst, outage_floor)
        if f_new <= f + armijo * _real_inner(G, V_new - V):
            return V_new, f_new, alpha
        alpha *= shrink
    return None, f, 0.0


def _pgd_normalized(inst, V0, max_iters, tol, step_rule, armijo, shrink,
                    initial_step, outage_floor):
    """PGD on the unit-power ball for a pre-scaled instance.

    Every rule only ever accepts points that do not increase the objective,
    so the recorded trace is non-increasing.
    """
    if step_rule not in ("accelerated", "bb", "armijo"):
        raise ValueError(f"unknown step rule {step_rule!r}")
    V = project(V0, 1.0)
    f = objective(V, inst, outage_floor)
    G = gradient(V, inst, outage_floor)
    trace = []
    prev = None
    step = 0.0
    # accelerated rule state: extrapolated point, momentum weight, curvature guess
    Y, fy, Gy, tk, lip = V, f, G, 1.0, 1.0 / initial_step
    converged = False
    for it in range(max_iters + 1):
        pg_norm = float(np.linalg.norm(V - project(V - G, 1.0)))
        trace.append((it, f, pg_norm, step))
        if pg_norm <= tol * (1.0 + abs(f)):
            converged = True
            break
        if it == max_iters:
            break

        if step_rule == "accelerated":
            while True:
                Z = project(Y - Gy / lip, 1.0)
                fz = _safe_objective(Z, inst, outage_floor)
                D = Z - Y
                if fz <= fy + _real_inner(Gy, D) + 0.5 * lip * _real_inner(D, D):
                    break
                lip *= 1.0 / shrink
                if lip > 1e30:
                    break
            if lip > 1e30:
                break
            step = 1.0 / lip
            if fz <= f:
                V_old, V, f = V, Z, fz
                G = gradient(V, inst, outage_floor)
                t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
                Y = V + ((tk - 1.0) / t_next) * (V - V_old)
                tk = t_next
                fy = _safe_objective(Y, inst, outage_floor)
                if np.isfinite(fy):
                    Gy = gradient(Y, inst, outage_floor)
                else:
                    Y, fy, Gy, tk = V, f, G, 1.0
            else:
                # momentum overshot: restart from the current iterate
                Y, fy, Gy, tk = V, f, G, 1.0
            lip *= 0.9
            continue

        alpha = initial_step
        if step_rule == "bb" and prev is not None:
            s = V - prev[0]
            y = G - prev[1]
            sy = _real_inner(s, y)
            if sy > 0:
                alpha = float(np.clip(_real_inner(s, s) / sy, 1e-12, 1e12))
        V_new, f_new, alpha = _backtrack_armijo(inst, V, f, G, alpha, armijo,
                                                shrink, outage_floor)
        if V_new is None:
            # no decrease representable in floating point
            break
        prev = (V, G)
        V, f, step = V_new, f_new, alpha
        G = gradient(V, inst, outage_floor)
    return V, f, converged, trace


def solve_pgd(inst, budget, max_iters=500, tol=1e-6, step_rule="accelerated",
              init="auto", armijo=1e-4, shrink=0.5, initial_step=1.0,
              outage_floor=OUTAGE_FLOOR, rng=None):
    """Minimize the inverse-SINR sum by projected gradient descent.

    Parameters
    ----------
    inst : SinrObjectiveInstance
    budget : float
        Total transmit power bound ``sum_i ||w_i||^2``.
    step_rule : {"accelerated", "bb", "armijo"}
        ``"armijo"`` starts every Armijo backtracking search at
        ``initial_step``; ``"bb"`` starts it at the Barzilai-Borwein step.
        ``"accelerated"`` takes projected steps from a momentum point with a
        backtracked curvature estimate and restarts the momentum whenever the
        step would raise the objective. All rules are monotone.
    init : {"auto", "mf", "zf", "random"} or array
        ``"auto"`` runs from the matched-filter point and, when ``N >= K``,
        from the zero-forcing point, and keeps the better result.

    The problem is solved internally with the channel normalized to unit
    peak row norm and the power normalized to one; the objective is invariant
    under that rescaling. Reported gradient norms refer to the normalized
    problem.
    """
    if budget <= 0:
        raise ValueError("power budget must be positive")
    scale = float(np.sqrt(np.max(np.sum(np.abs(inst.h[inst.members]) ** 2, axis=1))))
    if scale == 0:
        raise InitializationError("all channels are zero")
    norm_inst = inst.scaled(scale, budget)

    candidates = []
    if isinstance(init, str):
        names = {"auto": ["mf", "zf"], "mf": ["mf"], "zf": ["zf"],
                 "random": ["random"]}.get(init)
        if names is None:
            raise ValueError(f"unknown init {init!r}")
        for name in names:
            try:
                if name == "mf":
                    W0 = matched_filter_init(inst, budget).w
                elif name == "zf":
                    W0 = zf_beamformers(inst, budget).w
                else:
                    W0 = random_init(inst, budget, rng or np.random.default_rng(0)).w
            except InfeasibleError:
                if init == "zf":
                    raise
                continue
            candidates.append((name, W0))
    else:
        candidates.append(("given", np.asarray(init, dtype=complex)))

    usable = [(n, W0) for n, W0 in candidates
              if np.isfinite(_safe_objective(W0 / np.sqrt(budget), norm_inst, outage_floor))]
    if not usable and isinstance(init, str) and init == "auto":
        fallback = random_init(inst, budget, rng or np.random.default_rng(0)).w
        if np.isfinite(_safe_objective(fallback / np.sqrt(budget), norm_inst, outage_floor)):
            usable = [("random", fallback)]
    if not usable:
        raise InitializationError("every initial point is in outage")

    best = None
    for name, W0 in usable:
        V, f, conv, trace = _pgd_normalized(
            norm_inst, W0 / np.sqrt(budget), max_iters, tol, step_rule,
            armijo, shrink, initial_step, outage_floor)
        if best is None or f < best[1]:
            best = (name, f, conv, trace, V)
    name, f, conv, trace, V = best
    bf = BeamformerSet(V * np.sqrt(budget), budget)
    return PGDResult(beamformers=bf, objective=f, converged=conv,
                     iterations=trace[-1][0], trace=trace, init=name)


def snr_max_single(h, budget, noise, **opts):
    """Single multicast beamformer serving all rows of ``h``.

    Minimizes ``sum_k noise / |h_k^H w|^2`` under ``||w||^2 <= budget`` with the
    same PGD machinery (the one-group case of :func:`solve_pgd`).
    """
    h = np.atleast_2d(h)
    inst = SinrObjectiveInstance(h=h, groups=(np.arange(h.shape[0]),), noise=noise)
    return solve_pgd(inst, budget, **opts)


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "objective", "grad_norm", "step"])
        for it, f, g, s in trace:
            writer.writerow([it, repr(float(f)), repr(float(g)), repr(float(s))])
