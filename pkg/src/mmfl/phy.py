"""Signal-level downlink/uplink pipeline for one communication round.

A real model of dimension ``D`` travels as ``ceil(D/2)`` complex symbols: the
first half of the (zero-extended) vector in the real parts and the second
half in the imaginary parts. All models share ``total_len`` channel uses; each
one sits at its own random offset and is zero elsewhere.
"""

from dataclasses import dataclass, field

import numpy as np

from .beamforming import OUTAGE_FLOOR
from .errors import ConfigurationError, OutageError
from .scheduler import assignment_table

NORM_GUARD = 1e-15


def complex_length(dim):
    return (int(dim) + 1) // 2


def to_complex(theta):
    """Pack a real vector into complex symbols (odd lengths get a trailing 0)."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size % 2:
        theta = np.append(theta, 0.0)
    half = theta.size // 2
    return theta[:half] + 1j * theta[half:]


def from_complex(c, dim):
    """Inverse of :func:`to_complex` truncated to ``dim`` real entries."""
    c = np.asarray(c).ravel()
    if c.size != complex_length(dim):
        raise ValueError(f"{c.size} symbols cannot hold a {dim}-dimensional model")
    return np.concatenate([c.real, c.imag])[:dim].astype(float)


def realizable(c, dim):
    """Part of a complex error vector that survives unpacking to ``dim`` reals.

    For odd ``dim`` the imaginary part of the last symbol is discarded.
    """
    c = np.array(c, dtype=complex)
    if dim % 2:
        c[-1] = c[-1].real
    return c


def cn_noise(rng, var, size):
    """``size`` i.i.d. circularly symmetric complex Gaussians with variance ``var``."""
    if var == 0:
        return np.zeros(size, dtype=complex)
    return np.sqrt(var / 2.0) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


@dataclass(frozen=True)
class PaddedSignal:
    payload: np.ndarray
    offset: int
    total_len: int

    def __post_init__(self):
        if self.offset < 0 or self.offset + len(self.payload) > self.total_len:
            raise ValueError("payload does not fit in the padded signal")

    @property
    def length(self):
        return len(self.payload)

    def full(self):
        out = np.zeros(self.total_len, dtype=complex)
        out[self.offset:self.offset + self.length] = self.payload
        return out

    def window(self, offset, length):
        """Slice ``[offset, offset + length)`` of the padded signal."""
        out = np.zeros(length, dtype=complex)
        lo = max(offset, self.offset)
        hi = min(offset + length, self.offset + self.length)
        if hi > lo:
            out[lo - offset:hi - offset] = self.payload[lo - self.offset:hi - self.offset]
        return out


def zero_pad(c, total_len, rng):
    """Place ``c`` at a uniformly random offset inside ``total_len`` channel uses."""
    c = np.asarray(c, dtype=complex)
    slack = total_len - len(c)
    if slack < 0:
        raise ConfigurationError(
            f"model needs {len(c)} channel uses but only {total_len} are available")
    offset = int(rng.integers(0, slack + 1))
    return PaddedSignal(payload=c, offset=offset, total_len=total_len)


def _inv_norm(norm):
    return 0.0 if norm < NORM_GUARD else 1.0 / norm


def _downlink_parts(W, h_k, group, signals, norms):
    """Signal and interference parts of the received vector (noise excluded)."""
    target = signals[group]
    gains = W.conj() @ h_k  # (w_j)^H h_k for every group j
    wanted = gains[group] * target.payload * _inv_norm(norms[group])
    interference = np.zeros(target.length, dtype=complex)
    for j, sig in enumerate(signals):
        if j == group:
            continue
        interference += gains[j] * sig.window(target.offset, target.length) * _inv_norm(norms[j])
    return wanted, interference


def downlink_receive(W, h_k, group, signals, norms, sigma_d_sq, rng,
                     outage_floor=OUTAGE_FLOOR, device=None):
    """Received symbols of device ``h_k`` (member of ``group``) over its model's window.

    ``signals[j]`` and ``norms[j]`` describe the padded model sent to group
    ``j`` and the norm of its complex representation.
    """
    W = np.asarray(W)
    s = abs(np.vdot(h_k, W[group])) ** 2
    if s < outage_floor:
        raise OutageError(-1 if device is None else device, s)
    wanted, interference = _downlink_parts(W, h_k, group, signals, norms)
    return wanted + interference + cn_noise(rng, sigma_d_sq, len(wanted))


def scaling_factor(h_k, w_i, norm, outage_floor=OUTAGE_FLOOR):
    """Receiver scaling ``h^H w * ||theta|| / |h^H w|^2`` sent to the device."""
    g = np.vdot(h_k, w_i)
    s = abs(g) ** 2
    if s < outage_floor:
        raise OutageError(-1, s)
    if norm < NORM_GUARD:
        return 0.0
    return g * norm / s


def post_process(u, h_k, w_i, norm, dim, outage_floor=OUTAGE_FLOOR):
    """Device estimate of the real model from its received symbols."""
    return from_complex(scaling_factor(h_k, w_i, norm, outage_floor) * np.asarray(u), dim)


def uplink_aggregate(local_models, weights, sigma_u_sq, rng, atol=1e-12):
    """Over-the-air weighted sum of complex local models plus receiver noise."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or np.any(weights > 1) or abs(weights.sum() - 1.0) > atol:
        raise ConfigurationError(f"uplink weights must lie in [0, 1] and sum to 1, got {weights}")
    stacked = np.asarray(local_models, dtype=complex)
    agg = weights @ stacked
    return agg + cn_noise(rng, sigma_u_sq, agg.shape[0])


def uniform_weights(assignment):
    """Weights ``1/|group|`` per device (``M/K`` for equal groups)."""
    rho = np.zeros(assignment.num_devices)
    for g in assignment.groups:
        rho[g] = 1.0 / len(g)
    return rho


@dataclass
class ModelRoundTrace:
    """White-box decomposition of one model's update in one round.

    ``new = old + local_delta + dl_noise + ul_noise + interference`` holds for
    the complex representations, where every term is the weighted group sum
    that enters the aggregate.
    """

    model: int
    group: int
    old: np.ndarray
    new: np.ndarray
    local_delta: np.ndarray
    dl_noise: np.ndarray
    ul_noise: np.ndarray
    interference: np.ndarray
    offset: int = 0

    @property
    def error(self):
        return self.dl_noise + self.ul_noise + self.interference


@dataclass
class RoundResult:
    models: list
    traces: list = field(default_factory=list)


def global_round(models, W, h, assignment, t, local_update, weights,
                 sigma_d_sq, sigma_u_sq, streams, total_len=None,
                 schedule=None, outage_floor=OUTAGE_FLOOR):
    """One downlink -> local update -> uplink round for all models.

    Parameters
    ----------
    models : list of real arrays, indexed by 0-based model id.
    W : (M, N) complex beamformers, one row per group, or ``None`` for ideal
        links (perfect downlink recovery and noiseless aggregation).
    h : (K, N) complex channel of the current frame (ignored when ``W`` is None).
    assignment : GroupAssignment of the current frame.
    local_update : callable ``(model, device, theta_hat, rng) -> theta``.
    weights : per-device uplink weights; each group's weights sum to one.
    streams : SeedStreams supplying keyed generators.
    schedule : 0-based model id per group; defaults to the round-robin table.
        Models not scheduled keep their parameters.
    """
    dims = [len(m) for m in models]
    if total_len is None:
        total_len = max(complex_length(d) for d in dims)
    table = assignment_table(t, len(models)) if schedule is None else np.asarray(schedule)
    if len(table) != assignment.num_groups:
        raise ConfigurationError("schedule must name one model per device group")
    weights = np.asarray(weights, dtype=float)

    complex_models = [to_complex(m) for m in models]
    # per group: norm and padded signal of the model it carries
    norms = [float(np.linalg.norm(complex_models[m])) for m in table]
    signals = [zero_pad(complex_models[m], total_len, streams.rng("pad", t, m))
               for m in table]

    new_models = list(models)
    traces = []
    for i, group in enumerate(assignment.groups):
        m = int(table[i])
        dim = dims[m]
        old = complex_models[m]
        rho = weights[group]
        local_complex = []
        delta = np.zeros_like(old)
        dl_noise = np.zeros_like(old)
        interference = np.zeros_like(old)
        for k, r in zip(group, rho):
            k = int(k)
            if W is None:
                theta_hat = models[m].copy()
            else:
                rng_dl = streams.rng("dl", t, k)
                g = np.vdot(h[k], W[i])
                if abs(g) ** 2 < outage_floor:
                    raise OutageError(k, abs(g) ** 2)
                wanted, interf = _downlink_parts(W, h[k], i, signals, norms)
                noise = cn_noise(rng_dl, sigma_d_sq, len(wanted))
                scale = scaling_factor(h[k], W[i], norms[i], outage_floor)
                theta_hat = from_complex(scale * (wanted + interf + noise), dim)
                dl_noise += r * realizable(scale * noise, dim)
                interference += r * realizable(scale * interf, dim)
            theta_local = local_update(m, k, theta_hat, streams.rng("sgd", t, k))
            c_local = to_complex(theta_local)
            local_complex.append(c_local)
            delta += r * (c_local - to_complex(theta_hat))
        agg = uplink_aggregate(local_complex, rho, 0.0 if W is None else sigma_u_sq,
                               streams.rng("ul", t, m))
        ul = realizable(agg - np.asarray(rho) @ np.asarray(local_complex), dim)
        agg = realizable(agg, dim)
        new_models[m] = from_complex(agg, dim)
        traces.append(ModelRoundTrace(model=m, group=i, old=old, new=to_complex(new_models[m]),
                                      local_delta=delta, dl_noise=dl_noise, ul_noise=ul,
                                      interference=interference, offset=signals[i].offset))
    return RoundResult(models=new_models, traces=traces)
