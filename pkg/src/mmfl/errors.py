"""Exception types raised across the simulator."""


class MMFLError(Exception):
    """Base class for simulator errors."""


class ConfigurationError(MMFLError, ValueError):
    """Invalid experiment, schedule, or signal configuration."""


class PreconditionError(MMFLError, ValueError):
    """A documented precondition of an analytic formula is violated."""


class OutageError(MMFLError):
    """A device's effective beamforming gain fell below the outage floor."""

    def __init__(self, device, gain):
        self.device = int(device)
        self.gain = float(gain)
        super().__init__(f"device {self.device} in outage: |h^H w|^2 = {self.gain:.3e}")


class InitializationError(MMFLError):
    """No usable starting point for the beamforming solver."""


class InfeasibleError(MMFLError):
    """Zero-forcing is impossible for the given dimensions."""


class NumericalRankError(InfeasibleError):
    """The interfering channels are numerically rank deficient."""


class UnsupportedTaskError(MMFLError):
    """The requested analysis needs a strongly convex task."""


class ExperimentError(MMFLError):
    """A failure inside a run, tagged with scheme, seed and round."""

    def __init__(self, scheme, seed, round_index, cause):
        self.scheme = scheme
        self.seed = seed
        self.round = round_index
        self.cause = cause
        where = "" if round_index is None else f", round={round_index}"
        super().__init__(f"scheme={scheme}, seed={seed}{where}: "
                         f"{type(cause).__name__}: {cause}")
