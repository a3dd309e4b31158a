"""Device grouping and round-robin device-model assignment.

Group and model indices follow the 1-based convention of the assignment
rule; device identifiers are 0-based row indices into the channel matrix.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class SchedulePolicy:
    num_models: int
    num_devices: int

    def __post_init__(self):
        if self.num_models < 1 or self.num_devices < 1:
            raise ConfigurationError("need at least one model and one device")
        if self.num_devices % self.num_models:
            raise ConfigurationError(
                f"K={self.num_devices} devices cannot be split into "
                f"M={self.num_models} equal groups"
            )

    @property
    def rounds_per_frame(self):
        return self.num_models

    @property
    def group_size(self):
        return self.num_devices // self.num_models

    def frame_of(self, t):
        return t // self.num_models


@dataclass(frozen=True)
class GroupAssignment:
    """Partition of the devices into ``M`` equal groups for one frame."""

    frame_index: int
    groups: tuple

    @property
    def num_groups(self):
        return len(self.groups)

    @property
    def num_devices(self):
        return sum(len(g) for g in self.groups)

    def group_of(self):
        """Array mapping device id -> 0-based group index."""
        out = np.empty(self.num_devices, dtype=int)
        for i, g in enumerate(self.groups):
            out[g] = i
        return out


def partition_devices(K, M, rng, frame_index=0):
    """Uniformly random partition of ``K`` devices into ``M`` equal groups.

    A uniform permutation is sliced into ``M`` consecutive blocks; members of
    each block are stored sorted so downstream sums run in a fixed order.
    """
    SchedulePolicy(M, K)
    perm = rng.permutation(K)
    size = K // M
    groups = tuple(
        np.sort(perm[i * size:(i + 1) * size]) for i in range(M)
    )
    return GroupAssignment(frame_index=frame_index, groups=groups)


def assigned_model(i, t, M):
    """Model trained by group ``i`` (1..M) in round ``t`` (round robin)."""
    if M < 1:
        raise ValueError("M must be positive")
    if not 1 <= i <= M:
        raise ValueError(f"group index {i} outside 1..{M}")
    if t < 0:
        raise ValueError("round index must be non-negative")
    return ((M + i - (t % M) - 1) % M) + 1


def group_for_model(m, t, M):
    """Group (1..M) that trains model ``m`` in round ``t``."""
    if M < 1:
        raise ValueError("M must be positive")
    if not 1 <= m <= M:
        raise ValueError(f"model index {m} outside 1..{M}")
    if t < 0:
        raise ValueError("round index must be non-negative")
    return ((m - 1 + t) % M) + 1


def assignment_table(t, M):
    """0-based model index for each 0-based group in round ``t``."""
    return np.array([assigned_model(i, t, M) - 1 for i in range(1, M + 1)])
