"""Experiment configuration loaded from a JSON file."""

import json
from dataclasses import asdict, dataclass, field, fields

from .channel import ChannelParams
from .errors import ConfigurationError

SCHEMES = ("multimodel", "zf", "ideal", "singlemodel")
TASK_TYPES = ("synthetic", "mnist", "mnist-modelA", "mnist-modelB")


@dataclass
class TaskSpec:
    type: str = "synthetic"
    loss: str = "ridge_ls"
    dims: list = field(default_factory=lambda: [20])
    samples_per_device: int = 50
    reg: float = 0.1
    label_noise: float = 0.1
    feature_scale: float = 1.0
    init_scale: float = 1.0
    # MNIST tasks
    models: list = field(default_factory=list)
    mnist_dir: str = ""
    test_samples: int = 0
    loss_samples: int = 2000

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown task fields: {sorted(unknown)}")
        d = dict(d)
        if "dim" in d:
            raise ConfigurationError("use 'dims' (list, one entry per model or a single entry)")
        return cls(**d)


@dataclass
class ExperimentConfig:
    N: int
    K: int
    M: int
    frames: int
    local_iters: int
    batch_size: int
    learning_rate: object = 0.05
    task: TaskSpec = field(default_factory=TaskSpec)
    channel: ChannelParams = field(default_factory=ChannelParams)
    downlink_noise_var: object = None
    uplink_noise_var: object = None
    schemes: list = field(default_factory=lambda: list(SCHEMES))
    seeds: list = field(default_factory=lambda: [0])
    data_seed: int = 0
    uplink_weights: str = "uniform"
    single_model_order: str = "consecutive"
    pgd: dict = field(default_factory=dict)
    eval_bound: bool = False
    constants_margin: float = 1.1
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.task, dict):
            self.task = TaskSpec.from_dict(self.task)
        if isinstance(self.channel, dict):
            self.channel = ChannelParams.from_dict(self.channel)
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self):
        for name in ("N", "K", "M", "frames", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.local_iters < 0:
            raise ConfigurationError("local_iters must be non-negative")
        if self.K % self.M:
            raise ConfigurationError(f"M={self.M} must divide K={self.K}")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ConfigurationError(f"unknown schemes {bad}; choose from {SCHEMES}")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if self.task.type not in TASK_TYPES:
            raise ConfigurationError(f"unknown task type {self.task.type!r}")
        if self.uplink_weights != "uniform":
            raise ConfigurationError("only the 'uniform' uplink weight policy (rho_k = M/K) exists")
        if self.single_model_order not in ("consecutive", "interleaved"):
            raise ConfigurationError("single_model_order must be 'consecutive' or 'interleaved'")
        lrs = self.learning_rates()
        if any(lr <= 0 for lr in lrs):
            raise ConfigurationError("learning rates must be positive")
        if self.task.type == "synthetic":
            dims = self.task.dims
            if len(dims) not in (1, self.M):
                raise ConfigurationError("task.dims needs one entry or one per model")
            if self.batch_size > self.task.samples_per_device:
                raise ConfigurationError("batch_size exceeds samples_per_device")

    def learning_rates(self):
        lr = self.learning_rate
        if isinstance(lr, (list, tuple)):
            if len(lr) != self.frames:
                raise ConfigurationError("learning_rate list needs one entry per frame")
            return [float(x) for x in lr]
        return [float(lr)] * self.frames

    @property
    def total_rounds(self):
        return self.frames * self.M

    def sigma_d_sq(self):
        if self.downlink_noise_var is not None:
            return float(self.downlink_noise_var)
        return self.channel.downlink_noise_var

    def sigma_u_sq(self):
        if self.uplink_noise_var is not None:
            return float(self.uplink_noise_var)
        return self.channel.uplink_noise_var

    def to_dict(self):
        d = asdict(self)
        d["channel"]["distance_range_km"] = list(self.channel.distance_range_km)
        return d


def config_from_dict(d):
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**d)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))
