"""Frame and round orchestration for the compared training schemes.

Schemes
-------
multimodel   round-robin multi-model training, PGD-designed beamformers
zf           same protocol with zero-forcing beamformers
ideal        same protocol over noise- and interference-free links
singlemodel  models trained one after another with all K devices and one
             SNR-maximizing multicast beamformer
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import beamforming as bf
from .channel import draw_channel, draw_distances
from .cnn import build_model_a, build_model_b
from .convergence import (AssumptionConstants, c_term, estimate_constants,
                          g_factor, gap_bound)
from .errors import ConfigurationError, ExperimentError, MMFLError
from .learning import (RidgeLeastSquares, RidgeLogistic, global_loss, local_sgd,
                       make_classification, make_regression, solve_optimal,
                       split_evenly)
from .phy import complex_length, global_round, uniform_weights
from .rng import SeedStreams
from .scheduler import GroupAssignment, partition_devices

NAN = float("nan")


@dataclass
class MetricRecord:
    scheme: str
    seed: int
    model: int
    round: int
    frame: int
    loss: float
    test_metric: float
    gap: float
    bf_objective: float
    bound: float

    @classmethod
    def header(cls):
        return [f.name for f in fields(cls)]

    def row(self):
        return astuple(self)


@dataclass
class ModelTask:
    """Data, loss and evaluation for one of the M models."""

    loss: object
    shards: list
    theta0: np.ndarray
    theta_star: object = None
    test: object = None
    loss_data: object = None

    @property
    def dim(self):
        return len(self.theta0)

    @property
    def convex(self):
        return self.theta_star is not None

    def evaluate(self, theta):
        """(global loss, test metric, optimality gap) of ``theta``."""
        if self.convex:
            gap = float(np.sum((theta - self.theta_star) ** 2))
            return global_loss(theta, self.shards, self.loss), gap, gap
        d = self.loss_data
        loss = self.loss.loss(theta, d.X, d.y)
        acc = self.loss.accuracy(theta, self.test.X, self.test.y)
        return loss, acc, NAN


def build_tasks(cfg):
    """Per-model datasets, initial models and optima (seeded by ``data_seed``)."""
    spec = cfg.task
    streams = SeedStreams(cfg.data_seed)
    tasks = []
    if spec.type == "synthetic":
        dims = spec.dims * cfg.M if len(spec.dims) == 1 else spec.dims
        for m in range(cfg.M):
            rng = streams.rng("data", m)
            n = cfg.K * spec.samples_per_device
            if spec.loss == "ridge_ls":
                loss = RidgeLeastSquares(spec.reg)
                data = make_regression(n, dims[m], rng, spec.label_noise, spec.feature_scale)
            elif spec.loss == "ridge_logistic":
                loss = RidgeLogistic(spec.reg)
                data = make_classification(n, dims[m], rng, spec.label_noise, spec.feature_scale)
            else:
                raise ConfigurationError(f"unknown synthetic loss {spec.loss!r}")
            shards = split_evenly(data, cfg.K, streams.rng("split", m))
            theta0 = spec.init_scale * streams.rng("init", m).standard_normal(dims[m])
            theta_star, _ = solve_optimal(loss, shards)
            tasks.append(ModelTask(loss, shards, theta0, theta_star))
        return tasks

    from .mnist import load_mnist

    if not spec.mnist_dir:
        raise ConfigurationError("MNIST tasks need task.mnist_dir")
    train, test = load_mnist(spec.mnist_dir)
    if spec.test_samples:
        test = type(test)(test.X[:spec.test_samples], test.y[:spec.test_samples])
    kinds = spec.models or [{"mnist-modelB": "B"}.get(spec.type, "A")]
    if len(kinds) == 1:
        kinds = kinds * cfg.M
    if len(kinds) != cfg.M:
        raise ConfigurationError("task.models needs one entry or one per model")
    sub = SeedStreams(cfg.data_seed).rng("loss-subset").permutation(len(train))
    loss_data = type(train)(train.X[sub[:spec.loss_samples]], train.y[sub[:spec.loss_samples]])
    for m, kind in enumerate(kinds):
        net = {"A": build_model_a, "B": build_model_b}[kind]()
        shards = split_evenly(train, cfg.K, streams.rng("split", m))
        theta0 = net.init_params(streams.rng("init", m))
        tasks.append(ModelTask(net, shards, theta0, None, test, loss_data))
    return tasks


@dataclass
class SchemeRun:
    """Trajectories of one scheme for one seed.

    ``trajectory[m][t]`` is model ``m`` after ``t`` rounds and
    ``round_objective[t]`` the beamforming objective used in round ``t``.
    """

    scheme: str
    seed: int
    trajectory: list
    round_objective: list
    frame_objective: list
    groups: list
    active: list
    traces: list


class Simulation:
    """Shared randomness and frame state for one seed.

    Channels, partitions, padding offsets, mini-batches and noise come from
    keyed streams that do not depend on the scheme, so schemes run on common
    random numbers.
    """

    def __init__(self, cfg, tasks, seed):
        self.cfg = cfg
        self.tasks = tasks
        self.seed = seed
        self.streams = SeedStreams(seed)
        self.distances = draw_distances(cfg.channel, cfg.K, self.streams.rng("deploy"))
        self.sigma_d_sq = cfg.sigma_d_sq()
        self.sigma_u_sq = cfg.sigma_u_sq()
        self.lrs = cfg.learning_rates()
        self.total_len = max(complex_length(t.dim) for t in tasks)
        self._frames = {}

    @property
    def d_max(self):
        return 2 * self.total_len

    def budget(self, total_len=None):
        total_len = self.total_len if total_len is None else total_len
        return 2 * total_len * self.cfg.channel.power_per_use

    def frame(self, n):
        if n not in self._frames:
            assignment = partition_devices(self.cfg.K, self.cfg.M,
                                           self.streams.rng("partition", n), frame_index=n)
            channel = draw_channel(self.cfg.channel, self.distances, self.cfg.N,
                                   self.streams.rng("channel", n), frame_index=n)
            self._frames[n] = (assignment, channel)
        return self._frames[n]

    def local_update(self, n):
        cfg = self.cfg
        lr = self.lrs[n]

        def update(m, k, theta, rng):
            task = self.tasks[m]
            return local_sgd(theta, task.shards[k], task.loss, cfg.local_iters,
                             cfg.batch_size, lr, rng)
        return update

    def design(self, scheme, assignment, channel):
        """Beamformers and their objective for one frame of a multi-model scheme."""
        if scheme == "ideal":
            return None, NAN
        inst = bf.SinrObjectiveInstance(channel.h, tuple(assignment.groups),
                                        self.sigma_d_sq * self.total_len)
        budget = self.budget()
        if scheme == "multimodel":
            res = bf.solve_pgd(inst, budget, rng=self.streams.rng("pgd-init", channel.frame_index),
                               **self.cfg.pgd)
            return res.w, res.objective
        if scheme == "zf":
            W = bf.zf_beamformers(inst, budget).w
            return W, bf.objective(W, inst)
        raise ConfigurationError(f"{scheme!r} is not a multi-model scheme")

    def run_multimodel(self, scheme, keep_traces=False):
        cfg = self.cfg
        models = [t.theta0.copy() for t in self.tasks]
        trajectory = [[m.copy()] for m in models]
        round_obj, frame_obj, groups, traces = [], [], [], []
        for n in range(cfg.frames):
            assignment, channel = self.frame(n)
            W, obj = self.design(scheme, assignment, channel)
            frame_obj.append(obj)
            groups.extend(assignment.groups)
            weights = uniform_weights(assignment)
            update = self.local_update(n)
            for t in range(n * cfg.M, (n + 1) * cfg.M):
                try:
                    res = global_round(models, W, channel.h, assignment, t, update, weights,
                                       self.sigma_d_sq, self.sigma_u_sq, self.streams,
                                       total_len=self.total_len)
                except MMFLError as exc:
                    raise ExperimentError(scheme, self.seed, t, exc) from exc
                models = res.models
                for m in range(cfg.M):
                    trajectory[m].append(models[m].copy())
                round_obj.append(obj)
                if keep_traces:
                    traces.append(res.traces)
        active = [list(range(cfg.M))] * cfg.total_rounds
        return SchemeRun(scheme, self.seed, trajectory, round_obj, frame_obj, groups,
                         active, traces)

    def single_model_active(self, t):
        cfg = self.cfg
        if cfg.single_model_order == "interleaved":
            return t % cfg.M
        return t // cfg.frames

    def run_singlemodel(self, keep_traces=False):
        cfg = self.cfg
        K = cfg.K
        everyone = np.arange(K)
        weights = np.full(K, 1.0 / K)
        models = [t.theta0.copy() for t in self.tasks]
        trajectory = [[m.copy()] for m in models]
        round_obj, frame_obj, active, traces = [], [], [], []
        designs = {}
        for t in range(cfg.total_rounds):
            n = t // cfg.M
            m = self.single_model_active(t)
            _, channel = self.frame(n)
            length = complex_length(self.tasks[m].dim)
            key = (n, length)
            if key not in designs:
                res = bf.snr_max_single(channel.h, self.budget(length),
                                        self.sigma_d_sq * length,
                                        rng=self.streams.rng("pgd-init", n), **cfg.pgd)
                designs[key] = (res.w, res.objective)
            W, obj = designs[key]
            if t % cfg.M == 0:
                frame_obj.append(obj)
            assignment = GroupAssignment(frame_index=n, groups=(everyone,))
            try:
                res = global_round(models, W, channel.h, assignment, t, self.local_update(n),
                                   weights, self.sigma_d_sq, self.sigma_u_sq, self.streams,
                                   total_len=length, schedule=[m])
            except MMFLError as exc:
                raise ExperimentError("singlemodel", self.seed, t, exc) from exc
            models = res.models
            for j in range(cfg.M):
                trajectory[j].append(models[j].copy())
            round_obj.append(obj)
            active.append([m])
            if keep_traces:
                traces.append(res.traces)
        return SchemeRun("singlemodel", self.seed, trajectory, round_obj, frame_obj,
                         [everyone], active, traces)

    def run(self, scheme, keep_traces=False):
        if scheme == "singlemodel":
            return self.run_singlemodel(keep_traces)
        return self.run_multimodel(scheme, keep_traces)

    # -- bound ----------------------------------------------------------------

    def constants(self, run):
        """Assumption constants shared by all models of ``run``."""
        cfg = self.cfg
        per_model = []
        for m, task in enumerate(self.tasks):
            per_model.append(estimate_constants(
                task.loss, task.shards, run.trajectory[m], groups=run.groups,
                weights=np.full(cfg.K, cfg.M / cfg.K), local_iters=cfg.local_iters,
                batch_size=cfg.batch_size, lr=max(self.lrs),
                rng=self.streams.rng("constants", m), margin=cfg.constants_margin))
        return AssumptionConstants(
            L=max(c.L for c in per_model), lam=min(c.lam for c in per_model),
            mu=max(c.mu for c in per_model), beta1=1.0,
            beta2=max(c.beta2 for c in per_model), phi=max(c.phi for c in per_model),
            r=max(c.r for c in per_model), margin=cfg.constants_margin)

    def bounds(self, run):
        """Bound value after each frame for every model, plus the ingredients."""
        cfg = self.cfg
        consts = self.constants(run)
        sigma_u_tilde = self.sigma_u_sq * self.total_len
        G = [g_factor(eta, consts.lam, cfg.local_iters) for eta in self.lrs]
        H = [4.0 * consts.r * cfg.M * cfg.K * f for f in run.frame_objective]
        C = [c_term(eta, cfg.local_iters, cfg.K, consts, cfg.M, sigma_u_tilde)
             for eta in self.lrs]
        out = {}
        for m, task in enumerate(self.tasks):
            gamma = float(np.sum((task.theta0 - task.theta_star) ** 2))
            out[m] = [gap_bound(gamma, G[:n], H[:n], C[:n], n) for n in range(cfg.frames + 1)]
        return consts, out


def records_for(run, tasks, cfg, bounds=None):
    out = []
    for m, task in enumerate(tasks):
        cache = None
        for t, theta in enumerate(run.trajectory[m]):
            if cache is None or (t > 0 and m in run.active[t - 1]):
                cache = task.evaluate(theta)
            loss, metric, gap = cache
            obj = run.round_objective[t - 1] if t > 0 else NAN
            bound = NAN
            if bounds is not None and t % cfg.M == 0:
                bound = bounds[m][t // cfg.M].total
            out.append(MetricRecord(run.scheme, run.seed, m + 1, t, t // cfg.M,
                                    float(loss), float(metric), float(gap), float(obj),
                                    float(bound)))
    return out


_TASK_CACHE = {}


def _tasks_for(cfg):
    key = repr(cfg.task) + repr((cfg.M, cfg.K, cfg.data_seed))
    if key not in _TASK_CACHE:
        _TASK_CACHE.clear()
        _TASK_CACHE[key] = build_tasks(cfg)
    return _TASK_CACHE[key]


def run_seed(cfg, seed, schemes=None, details=None):
    """All requested schemes for one seed."""
    tasks = _tasks_for(cfg)
    sim = Simulation(cfg, tasks, seed)
    records = []
    for scheme in schemes or cfg.schemes:
        run = sim.run(scheme)
        bounds = None
        if cfg.eval_bound and scheme in ("multimodel", "zf"):
            if not all(t.convex for t in tasks):
                raise ConfigurationError("bound evaluation needs a strongly convex task")
            try:
                consts, bounds = sim.bounds(run)
            except MMFLError as exc:
                raise ExperimentError(scheme, seed, None, exc) from exc
            if details is not None:
                details.setdefault("bounds", []).append({
                    "scheme": scheme, "seed": seed, "constants": consts.to_dict(),
                    "final": {m + 1: b[-1].to_dict() for m, b in bounds.items()}})
        records.extend(records_for(run, tasks, cfg, bounds))
    return records


def _seed_job(args):
    cfg, seed, schemes = args
    details = {}
    return run_seed(cfg, seed, schemes, details), details


def _ordered(records, schemes):
    order = {s: i for i, s in enumerate(schemes)}
    return sorted(records, key=lambda r: (order[r.scheme], r.seed, r.model, r.round))


def run_experiment(cfg, details=None):
    """Run every configured scheme for every seed.

    Records are ordered by (scheme, seed, model, round). When ``details`` is a
    dict it receives the estimated constants and bound terms.
    """
    return _run(cfg, list(cfg.schemes), details)


def run_baseline_singlemodel(cfg, details=None):
    """Sequential single-model baseline on the same seeds and round budget."""
    return _run(cfg, ["singlemodel"], details)


def _run(cfg, schemes, details):
    jobs = [(cfg, seed, schemes) for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_seed_job, jobs))
    else:
        results = [_seed_job(job) for job in jobs]
    records = []
    for recs, det in results:
        records.extend(recs)
        if details is not None:
            for key, value in det.items():
                details.setdefault(key, []).extend(value)
    return _ordered(records, schemes)


def final_gaps(records, scheme):
    """Mean over models of the final-round gap, per seed."""
    last = max(r.round for r in records if r.scheme == scheme)
    per_seed = {}
    for r in records:
        if r.scheme == scheme and r.round == last:
            per_seed.setdefault(r.seed, []).append(r.gap)
    return {s: float(np.mean(v)) for s, v in sorted(per_seed.items())}


def is_finite(x):
    return not (isinstance(x, float) and math.isnan(x))
