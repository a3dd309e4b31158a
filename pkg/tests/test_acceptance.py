"""Acceptance criteria, one test each.

Every test prints a ``AC<n> PASS|FAIL|SKIP`` line (shown inline with ``-s``
and collected in the terminal summary). Run directly with
``pytest tests/test_acceptance.py -v``.
"""

import functools
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, crandn
from mmfl import beamforming as bf
from mmfl.cnn import build_model_a, build_model_b
from mmfl.config import config_from_dict
from mmfl.experiment import Simulation, build_tasks, final_gaps, run_experiment
from mmfl.learning import local_sgd
from mmfl.scheduler import assigned_model, group_for_model


def criterion(number, title):
    """Record a PASS/FAIL/SKIP line for the wrapped acceptance test."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            status, detail = "FAIL", ""
            try:
                detail = fn(*args, **kwargs) or ""
                status = "PASS"
            except pytest.skip.Exception as exc:
                status, detail = "SKIP", str(exc)
                raise
            except AssertionError as exc:
                detail = str(exc).splitlines()[0] if str(exc) else "assertion failed"
                raise
            finally:
                line = (f"AC{number} {status}  {title} "
                        f"({time.perf_counter() - start:.1f}s) {detail}").rstrip()
                ACCEPTANCE_LINES.append(line)
                print(line)
        return run
    return wrap


# -- 1 ----------------------------------------------------------------------

def _oracle_trajectories(sim, frames):
    """Channel-free reference: local SGD from the exact model, weighted mean."""
    cfg = sim.cfg
    models = [t.theta0.copy() for t in sim.tasks]
    out = [[m.copy()] for m in models]
    for n in range(frames):
        assignment, _ = sim.frame(n)
        for t in range(n * cfg.M, (n + 1) * cfg.M):
            new = list(models)
            for i, group in enumerate(assignment.groups):
                m = assigned_model(i + 1, t, cfg.M) - 1
                task = sim.tasks[m]
                local = [local_sgd(models[m], task.shards[k], task.loss, cfg.local_iters,
                                   cfg.batch_size, sim.lrs[n], sim.streams.rng("sgd", t, int(k)))
                         for k in group]
                new[m] = np.mean(local, axis=0)
            models = new
            for m in range(cfg.M):
                out[m].append(models[m].copy())
    return out


@criterion(1, "noiseless pipeline equals channel-free oracle")
def test_ac1_exactness_oracle():
    start = time.perf_counter()
    worst = 0.0
    for M, scheme, dims in [(1, "multimodel", [7]), (2, "zf", [7, 10])]:
        cfg = config_from_dict(dict(
            N=8, K=4, M=M, frames=5, local_iters=3, batch_size=5, learning_rate=0.05,
            task={"dims": dims, "samples_per_device": 20},
            downlink_noise_var=0.0, uplink_noise_var=0.0))
        for seed in range(3):
            sim = Simulation(cfg, build_tasks(cfg), seed)
            run = sim.run(scheme)
            ref = _oracle_trajectories(sim, cfg.frames)
            for m in range(M):
                for got, want in zip(run.trajectory[m], ref[m]):
                    worst = max(worst, np.linalg.norm(got - want) / np.linalg.norm(want))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-9, f"max relative deviation {worst:.2e}"
    assert elapsed < 10, f"took {elapsed:.1f}s"
    return f"max relative deviation {worst:.1e}"


# -- 2 ----------------------------------------------------------------------

@criterion(2, "beamforming gradient vs central differences")
def test_ac2_gradient_finite_differences():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for n in range(50):
        M = (2, 3)[n % 2]
        N = (4, 8)[(n // 2) % 2]
        K = (4, 6)[(n // 4) % 2]
        if K % M:
            K = 6
        h = crandn(rng, K, N)
        perm = rng.permutation(K)
        groups = tuple(np.sort(perm[i * K // M:(i + 1) * K // M]) for i in range(M))
        inst = bf.SinrObjectiveInstance(h, groups, float(rng.uniform(0.1, 1.0)))
        W = crandn(rng, M, N)
        x = bf.stack_real(W)
        g = bf.stack_real(bf.gradient(W, inst))
        eps = 1e-6 * np.abs(x).max()
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = eps
            fd = (bf.objective(bf.unstack_real(x + e, W.shape), inst)
                  - bf.objective(bf.unstack_real(x - e, W.shape), inst)) / (2 * eps)
            # relative error with a floor at 1e-6 of the largest gradient entry
            denom = max(abs(fd), 1e-6 * np.abs(g).max())
            worst = max(worst, abs(g[i] - fd) / denom)
    elapsed = time.perf_counter() - start
    assert worst <= 1e-5, f"max relative error {worst:.2e}"
    assert elapsed < 30, f"took {elapsed:.1f}s"
    return f"max relative error {worst:.1e}"


# -- 3 ----------------------------------------------------------------------

def pgd_instance(seed):
    rng = np.random.default_rng(seed)
    M = (2, 3)[seed % 2]
    K = (4, 6)[(seed // 2) % 2]
    if K % M:
        K = 6
    N = max(int(rng.choice([K, 8, 12, 16])), K)
    h = crandn(rng, K, N)
    perm = rng.permutation(K)
    groups = tuple(np.sort(perm[i * K // M:(i + 1) * K // M]) for i in range(M))
    inst = bf.SinrObjectiveInstance(h, groups, float(rng.uniform(0.1, 1.0)))
    return inst, float(rng.uniform(1.0, 10.0))


@criterion(3, "PGD beats ZF, monotone, converges")
def test_ac3_pgd_quality():
    converged = 0
    for seed in range(100):
        inst, budget = pgd_instance(seed)
        res = bf.solve_pgd(inst, budget, max_iters=500, tol=1e-6)
        f_zf = bf.objective(bf.zf_beamformers(inst, budget), inst)
        assert res.objective <= f_zf + 1e-9 * max(1.0, f_zf), f"instance {seed} worse than ZF"
        f = [row[1] for row in res.trace]
        assert all(b <= a for a, b in zip(f, f[1:])), f"instance {seed} trace increases"
        last = res.trace[-1]
        if last[0] <= 500 and last[2] <= 1e-6 * (1 + abs(last[1])):
            converged += 1
    assert converged >= 95, f"converged on {converged}/100"
    return f"converged on {converged}/100"


# -- 4 ----------------------------------------------------------------------

AC4_CONFIGS = [
    dict(N=8, K=4, M=2, dims=[6, 9]),
    dict(N=8, K=6, M=3, dims=[8, 8, 5]),
    dict(N=16, K=8, M=2, dims=[20, 11]),
]


@criterion(4, "accumulated frame error within its energy bound")
def test_ac4_error_energy_bound():
    ratios = []
    for spec in AC4_CONFIGS:
        cfg = config_from_dict(dict(
            N=spec["N"], K=spec["K"], M=spec["M"], frames=50, local_iters=2, batch_size=5,
            learning_rate=0.02, task={"dims": spec["dims"], "samples_per_device": 10}))
        tasks = build_tasks(cfg)
        energies, bounds = [], []
        for seed in range(4):
            sim = Simulation(cfg, tasks, seed)
            run = sim.run("multimodel", keep_traces=True)
            r = max(float(th @ th) for traj in run.trajectory for th in traj)
            sigma_u = sim.sigma_u_sq * sim.total_len
            for n in range(cfg.frames):
                acc = [0.0] * cfg.M
                for t in range(n * cfg.M, (n + 1) * cfg.M):
                    for tr in run.traces[t]:
                        acc[tr.model] = acc[tr.model] + tr.error
                bound = r * cfg.M * cfg.K * run.frame_objective[n] + cfg.M * sigma_u
                for m in range(cfg.M):
                    energies.append(float(np.sum(np.abs(acc[m]) ** 2)))
                    bounds.append(bound)
        frames = len(energies) // cfg.M
        assert frames >= 200
        mean_e, mean_b = np.mean(energies), np.mean(bounds)
        assert mean_e <= mean_b, f"M={cfg.M} K={cfg.K}: mean energy {mean_e:.3e} > bound {mean_b:.3e}"
        ratios.append(mean_e / mean_b)
    return "energy/bound ratios " + ", ".join(f"{x:.2e}" for x in ratios)


# -- 5 ----------------------------------------------------------------------

@criterion(5, "optimality gap within the convergence bound")
def test_ac5_bound_domination():
    cfg = config_from_dict(dict(
        N=8, K=4, M=2, frames=5, local_iters=3, batch_size=5, learning_rate=0.05,
        task={"dims": [6], "samples_per_device": 20}, channel={"distance_range_km": [0.02, 0.2]},
        schemes=["multimodel"], seeds=20, eval_bound=True))
    tasks = build_tasks(cfg)
    lam = min(t.loss.curvature(s.X)[0] for t in tasks for s in t.shards)
    assert max(cfg.learning_rates()) < 1 / lam
    records = run_experiment(cfg)
    worst = 0.0
    for m in range(1, cfg.M + 1):
        for n in range(cfg.frames + 1):
            rows = [r for r in records if r.model == m and r.round == n * cfg.M]
            mean_gap = np.mean([r.gap for r in rows])
            tightest = min(r.bound for r in rows)
            assert mean_gap <= tightest, f"model {m} frame {n}: {mean_gap:.3e} > {tightest:.3e}"
            if n > 0:
                worst = max(worst, mean_gap / tightest)
    return f"largest gap/bound ratio after frame 0: {worst:.2e}"


# -- 6 ----------------------------------------------------------------------

@criterion(6, "round-robin schedule bijective with full frame coverage")
def test_ac6_schedule_exhaustive():
    for M in range(1, 9):
        for t in range(10 * M):
            models = [assigned_model(i, t, M) for i in range(1, M + 1)]
            assert sorted(models) == list(range(1, M + 1)), f"M={M} t={t} not a bijection"
            assert all(group_for_model(m, t, M) == i for i, m in enumerate(models, 1))
        for n in range(10):
            pairs = {(i, assigned_model(i, t, M))
                     for t in range(n * M, (n + 1) * M) for i in range(1, M + 1)}
            assert len(pairs) == M * M, f"M={M} frame {n} misses pairs"
    return "M = 1..8, t < 10M"


# -- 7 ----------------------------------------------------------------------

AC7_CONFIG = dict(
    N=16, K=8, M=2, frames=10, local_iters=10, batch_size=10, learning_rate=0.01,
    task={"dims": [20], "samples_per_device": 50},
    channel={"distance_range_km": [0.02, 0.1]}, seeds=20,
    schemes=["ideal", "multimodel", "zf", "singlemodel"])


@criterion(7, "scheme ordering over 20 seeds")
def test_ac7_comparative_ordering():
    start = time.perf_counter()
    cfg = config_from_dict(AC7_CONFIG)
    records = run_experiment(cfg)
    gaps = {s: final_gaps(records, s) for s in cfg.schemes}
    seeds = cfg.seeds
    share = {
        "ideal<=multimodel": np.mean([gaps["ideal"][s] <= gaps["multimodel"][s] for s in seeds]),
        "multimodel<=zf": np.mean([gaps["multimodel"][s] <= gaps["zf"][s] for s in seeds]),
        "multimodel<=singlemodel": np.mean([gaps["multimodel"][s] <= gaps["singlemodel"][s]
                                            for s in seeds]),
    }
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{k} {v:.0%}" for k, v in share.items())
    assert all(v >= 0.8 for v in share.values()), detail
    assert elapsed < 300, f"took {elapsed:.0f}s"
    return detail


# -- 8 ----------------------------------------------------------------------

@criterion(8, "CNN parameter counts")
def test_ac8_parameter_counts():
    a, b = build_model_a().dim, build_model_b().dim
    assert (a, b) == (13610, 27350), f"got {a}, {b}"
    return f"model A {a}, model B {b}"


# -- 9 ----------------------------------------------------------------------

@pytest.mark.slow
@criterion(9, "MNIST model A accuracy with multi-model training")
def test_ac9_mnist_accuracy():
    directory = os.environ.get("MMFL_MNIST_DIR")
    if not directory or not os.path.isdir(directory):
        pytest.skip("set MMFL_MNIST_DIR to a directory with the MNIST IDX files")
    cfg = config_from_dict(dict(
        N=128, K=12, M=2, frames=15, local_iters=100, batch_size=50, learning_rate=0.2,
        task={"type": "mnist-modelA", "mnist_dir": directory, "loss_samples": 1000},
        schemes=["multimodel"], seeds=5))
    records = run_experiment(cfg)
    best = {}
    for r in records:
        key = (r.seed, r.model)
        best[key] = max(best.get(key, 0.0), r.test_metric)
    acc = float(np.mean(list(best.values())))
    assert acc >= 0.95, f"mean best accuracy {acc:.3f}"
    return f"mean best accuracy {acc:.3f}"
