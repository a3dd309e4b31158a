import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crandn
from mmfl import beamforming as bf
from mmfl.errors import InfeasibleError, NumericalRankError, OutageError


def make_instance(rng, M=2, K=4, N=8, noise=0.5):
    h = crandn(rng, K, N)
    perm = rng.permutation(K)
    groups = tuple(np.sort(perm[i::M]) for i in range(M))
    return bf.SinrObjectiveInstance(h, groups, noise)


def objective_oracle(W, inst):
    """Direct double loop over groups and members."""
    total = 0.0
    for i, g in enumerate(inst.groups):
        for k in g:
            hk = inst.h[k]
            s = abs(np.vdot(hk, W[i])) ** 2
            interf = sum(abs(np.vdot(hk, W[j])) ** 2 for j in range(len(inst.groups)) if j != i)
            total += (interf + inst.noise) / s
    return total


def test_objective_matches_loop(rng):
    for _ in range(10):
        inst = make_instance(rng, M=3, K=6, N=5)
        W = crandn(rng, 3, 5)
        assert bf.objective(W, inst) == pytest.approx(objective_oracle(W, inst), rel=1e-12)
        assert bf.per_device_ratios(W, inst).sum() == pytest.approx(bf.objective(W, inst))


def test_objective_hand_value():
    h = np.array([[1.0, 0.0], [0.0, 2.0]], dtype=complex)
    inst = bf.SinrObjectiveInstance(h, (np.array([0]), np.array([1])), 1.0)
    W = np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex)
    # device 0: signal 1, interference 0; device 1: signal 4, interference 4
    assert bf.objective(W, inst) == pytest.approx(1.0 + 5.0 / 4.0)


def test_effective_noise():
    assert bf.effective_noise(2.0, 10) == 10.0


def test_gradient_matches_finite_differences(rng):
    for _ in range(5):
        inst = make_instance(rng, M=2, K=4, N=4)
        W = crandn(rng, 2, 4)
        x = bf.stack_real(W)
        g = bf.stack_real(bf.gradient(W, inst))
        eps = 1e-6
        fd = np.empty_like(x)
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = eps
            fd[i] = (bf.objective(bf.unstack_real(x + e, W.shape), inst)
                     - bf.objective(bf.unstack_real(x - e, W.shape), inst)) / (2 * eps)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-7 * np.abs(fd).max())


@given(st.integers(0, 2 ** 31), st.floats(0, 2 * np.pi))
@settings(max_examples=30, deadline=None)
def test_common_phase_invariance(seed, phase):
    rng = np.random.default_rng(seed)
    inst = make_instance(rng)
    W = crandn(rng, 2, 8)
    assert bf.objective(W * np.exp(1j * phase), inst) == pytest.approx(bf.objective(W, inst),
                                                                      rel=1e-10)


@given(st.integers(0, 2 ** 31), st.floats(0.01, 100))
@settings(max_examples=30, deadline=None)
def test_projection_properties(seed, budget):
    rng = np.random.default_rng(seed)
    W = crandn(rng, 3, 4) * rng.uniform(0.01, 20)
    P = bf.project(W, budget)
    assert np.sum(np.abs(P) ** 2) <= budget * (1 + 1e-12)
    assert np.allclose(bf.project(P, budget), P)
    # variational inequality of the Euclidean projection onto a convex set
    Z = crandn(rng, 3, 4)
    Z *= np.sqrt(budget / np.sum(np.abs(Z) ** 2)) * rng.uniform(0, 1)
    assert np.real(np.vdot(W - P, Z - P)) <= 1e-9 * (1 + np.abs(W).max() ** 2)


def test_scaled_instance_keeps_objective(rng):
    inst = make_instance(rng)
    W = crandn(rng, 2, 8)
    small = inst.scaled(3.0, 5.0)
    assert bf.objective(W / np.sqrt(5.0), small) == pytest.approx(
        bf.objective(W, inst), rel=1e-12)


def test_zf_nulls_interference(rng):
    inst = make_instance(rng, M=3, K=6, N=8)
    W = bf.zf_beamformers(inst, 6.0).w
    for i, g in enumerate(inst.groups):
        for j in range(3):
            if j != i:
                assert np.max(np.abs(inst.h[g].conj() @ W[j])) < 1e-10
    assert np.allclose(np.sum(np.abs(W) ** 2, axis=1), 2.0)


def test_zf_errors(rng):
    with pytest.raises(InfeasibleError):
        bf.zf_beamformers(make_instance(rng, K=6, N=4), 1.0)
    h = crandn(rng, 4, 4)
    h[3] = h[2]
    inst = bf.SinrObjectiveInstance(h, (np.array([0, 1]), np.array([2, 3])), 1.0)
    with pytest.raises(NumericalRankError):
        bf.zf_beamformers(inst, 1.0)


def test_outage_raises():
    h = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=complex)
    inst = bf.SinrObjectiveInstance(h, (np.array([0]), np.array([1])), 1.0)
    W = np.array([[1.0, 0.0], [1.0, 0.0]], dtype=complex)
    with pytest.raises(OutageError) as info:
        bf.objective(W, inst)
    assert info.value.device == 1


def test_instance_validation(rng):
    h = crandn(rng, 4, 2)
    with pytest.raises(ValueError):
        bf.SinrObjectiveInstance(h, (np.array([0, 1]), np.array([1, 2])), 1.0)
    with pytest.raises(ValueError):
        bf.SinrObjectiveInstance(h, (np.array([0, 5]),), 1.0)
    with pytest.raises(ValueError):
        bf.SinrObjectiveInstance(h, (np.array([0]),), -1.0)


@pytest.mark.parametrize("rule", ["accelerated", "bb", "armijo"])
def test_pgd_rules_are_monotone_and_feasible(rng, rule):
    inst = make_instance(rng, M=2, K=4, N=6)
    res = bf.solve_pgd(inst, 3.0, step_rule=rule, max_iters=300)
    f = [row[1] for row in res.trace]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(f, f[1:]))
    assert res.beamformers.is_feasible()
    assert res.objective <= bf.objective(bf.zf_beamformers(inst, 3.0), inst) + 1e-9


def test_pgd_spends_full_power(rng):
    # more power always lowers the noise term, so the optimum is on the sphere
    inst = make_instance(rng)
    res = bf.solve_pgd(inst, 2.0)
    assert res.beamformers.power == pytest.approx(2.0, rel=1e-6)


def test_pgd_single_group_matches_eigen_solution():
    # one device: the optimum is the matched filter, f = noise / (budget ||h||^2)
    rng = np.random.default_rng(3)
    h = crandn(rng, 1, 6)
    res = bf.snr_max_single(h, 2.0, 0.3)
    assert res.objective == pytest.approx(0.3 / (2.0 * np.linalg.norm(h) ** 2), rel=1e-8)


def test_pgd_invalid_inputs(rng):
    inst = make_instance(rng)
    with pytest.raises(ValueError):
        bf.solve_pgd(inst, 0.0)
    with pytest.raises(ValueError):
        bf.solve_pgd(inst, 1.0, step_rule="newton")
    with pytest.raises(ValueError):
        bf.solve_pgd(inst, 1.0, init="nope")


def test_pgd_given_init_and_trace_csv(rng, tmp_path):
    inst = make_instance(rng)
    W0 = bf.matched_filter_init(inst, 1.0).w
    res = bf.solve_pgd(inst, 1.0, init=W0, max_iters=5)
    assert res.init == "given" and res.iterations <= 5
    path = tmp_path / "trace.csv"
    bf.write_trace_csv(res.trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,objective,grad_norm,step" and len(lines) == len(res.trace) + 1


def test_noiseless_instance_allowed(rng):
    inst = make_instance(rng, noise=0.0)
    W = bf.zf_beamformers(inst, 1.0).w
    assert bf.objective(W, inst) < 1e-20
