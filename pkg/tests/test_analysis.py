import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridfl import analysis as A
from hybridfl.trainer import ModelParams, evaluate


def two_scalar_clients():
    # F_1 = (w - 1)^2, F_2 = (w + 1)^2
    return A.ObjectiveSnapshot([0.5, 0.5], [A.quadratic_client([[1.0]], [1.0]),
                                            A.quadratic_client([[1.0]], [-1.0])], A.linear_arch(1))


def w(v):
    return ModelParams(A.linear_arch(len(np.atleast_1d(v))), np.atleast_1d(v))


def test_global_objective_examples(rng):
    single = A.ObjectiveSnapshot([1.0], [A.quadratic_client([[1.0]], [3.0])], A.linear_arch(1))
    assert A.global_objective(w(1.0), single) == pytest.approx(4.0)
    snap = A.ObjectiveSnapshot([0.5, 0.5], [A.quadratic_client([[1.0]], [np.sqrt(2)]),
                                            A.quadratic_client([[1.0]], [2.0])], A.linear_arch(1))
    assert A.global_objective(w(0.0), snap) == pytest.approx(3.0)


def test_global_objective_matches_per_sample_sum(rng):
    parts = [A.quadratic_client(rng.standard_normal((n, 2)), rng.standard_normal(n)) for n in (3, 5, 2)]
    gamma = rng.dirichlet(np.ones(3))
    snap = A.ObjectiveSnapshot(gamma, parts, A.linear_arch(2))
    p = rng.standard_normal(2)
    brute = 0.0
    for g, d in zip(gamma, parts):
        brute += g * sum((x @ p - y) ** 2 for x, y in zip(d.features, d.targets)) / len(d)
    assert A.global_objective(w(p), snap) == pytest.approx(brute, abs=1e-12)


def test_global_objective_on_identical_partitions_is_plain_mean(rng):
    d = A.quadratic_client(rng.standard_normal((6, 2)), rng.standard_normal(6))
    snap = A.ObjectiveSnapshot(np.full(4, 0.25), [d] * 4, A.linear_arch(2))
    p = w(rng.standard_normal(2))
    assert A.global_objective(p, snap) == pytest.approx(evaluate(p, d).loss, abs=1e-12)


def test_snapshot_rejects_bad_gamma():
    with pytest.raises(ValueError):
        A.ObjectiveSnapshot([0.5, 0.6], [A.quadratic_client([[1]], [1])] * 2, A.linear_arch(1))


def test_divergence_examples(rng):
    d = A.quadratic_client(rng.standard_normal((5, 2)), rng.standard_normal(5))
    same = A.ObjectiveSnapshot([0.3, 0.7], [d, d], A.linear_arch(2))
    assert A.estimate_divergence(same, [w(rng.standard_normal(2)) for _ in range(5)]) == pytest.approx(0, abs=1e-12)
    snap = two_scalar_clients()
    for v in (-3.0, 0.0, 2.5):
        assert A.estimate_divergence(snap, [w(v)]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        A.estimate_divergence(snap, [])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_divergence_monotone_in_probe_set(seed):
    rng = np.random.default_rng(seed)
    snap = A.random_quadratic_instance(rng, n_clients=3, d=2)
    probes = [w(rng.standard_normal(2)) for _ in range(4)]
    vals = [A.estimate_divergence(snap, probes[:i]) for i in range(1, 5)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_h_bar_examples():
    assert A.h_bar(1, 0.3, 2.0, 1.5) == pytest.approx(0.0, abs=1e-15)
    assert A.h_bar(0, 0.3, 2.0, 1.5) == 0.0
    assert A.h_bar(5, 0.01, 1.0, 1.0) == pytest.approx(1.01 ** 5 - 1 - 0.05, rel=1e-12)
    assert A.h_bar(5, 0.01, 1.0, 1.0) == pytest.approx(0.00101005, rel=1e-6)


@given(eta=st.floats(1e-4, 1.0), beta=st.floats(1e-3, 10.0), delta=st.floats(1e-3, 10.0),
       x=st.integers(1, 40), k=st.floats(0.1, 10.0))
def test_h_bar_properties(eta, beta, delta, x, k):
    assert A.h_bar(x + 1, eta, beta, delta) > A.h_bar(x, eta, beta, delta)
    assert A.h_bar(x, eta, beta, k * delta) == pytest.approx(k * A.h_bar(x, eta, beta, delta), rel=1e-9, abs=1e-300)


def test_divergence_bound_examples():
    p = A.BoundParameters(rho=2.0, beta=1.0, delta_bar=1.0, eta=0.01, tau=5)
    assert A.divergence_bound(11, 3, 5, p) == pytest.approx(0.0, abs=1e-15)
    assert A.divergence_bound(15, 3, 5, p) == pytest.approx(2 * A.h_bar(5, 0.01, 1.0, 1.0))
    assert A.divergence_bound(15, 3, 5, p) == pytest.approx(0.0020201, rel=1e-5)
    with pytest.raises(ValueError):
        A.divergence_bound(10, 3, 5, p)


def test_convergence_bound():
    p = A.BoundParameters(rho=1.0, beta=1.0, delta_bar=1.0, eta=0.1, tau=5, omega=1.0, epsilon=0.01)
    res = A.convergence_bound(3, p)
    assert res.bound is None and not res.denominator_positive and res.step_size_ok
    assert res.v_gap_ok is None and res.w_gap_ok is None
    p = A.BoundParameters(rho=0.1, beta=1.0, delta_bar=0.01, eta=0.1, tau=5, omega=1.0, epsilon=1.0)
    a, b = A.convergence_bound(4, p), A.convergence_bound(8, p)
    assert a.denominator_positive and b.bound == pytest.approx(a.bound / 2)
    p1 = A.BoundParameters(rho=1.0, beta=2.0, delta_bar=3.0, eta=0.1, tau=1, omega=0.5, epsilon=0.1)
    assert A.convergence_bound(7, p1).bound == pytest.approx(1 / (7 * 0.5 * 0.1 * (1 - 0.1)))
    flags = A.convergence_bound(1, p1, v_gap_min=0.05, w_gap=0.2)
    assert flags.v_gap_ok is False and flags.w_gap_ok is True
    assert not A.convergence_bound(1, A.BoundParameters(1, 20.0, 1, 0.1, 1, 1.0, 1.0)).step_size_ok


@given(t=st.integers(1, 1000))
def test_convergence_bound_decreasing(t):
    p = A.BoundParameters(rho=0.1, beta=1.0, delta_bar=0.01, eta=0.1, tau=5, omega=1.0, epsilon=1.0)
    assert A.convergence_bound(t + 1, p).bound < A.convergence_bound(t, p).bound


def test_divergence_check_identical_clients_have_zero_gap(rng):
    d = A.quadratic_client(rng.standard_normal((5, 2)), rng.standard_normal(5))
    snap = A.ObjectiveSnapshot([0.5, 0.5], [d, d], A.linear_arch(2))
    rep = A.verify_theorem1_empirically(snap, [1.0, -1.0], tau=5, eta=0.05, rounds=5)
    assert rep.passed and all(r.gap == 0 for r in rep.records)


def test_divergence_check_equal_curvature_pair_has_zero_gap():
    # equal Hessians make the averaged local steps coincide with centralized steps
    rep = A.verify_theorem1_empirically(two_scalar_clients(), [0.0], tau=5, eta=0.1, rounds=10)
    assert rep.passed and rep.max_gap == pytest.approx(0.0, abs=1e-15)


def test_divergence_check_different_curvatures_give_positive_gaps():
    snap = A.ObjectiveSnapshot([0.5, 0.5], [A.quadratic_client([[1.0]], [1.0]),
                                            A.quadratic_client([[2.0]], [-2.0])], A.linear_arch(1))
    rep = A.verify_theorem1_empirically(snap, [3.0], tau=5, eta=0.1, rounds=10)
    assert rep.passed
    inner = [r for r in rep.records if (r.epoch - 1) % 5 >= 1]
    assert all(r.gap > 0 for r in inner)


def test_divergence_check_tau_one_gap_is_zero(rng):
    snap = A.random_quadratic_instance(rng, n_clients=4, d=2)
    rep = A.verify_theorem1_empirically(snap, [2.0, 2.0], tau=1, eta=0.1 / A.quadratic_constants(snap, radius=1).beta, rounds=10)
    assert rep.passed and max(abs(r.gap) for r in rep.records) <= 1e-12


def test_divergence_check_rejects_large_step():
    with pytest.raises(ValueError):
        A.verify_theorem1_empirically(two_scalar_clients(), [0.0], tau=2, eta=1.0, rounds=1)


def test_divergence_check_csv(tmp_path):
    rep = A.verify_theorem1_empirically(two_scalar_clients(), [0.0], tau=2, eta=0.1, rounds=3)
    path = tmp_path / "t1.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,gap,bound" and len(lines) == 7


def test_quadratic_constants_bound_sampled_gradients(rng):
    snap = A.random_quadratic_instance(rng, n_clients=3, d=2)
    c = A.quadratic_constants(snap, radius=2.0)
    for _ in range(200):
        u = rng.standard_normal(2)
        p = w(c.w_star + 2.0 * rng.uniform() * u / np.linalg.norm(u))
        assert np.linalg.norm(A.global_gradient(p, snap)) <= c.rho + 1e-9
        assert A.estimate_divergence(snap, [p]) <= c.delta_bar + 1e-9
