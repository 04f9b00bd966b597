import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridfl import trainer
from hybridfl.trainer import (Arch, Dataset, LossKind, ModelParams, TrainingDiverged, evaluate,
                              init_params, local_train, loss_and_grad)

ARCHS = [
    (Arch((3, 1), activation="identity"), "regression"),
    (Arch((3, 5, 4, 1)), "regression"),
    (Arch((5, 16, 16, 1)), "regression"),
    (Arch((4, 3), activation="identity"), "classification"),
    (Arch((4, 6, 3)), "classification"),
    (Arch((64, 32, 10)), "classification"),
]


def _data(arch, task, rng, n=12):
    X = rng.standard_normal((n, arch.sizes[0]))
    if task == "regression":
        return Dataset(X, rng.standard_normal(n), "regression")
    k = arch.sizes[-1]
    return Dataset(X, rng.integers(0, k, n), "classification", k)


def scalar_quadratic():
    # F(w) = (w - 1)^2 as a one-sample least-squares problem
    return Arch((1, 1), activation="identity", bias=False), Dataset(np.ones((1, 1)), np.ones(1), "regression")


def test_one_gd_step_by_hand():
    arch, data = scalar_quadratic()
    w = local_train(ModelParams(arch, [0.0]), data, tau=1, eta=0.1)
    assert w.theta[0] == pytest.approx(0.2)


def test_zero_step_is_identity(rng):
    arch, task = ARCHS[1]
    data = _data(arch, task, rng)
    w = init_params(arch, rng)
    assert local_train(w, data, tau=7, eta=0.0) == w


def test_input_params_untouched(rng):
    arch, task = ARCHS[1]
    data = _data(arch, task, rng)
    w = init_params(arch, rng)
    before = w.theta.copy()
    local_train(w, data, tau=3, eta=0.1)
    assert np.array_equal(w.theta, before)
    with pytest.raises(ValueError):
        w.theta[0] = 1.0  # read-only


@pytest.mark.parametrize("arch,task", ARCHS, ids=lambda a: str(getattr(a, "sizes", a)))
def test_gradient_matches_finite_differences(arch, task, rng):
    data = _data(arch, task, rng)
    w = init_params(arch, rng)
    _, g = loss_and_grad(w, data)
    h = 1e-5
    num = np.empty_like(g)
    for i in range(g.size):
        e = np.zeros_like(g)
        e[i] = h
        num[i] = (loss_and_grad(w.with_theta(w.theta + e), data)[0]
                  - loss_and_grad(w.with_theta(w.theta - e), data)[0]) / (2 * h)
    assert np.linalg.norm(g - num) <= 1e-5 * max(np.linalg.norm(num), 1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), tau=st.integers(1, 20))
def test_gd_on_convex_quadratic_decreases_monotonically(seed, tau):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((10, 3))
    data = Dataset(X, rng.standard_normal(10), "regression")
    arch = Arch((3, 1), activation="identity", bias=False)
    beta = np.linalg.eigvalsh(2 * X.T @ X / 10).max()
    w = ModelParams(arch, rng.standard_normal(3))
    prev = evaluate(w, data).loss
    for _ in range(tau):
        w = local_train(w, data, 1, 1.0 / beta)
        cur = evaluate(w, data).loss
        assert cur <= prev + 1e-12
        prev = cur


def test_divergence_raises_with_epoch():
    arch, data = scalar_quadratic()
    with pytest.raises(TrainingDiverged) as exc:
        local_train(ModelParams(arch, [1e200]), data, tau=5, eta=1e10)
    assert exc.value.epoch >= 1


def test_local_train_preconditions(rng):
    arch, data = scalar_quadratic()
    w = ModelParams(arch, [0.0])
    with pytest.raises(ValueError):
        local_train(w, data.subset(np.array([], dtype=int)), 1, 0.1)
    with pytest.raises(ValueError):
        local_train(w, data, 0, 0.1)


def test_perfect_fit_regression():
    arch = Arch((2, 1), activation="identity", bias=True)
    X = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
    w = ModelParams(arch, [2.0, -1.0, 0.5])
    y = X @ np.array([2.0, -1.0]) + 0.5
    ev = evaluate(w, Dataset(X, y, "regression"))
    assert ev.loss == 0.0 and ev.metric == 1.0


def test_random_classifier_is_at_chance(rng):
    arch = Arch((5, 10))
    data = Dataset(rng.standard_normal((20_000, 5)), rng.integers(0, 10, 20_000), "classification", 10)
    acc = evaluate(init_params(arch, rng), data).metric
    assert abs(acc - 0.1) < 0.02


def test_loss_is_mean_of_per_sample_losses(rng):
    arch = Arch((3, 4, 5))
    data = _data(arch, "classification", np.random.default_rng(3), n=7)
    w = init_params(arch, rng)
    per = [evaluate(w, data.subset([i])).loss for i in range(len(data))]
    assert evaluate(w, data).loss == pytest.approx(np.mean(per), abs=1e-12)
    arch = Arch((3, 4, 1))
    data = _data(arch, "regression", rng, n=7)
    w = init_params(arch, rng)
    out = trainer.predict(w, data.features)[:, 0]
    assert evaluate(w, data).loss == pytest.approx(np.mean((out - data.targets) ** 2), abs=1e-12)


def test_evaluate_is_pure(rng):
    arch, task = ARCHS[2]
    data = _data(arch, task, rng)
    w = init_params(arch, rng)
    assert evaluate(w, data) == evaluate(w, data)


def test_loss_kind_checks(rng):
    arch = Arch((3, 1))
    reg = _data(arch, "regression", rng)
    with pytest.raises(ValueError):
        evaluate(init_params(arch, rng), reg, LossKind.NLL)
    with pytest.raises(ValueError):
        evaluate(init_params(Arch((4, 1)), rng), reg)


def test_init_is_seeded_and_bounded():
    arch = Arch((5, 16, 1))
    a = init_params(arch, np.random.default_rng(0))
    b = init_params(arch, np.random.default_rng(0))
    assert a == b
    assert np.all(np.abs(a.theta) <= 0.5 / np.sqrt(5) + 1e-15)


def test_synthetic_regression():
    d = trainer.synthesize_regression(1503, 5, 0.3, seed=4)
    assert d.features.shape == (1503, 5)
    assert np.array_equal(d.targets, trainer.synthesize_regression(1503, 5, 0.3, seed=4).targets)
    exact = trainer.synthesize_regression(50, 3, 0.0, seed=1)
    coef, *_ = np.linalg.lstsq(exact.features, exact.targets, rcond=None)
    assert np.mean((exact.features @ coef - exact.targets) ** 2) < 1e-20


def _write_rows(path, rows):
    path.write_text("\n".join("\t".join(str(v) for v in r) for r in rows) + "\n")


def test_load_aerofoil(tmp_path, rng):
    rows = np.column_stack([rng.uniform(0, 1000, (40, 5)), rng.uniform(100, 140, 40)])
    f = tmp_path / "airfoil_self_noise.dat"
    _write_rows(f, rows)
    d = trainer.load_aerofoil(f)
    assert len(d) == 40 and d.d == 5
    assert np.all(np.abs(d.features.mean(axis=0)) < 1e-9)
    assert np.allclose(d.features.std(axis=0), 1.0, atol=1e-9)
    assert np.allclose(d.targets, rows[:, 5])


def test_load_aerofoil_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.dat"):
        trainer.load_aerofoil(tmp_path / "missing.dat")
    empty = tmp_path / "empty.dat"
    empty.write_text("")
    with pytest.raises(trainer.DatasetParseError, match="0 rows"):
        trainer.load_aerofoil(empty)
    bad = tmp_path / "bad.dat"
    bad.write_text("1 2 3 4 5 6\n1 2 3 4 5\n")
    with pytest.raises(trainer.DatasetParseError) as exc:
        trainer.load_aerofoil(bad)
    assert exc.value.line == 2
    bad.write_text("1 2 3 4 5 x\n")
    with pytest.raises(trainer.DatasetParseError, match=":1:"):
        trainer.load_aerofoil(bad)
