import numpy as np
import pytest
from hypothesis import given, strategies as st

from _instances import one_d, random_instance, separable_instance
from svmtriage.data import DataSet
from svmtriage.errors import DegenerateProblemError, NonSeparableError, ValidationError
from svmtriage.kernels import Linear, Polynomial, Precomputed, Rbf, gram_matrix, parse_kernel, kernel_descriptor
from svmtriage.svm import (
    SvmModel,
    decision_function,
    dual_value,
    dumps_model,
    kkt_check,
    load_model,
    loads_model,
    margin,
    objective_value,
    save_model,
    train_svm,
)

TWO = one_d([1.0, -1.0], [1, -1])
ONE = one_d([1.0], [1])


def _all(ds):
    return np.arange(len(ds))


def test_two_point_grid_oracle():
    # equality constraint forces alpha1 = alpha2 = a; Q = ones(2,2), m = 2, lam = 1
    a = np.linspace(0.0, 1.0, 100_001)
    dual = 2 * a - (4 * a**2) / (4 * 1.0 * 2)
    a_star = a[np.argmax(dual)]
    # primal grid over (w, b)
    w, b = np.meshgrid(np.linspace(-2, 2, 801), np.linspace(-2, 2, 801))
    primal = 2 * w**2 + np.maximum(0, 1 - (w + b)) + np.maximum(0, 1 + (-w + b))
    i = np.unravel_index(np.argmin(primal), primal.shape)
    model = train_svm(TWO, _all(TWO), 1.0, Linear(), True)
    assert np.allclose(model.alpha, [a_star, a_star], atol=1e-6)
    # the primal optimum is flat in b over [-0.5, 0.5]; recovery takes the midpoint
    flat = b[np.isclose(primal, primal[i], atol=1e-12)]
    assert flat.min() == pytest.approx(-0.5) and flat.max() == pytest.approx(0.5)
    assert abs(model.offset) < 1e-6
    assert abs(margin(model, np.array([1.0])) - margin(model, np.array([0.0])) - w[i]) < 1e-6
    assert abs(objective_value(model) - primal[i]) < 1e-6
    assert abs(objective_value(model) - 1.5) < 1e-6
    assert abs(dual_value(model) - dual.max()) < 1e-6


def test_single_point_no_offset():
    a = np.linspace(0, 1, 100_001)
    dual = a - a**2 / 4
    model = train_svm(ONE, [0], 1.0, Linear(), False)
    assert abs(model.alpha[0] - a[np.argmax(dual)]) < 1e-6
    assert abs(dual_value(model) - 0.75) < 1e-6
    assert abs(objective_value(model) - 0.75) < 1e-6
    assert model.offset is None


def test_two_point_margin_at_zero():
    model = train_svm(TWO, _all(TWO), 1.0, Linear(), True)
    assert abs(margin(model, np.array([0.0]))) < 1e-9
    assert kkt_check(model, tolerance=1e-6).ok


def test_warm_start_fixed_point():
    ds = random_instance(3, size=12)
    first = train_svm(ds, _all(ds), 1.0, Linear(), True)
    again = train_svm(ds, _all(ds), 1.0, Linear(), True, warm_start=first.alpha)
    assert again.updates <= 2
    assert np.allclose(again.alpha, first.alpha, atol=1e-12)


def test_zero_model_margin_and_objective():
    ds = random_instance(4, size=8)
    zero = SvmModel(_all(ds), np.zeros(len(ds)), 0.0, 1.0, Linear(), ds)
    assert np.all(decision_function(zero, ds.features) == 0.0)
    assert objective_value(zero) == len(ds)


def test_margin_affine_for_linear_kernel():
    ds = random_instance(5, size=10)
    model = train_svm(ds, _all(ds), 0.5, Linear(), True)
    x1, x2 = np.array([1.0, -2.0]), np.array([0.3, 4.0])
    b = model.offset
    for t in (0.0, 0.25, 0.9):
        lhs = margin(model, t * x1 + (1 - t) * x2) - b
        rhs = t * (margin(model, x1) - b) + (1 - t) * (margin(model, x2) - b)
        assert abs(lhs - rhs) < 1e-12


def test_kkt_flags_a1_violation():
    # x = sqrt(8), y = +1, alpha = 0.5, no offset: margin = 0.5 * 8 / 2 = 2
    ds = one_d([np.sqrt(8.0)], [1])
    model = SvmModel(np.array([0]), np.array([0.5]), None, 1.0, Linear(), ds)
    assert abs(margin(model, 0) - 2.0) < 1e-12
    rep = kkt_check(model, tolerance=1e-6)
    assert rep.a1 == [0] and rep.max_violation > 0


def test_kkt_flags_a2_violation():
    ds = one_d([1.0], [1])
    model = SvmModel(np.array([0]), np.array([0.0]), None, 1.0, Linear(), ds)
    rep = kkt_check(model, tolerance=1e-6)
    assert rep.a2 == [0] and not rep.ok


KERNELS = [Linear(), Rbf(1.5), Polynomial(0.5, 2)]


@pytest.mark.parametrize("kernel", KERNELS, ids=kernel_descriptor)
@pytest.mark.parametrize("offset", [True, False])
def test_random_instances_duality_and_kkt(kernel, offset):
    for seed in range(50):
        ds = random_instance(seed, size=10)
        lam = [0.01, 0.1, 1.0, 10.0][seed % 4]
        model = train_svm(ds, _all(ds), lam, kernel, offset)
        p, d = objective_value(model), dual_value(model)
        assert abs(p - d) <= 1e-4 * (1 + abs(p)), (seed, p, d)
        assert kkt_check(model, tolerance=1e-4).ok, seed
        assert np.all(model.alpha >= 0) and np.all(model.alpha <= 1)
        if offset:
            assert abs(np.dot(model.alpha, ds.labels)) < 1e-9
        else:
            assert model.w_norm_sq <= 1.0 / lam + 1e-9


@given(st.integers(0, 10_000), st.integers(3, 14), st.sampled_from([0.05, 0.5, 2.0]))
def test_strong_duality_property(seed, size, lam):
    ds = random_instance(seed, size=size, min_class=1)
    model = train_svm(ds, _all(ds), lam, Linear(), True)
    p, d = objective_value(model), dual_value(model)
    assert abs(p - d) <= 1e-4 * (1 + abs(p))


@given(st.integers(0, 10_000))
def test_subset_training_matches_fresh_dataset(seed):
    ds = random_instance(seed, size=12)
    active = np.array([i for i in range(12) if i % 3 != 0])
    if len(set(ds.labels[active].tolist())) < 2:
        return
    sub = ds.subset(active)
    a = train_svm(ds, active, 0.3, Linear(), True)
    b = train_svm(sub, _all(sub), 0.3, Linear(), True)
    assert abs(objective_value(a) - objective_value(b)) <= 1e-5 * (1 + objective_value(a))


def test_duplicate_of_low_loss_sample_does_not_raise_mean_loss():
    ds = random_instance(11, size=10)
    lam = 0.5
    model = train_svm(ds, _all(ds), lam, Linear(), True)
    per = lam * model.w_norm_sq + np.maximum(0, 1 - ds.labels * model.decision_values())
    j = int(np.argmin(per))
    base = objective_value(model) / len(ds)
    dup = DataSet(np.vstack([ds.features, ds.features[j]]), np.append(ds.labels, ds.labels[j]),
                  human_errors=np.append(ds.human_errors, 0.0))
    m2 = train_svm(dup, _all(dup), lam, Linear(), True)
    assert objective_value(m2) / len(dup) <= base + 1e-6


def test_single_class_with_offset_is_degenerate():
    ds = one_d([1.0, 2.0], [1, 1])
    with pytest.raises(DegenerateProblemError):
        train_svm(ds, _all(ds), 1.0, Linear(), True)
    train_svm(ds, _all(ds), 1.0, Linear(), False)


def test_empty_active_set():
    with pytest.raises(DegenerateProblemError):
        train_svm(TWO, [], 1.0, Linear(), True)


def test_bad_lambda():
    with pytest.raises(ValidationError):
        train_svm(TWO, _all(TWO), 0.0, Linear(), True)


def test_dimension_mismatch():
    model = train_svm(TWO, _all(TWO), 1.0, Linear(), True)
    with pytest.raises(ValidationError):
        margin(model, np.array([1.0, 2.0]))


def test_precomputed_kernel():
    ds = random_instance(2, size=8)
    K = Rbf(2.0)(ds.features, ds.features)
    pre = Precomputed(K)
    a = train_svm(ds, _all(ds), 1.0, pre, True)
    b = train_svm(ds, _all(ds), 1.0, Rbf(2.0), True)
    assert np.allclose(a.alpha, b.alpha, atol=1e-9)
    assert abs(margin(a, 3) - margin(b, ds.features[3])) < 1e-9
    with pytest.raises(ValidationError):
        margin(a, 8)
    with pytest.raises(ValidationError):
        margin(a, ds.features[0])


def test_precomputed_must_be_symmetric():
    with pytest.raises(ValidationError):
        Precomputed(np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ValidationError):
        Rbf(0.0)


def test_kernel_descriptors_round_trip():
    for k in (Linear(), Polynomial(0.5, 2), Rbf(0.7)):
        assert parse_kernel(kernel_descriptor(k)) == k
    assert parse_kernel("quadratic") == Polynomial(0.5, 2)
    with pytest.raises(ValidationError):
        parse_kernel("sigmoid")


def test_quadratic_kernel_values():
    a, b = np.array([[1.0, 2.0]]), np.array([[3.0, -1.0]])
    assert Polynomial(0.5, 2)(a, b)[0, 0] == (0.5 * 1.0) ** 2


def test_gram_cache_reused():
    ds = random_instance(1)
    assert gram_matrix(ds, Linear()) is gram_matrix(ds, Linear())


def test_serialization_round_trip(tmp_path):
    ds = random_instance(9, size=12)
    model = train_svm(ds, np.arange(1, 12), 0.7, Rbf(1.3), True)
    save_model(model, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt", ds)
    assert np.array_equal(back.alpha, model.alpha) and back.offset == model.offset
    assert np.array_equal(back.decision_values(), model.decision_values())
    X = np.random.default_rng(0).normal(size=(5, 2))
    assert np.array_equal(decision_function(back, X), decision_function(model, X))
    again = loads_model(dumps_model(back), ds)
    assert dumps_model(again) == dumps_model(model)


def test_hard_margin_separable():
    ds = separable_instance(0, size=10)
    model = train_svm(ds, _all(ds), 1.0, Linear(), True, hard_margin=True)
    assert np.all(ds.labels * model.decision_values() >= 1 - 1e-4)
    assert objective_value(model) == pytest.approx(len(ds) * model.w_norm_sq)


def test_hard_margin_non_separable():
    ds = one_d([0.0, 1.0, 2.0], [1, -1, 1])
    with pytest.raises(NonSeparableError):
        train_svm(ds, _all(ds), 1.0, Linear(), True, hard_margin=True)
