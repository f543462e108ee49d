import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from svmtriage.data import DataSet, LabeledSample, generate_synthetic_linear
from svmtriage.errors import ValidationError
from svmtriage.human import (
    PRESETS,
    DirichletCategorical,
    FixedScores,
    UniformSynthetic,
    grade_probabilities,
    human_error,
    human_errors,
    parse_human_model,
    preset,
    rescale_grade,
    sample_score,
    sample_scores,
)


def _sample(label, score=None, grade=None):
    return LabeledSample(np.zeros(2), label, score, None, grade)


def _single_chi(chi):
    k = len(chi)
    return DirichletCategorical(tuple(tuple(chi) for _ in range(k)), grade_threshold=2)


def test_uniform_zero_delta_positive_in_unit_interval():
    rng = np.random.default_rng(0)
    m = UniformSynthetic(0.0)
    draws = [sample_score(m, _sample(1), rng=rng) for _ in range(2000)]
    assert min(draws) >= 0.0 and max(draws) <= 1.0


def test_uniform_intervals():
    rng = np.random.default_rng(1)
    m = UniformSynthetic(0.3)
    ds = generate_synthetic_linear(3000, 0.3, 0)
    s = sample_scores(m, ds, rng)
    pos = ds.labels == 1
    assert s[pos].min() >= -0.3 and s[pos].max() <= 0.7
    assert s[~pos].min() >= -0.7 and s[~pos].max() <= 0.3


def test_fixed_scores_errors():
    assert human_error(FixedScores(), _sample(1, 1.0)) == 0.0
    assert human_error(FixedScores(), _sample(1, 0.5)) == 0.5
    assert human_error(FixedScores(), _sample(-1, 0.5)) == 1.5


@given(st.sampled_from([-1, 1]), st.floats(-1, 1))
def test_fixed_error_is_hinge(y, h):
    e = human_error(FixedScores(), _sample(y, h))
    assert e >= 0.0
    assert (e == 0.0) == (y * h >= 1.0)
    assert e == max(0.0, 1.0 - y * h)


@given(st.floats(0, 1), st.floats(0, 1))
def test_uniform_error_nondecreasing_in_delta(a, b):
    lo, hi = sorted((a, b))
    s = _sample(1)
    assert human_error(UniformSynthetic(lo), s) <= human_error(UniformSynthetic(hi), s)


def test_uniform_error_matches_monte_carlo():
    rng = np.random.default_rng(2)
    for y in (1, -1):
        lo = -0.25 if y == 1 else -0.75
        h = lo + rng.random(400_000)
        mc = np.maximum(0.0, 1.0 - y * h)
        se = mc.std() / math.sqrt(mc.size)
        assert abs(human_error(UniformSynthetic(0.25), _sample(y)) - mc.mean()) < 4 * se


def test_dirichlet_concentration_limit():
    chi = [1e-3, 1e-3, 1e6, 1e-3, 1e-3]
    m = _single_chi(chi)
    rng = np.random.default_rng(3)
    draws = [sample_score(m, _sample(1, grade=3), rng=rng) for _ in range(500)]
    assert all(d == rescale_grade(3, 5) for d in draws)


def test_dirichlet_grade_frequencies_monte_carlo():
    chi = np.array([0.1, 0.1, 4, 4, 5])
    m = _single_chi(chi)
    N = 100_000
    ds = DataSet(np.zeros((N, 1)), np.ones(N, dtype=int), grades=np.full(N, 3))
    s = sample_scores(m, ds, np.random.default_rng(4))
    grades = np.rint((s + 1.0) * 2.0).astype(int) + 1
    freq = np.bincount(grades, minlength=6)[1:] / N
    p = chi / chi.sum()
    assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / N))


def test_dirichlet_error_monte_carlo():
    chi = np.array([4.0, 2, 1, 1, 1])
    m = _single_chi(chi)
    expected = human_error(m, _sample(-1, grade=1))
    # independent oracle: draw p, then the grade by inverse CDF
    rng = np.random.default_rng(5)
    n = 1_000_000
    p = rng.dirichlet(chi, size=n)
    q = (rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1) + 1
    h = 2.0 * (q - 1) / 4 - 1.0
    hinge = np.maximum(0.0, 1.0 + h)
    se = hinge.std() / math.sqrt(n)
    assert abs(expected - hinge.mean()) <= 3 * se


def test_dirichlet_requires_grade():
    with pytest.raises(ValidationError):
        human_error(preset("aptos"), _sample(1))
    with pytest.raises(ValidationError):
        sample_score(preset("aptos"), _sample(1), rng=np.random.default_rng(0))


def test_rescale_endpoints():
    assert rescale_grade(1, 5) == -1.0 and rescale_grade(5, 5) == 1.0 and rescale_grade(3, 5) == 0.0
    assert np.allclose(rescale_grade(np.arange(1, 5), 4), [-1, -1 / 3, 1 / 3, 1])


def test_aptos_preset_verbatim():
    m = preset("aptos")
    assert m.chi == ((4, 2, 1, 1, 1), (4, 1, 1, 0.5, 0.5), (0.1, 0.1, 5, 4, 4), (0.1, 0.1, 4, 5, 4), (0.1, 0.1, 4, 4, 5))
    assert m.grade_threshold == 2
    assert [m.label_of_grade(q) for q in range(1, 6)] == [-1, -1, 1, 1, 1]


def test_presets_well_formed():
    assert set(PRESETS) == {"messidor", "stare", "aptos"}
    for m in PRESETS.values():
        for q in range(1, m.grade_count + 1):
            assert math.isclose(grade_probabilities(m, q).sum(), 1.0)


@pytest.mark.parametrize(
    "chi,thr",
    [(((1, 1), (1, 0)), 1), (((1,),), 1), (((1, 1), (1, 1)), 2), (((1, 1, 1), (1, 1)), 1)],
)
def test_dirichlet_validation(chi, thr):
    with pytest.raises(ValidationError):
        DirichletCategorical(chi, thr)


def test_parse_human_model():
    assert parse_human_model("uniform:0.2") == UniformSynthetic(0.2)
    assert parse_human_model("fixed") == FixedScores()
    assert parse_human_model("APTOS") is PRESETS["aptos"]
    assert parse_human_model("dirichlet:stare") is PRESETS["stare"]
    for bad in ("uniform:x", "uniform:2", "nope"):
        with pytest.raises(ValidationError):
            parse_human_model(bad)


def test_vectorised_errors_agree():
    rng = np.random.default_rng(6)
    N = 50
    y = np.where(rng.random(N) < 0.5, 1, -1)
    q = np.where(y == 1, rng.integers(3, 6, N), rng.integers(1, 3, N))
    ds = DataSet(rng.normal(size=(N, 3)), y, human_scores=rng.uniform(-1, 1, N), grades=q)
    for m in (preset("aptos"), UniformSynthetic(0.4), FixedScores()):
        vec = human_errors(m, ds)
        one = [human_error(m, ds.sample(i)) for i in range(N)]
        assert np.allclose(vec, one, rtol=0, atol=1e-15)
