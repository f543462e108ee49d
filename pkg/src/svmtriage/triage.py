"""Test-time triage: the deferral policy, baselines and evaluation metrics.

Every method is compared at the same automation level. A method produces a
deferral score per test sample and the ``floor(budget * N)`` highest scores
go to humans (ties to the lowest index). Machine predictions are
``+1`` iff the margin is nonnegative. Human predictions are the sign of a
freshly drawn score, with ``sign(0) = +1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .data import DataSet
from .errors import ValidationError
from .greedy import TriageSolution
from .human import (
    DirichletCategorical,
    FixedScores,
    HumanModel,
    UniformSynthetic,
    grade_probabilities,
    rescale_grade,
    sample_scores,
)
from .kernels import Kernel
from .svm import SvmModel, decision_function, train_svm

__all__ = [
    "BASELINES",
    "FEATURE_MAPS",
    "DeferralPolicy",
    "Metrics",
    "fit_logistic",
    "feature_matrix",
    "fit_policy",
    "policy_scores",
    "defer_top",
    "decide_batch",
    "machine_predictions",
    "human_predictions",
    "evaluate",
    "expected_metrics",
    "run_baseline",
    "write_metrics_csv",
    "dumps_policy",
    "loads_policy",
    "error_labels",
]

BASELINES = ("uncertainty", "predicted_error", "full_automation", "no_automation")
FEATURE_MAPS = ("none", "linear", "quadratic")


def fit_logistic(X, z, l2: float = 1e-4, gtol: float = 1e-8) -> np.ndarray:
    """L2-regularized logistic regression; the last column of ``X`` is an unpenalized bias.

    Returns the coefficient vector. Minimizes the mean log-loss plus
    ``l2/2 * ||w[:-1]||^2`` with a trust-region Newton method.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    n, p = X.shape
    pen = np.full(p, l2)
    pen[-1] = 0.0

    def f(w):
        t = X @ w
        # log(1 + e^t) - z t, computed stably
        return float(np.mean(np.logaddexp(0.0, t) - z * t) + 0.5 * np.sum(pen * w * w))

    def grad(w):
        return X.T @ (expit(X @ w) - z) / n + pen * w

    def hess(w):
        s = expit(X @ w)
        return (X.T * (s * (1.0 - s))) @ X / n + np.diag(pen) + 1e-12 * np.eye(p)

    res = minimize(f, np.zeros(p), jac=grad, hess=hess, method="trust-exact", options={"gtol": gtol, "maxiter": 500})
    return res.x


def feature_matrix(X, feature_map: str) -> np.ndarray:
    """Raw features expanded by ``feature_map`` (``none`` gives zero columns)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if feature_map == "none":
        return np.empty((X.shape[0], 0))
    if feature_map == "linear":
        return X
    if feature_map == "quadratic":
        iu = np.triu_indices(X.shape[1])
        return np.hstack([X, (X[:, :, None] * X[:, None, :])[:, iu[0], iu[1]]])
    raise ValidationError(f"unknown feature map {feature_map!r}; choose from {FEATURE_MAPS}")


class _Standardizer:
    def __init__(self, F):
        self.mean = F.mean(axis=0) if F.size else np.zeros(F.shape[1])
        sd = F.std(axis=0) if F.size else np.ones(F.shape[1])
        self.scale = np.where(sd > 0, sd, 1.0)

    def __call__(self, F):
        return (F - self.mean) / self.scale


@dataclass(frozen=True, eq=False)
class DeferralPolicy:
    """Logistic ``pi(defer | x)`` on the absolute margin (plus optional raw-feature terms).

    ``logit = weight * |margin| + extra . phi(x) + bias``. With the default
    feature map ``none``, ``extra`` is empty and the policy depends on the
    margin alone.
    """

    weight: float
    bias: float
    budget_fraction: float
    feature_map: str = "none"
    extra: tuple = ()
    shift: tuple = ()
    scale: tuple = ()

    def __post_init__(self):
        if not (math.isfinite(self.weight) and math.isfinite(self.bias)):
            raise ValidationError("policy parameters must be finite")
        if not 0.0 <= self.budget_fraction <= 1.0:
            raise ValidationError("budget fraction must lie in [0, 1]")

    def logits(self, margins, X=None) -> np.ndarray:
        out = self.weight * np.abs(np.asarray(margins, dtype=float)) + self.bias
        if self.extra:
            F = (feature_matrix(X, self.feature_map) - np.asarray(self.shift)) / np.asarray(self.scale)
            out = out + F @ np.asarray(self.extra)
        return out

    def probability(self, margins, X=None) -> np.ndarray:
        return expit(self.logits(margins, X))


def fit_policy(train: DataSet, solution: TriageSolution, *, feature_map: str = "none", l2: float = 1e-4) -> DeferralPolicy:
    """Fit ``pi`` on ``d_i = [i in S]`` against the triage model's margins on the training set.

    A single-class label set gives the constant policy with ``weight = 0``.
    """
    N = len(train)
    frac = len(solution.S) / N if N else 0.0
    d = np.zeros(N)
    d[list(solution.S)] = 1.0
    if d.min() == d.max():
        p = min(max(frac, 1e-12), 1.0 - 1e-12)
        return DeferralPolicy(0.0, math.log(p / (1.0 - p)), frac, feature_map)
    m = np.abs(solution.model.decision_values())
    F = feature_matrix(train.features, feature_map)
    std = _Standardizer(F)
    Fs = std(F)
    coef = fit_logistic(np.column_stack([m, Fs, np.ones(N)]), d, l2=l2)
    extra = tuple(float(v) for v in coef[1:-1])
    return DeferralPolicy(
        float(coef[0]),
        float(coef[-1]),
        frac,
        feature_map,
        extra,
        tuple(float(v) for v in std.mean) if extra else (),
        tuple(float(v) for v in std.scale) if extra else (),
    )


def policy_scores(policy: DeferralPolicy, model: SvmModel, test: DataSet) -> np.ndarray:
    return policy.logits(decision_function(model, test.features), test.features)


def defer_top(scores, budget_fraction: float) -> np.ndarray:
    """Mask of the ``floor(budget * N)`` highest scores; ties go to the lowest index."""
    if not 0.0 <= budget_fraction <= 1.0:
        raise ValidationError("budget fraction must lie in [0, 1]")
    scores = np.asarray(scores, dtype=float)
    N = scores.size
    k = int(math.floor(budget_fraction * N + 1e-9))
    order = np.lexsort((np.arange(N), -scores))
    mask = np.zeros(N, dtype=bool)
    mask[order[:k]] = True
    return mask


def decide_batch(policy: DeferralPolicy, model: SvmModel, test: DataSet, budget_fraction: float) -> np.ndarray:
    """Boolean mask, ``True`` where the sample goes to a human."""
    return defer_top(policy_scores(policy, model, test), budget_fraction)


@dataclass(frozen=True)
class Metrics:
    """Confusion counts over a test set. Counts are floats so expectations fit too."""

    tp: float
    fp: float
    fn: float
    tn: float
    deferred: int

    @property
    def total(self) -> float:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def misclassification(self) -> float:
        return (self.fp + self.fn) / self.total if self.total else 0.0

    @property
    def f1_positive(self) -> float:
        den = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / den if den else 0.0

    @property
    def deferred_fraction(self) -> float:
        return self.deferred / self.total if self.total else 0.0


def _confusion(y, yhat, deferred) -> Metrics:
    y = np.asarray(y)
    yhat = np.asarray(yhat)
    return Metrics(
        tp=int(np.sum((y == 1) & (yhat == 1))),
        fp=int(np.sum((y == -1) & (yhat == 1))),
        fn=int(np.sum((y == 1) & (yhat == -1))),
        tn=int(np.sum((y == -1) & (yhat == -1))),
        deferred=int(deferred),
    )


def machine_predictions(model: SvmModel, test: DataSet) -> np.ndarray:
    return np.where(decision_function(model, test.features) >= 0.0, 1, -1)


def human_predictions(human: HumanModel, test: DataSet, rng) -> np.ndarray:
    return np.where(sample_scores(human, test, rng) >= 0.0, 1, -1)


def evaluate(test: DataSet, model: SvmModel | None, assignment, human: HumanModel, rng=None, *, scores=None) -> Metrics:
    """Metrics of a machine/human assignment (``True`` = human).

    Human predictions come from ``scores`` (one per test sample) when given,
    otherwise from fresh draws with ``rng``. Passing the same ``scores`` to
    several methods compares them under common random numbers.
    """
    assignment = np.asarray(assignment, dtype=bool)
    if assignment.shape != (len(test),):
        raise ValidationError("assignment must cover every test sample")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    yhat = np.zeros(len(test), dtype=int)
    if (~assignment).any():
        if model is None:
            raise ValidationError("a machine model is needed when some samples stay automated")
        yhat[~assignment] = machine_predictions(model, test.subset(np.flatnonzero(~assignment)))
    if assignment.any():
        if scores is not None:
            yhat[assignment] = np.where(np.asarray(scores)[assignment] >= 0.0, 1, -1)
        else:
            yhat[assignment] = human_predictions(human, test.subset(np.flatnonzero(assignment)), rng)
    return _confusion(test.labels, yhat, assignment.sum())


def _positive_probability(human: HumanModel, test: DataSet) -> np.ndarray:
    """``P(h >= 0)`` per sample."""
    y = test.labels
    if isinstance(human, UniformSynthetic):
        # y=+1: h ~ U[-d, 1-d]; y=-1: h ~ U[-1+d, d]
        d = human.delta_h
        return np.where(y == 1, 1.0 - d, d)
    if isinstance(human, DirichletCategorical):
        if test.grades is None:
            raise ValidationError("the Dirichlet human model needs a grade column")
        k = human.grade_count
        up = rescale_grade(np.arange(1, k + 1), k) >= 0.0
        return np.array([grade_probabilities(human, int(g))[up].sum() for g in test.grades])
    if test.human_scores is None:
        raise ValidationError("FixedScores needs stored human scores")
    return (test.human_scores >= 0.0).astype(float)


def expected_metrics(test: DataSet, model: SvmModel | None, assignment, human: HumanModel) -> Metrics:
    """Like :func:`evaluate` but with human outcomes replaced by their expectations.

    F1 and misclassification are then computed from expected counts.
    """
    assignment = np.asarray(assignment, dtype=bool)
    y = test.labels
    p_pos = np.zeros(len(test))
    if (~assignment).any():
        p_pos[~assignment] = machine_predictions(model, test.subset(np.flatnonzero(~assignment))) == 1
    if assignment.any():
        p_pos[assignment] = _positive_probability(human, test.subset(np.flatnonzero(assignment)))
    pos, neg = y == 1, y == -1
    return Metrics(
        tp=float(p_pos[pos].sum()),
        fp=float(p_pos[neg].sum()),
        fn=float((1.0 - p_pos[pos]).sum()),
        tn=float((1.0 - p_pos[neg]).sum()),
        deferred=int(assignment.sum()),
    )


def _human_labels(scores, human):
    # group label from averaged scores: sign for score models, grade threshold for Dirichlet
    if isinstance(human, DirichletCategorical):
        cut = rescale_grade(human.grade_threshold, human.grade_count)
        return np.where(scores > cut, 1, -1)
    return np.where(scores >= 0.0, 1, -1)


def error_labels(train: DataSet, model: SvmModel, human: HumanModel, rng):
    """Binary targets for the human- and machine-error predictors.

    Human: four fresh scores per sample, split two and two, each pair averaged
    and thresholded; ``z = 1`` when the two group labels disagree. Under
    ``FixedScores`` only one score exists, so ``z = 1`` when its sign
    disagrees with ``y``. Machine: ``z = 1`` when the full-automation SVM
    misclassifies the sample.
    """
    if isinstance(human, FixedScores):
        z_h = (np.where(train.human_scores >= 0.0, 1, -1) != train.labels).astype(float)
    else:
        draws = np.stack([sample_scores(human, train, rng) for _ in range(4)])
        a = _human_labels(draws[:2].mean(axis=0), human)
        b = _human_labels(draws[2:].mean(axis=0), human)
        z_h = (a != b).astype(float)
    z_m = (machine_predictions(model, train) != train.labels).astype(float)
    return z_h, z_m


def _error_probability(F_train, z, F_test, l2):
    if z.min() == z.max():
        return np.full(F_test.shape[0], z[0])
    std = _Standardizer(F_train)
    ones = lambda F: np.column_stack([std(F), np.ones(F.shape[0])])
    coef = fit_logistic(ones(F_train), z, l2=l2)
    return expit(ones(F_test) @ coef)


def run_baseline(
    kind: str,
    train: DataSet,
    test: DataSet,
    budget_fraction: float,
    human: HumanModel,
    lam: float,
    kernel: Kernel,
    seed: int,
    *,
    with_offset: bool = True,
    feature_map: str = "linear",
    l2: float = 1e-4,
    model: SvmModel | None = None,
    scores=None,
) -> Metrics:
    """Metrics of one baseline. ``model`` may pass a precomputed full-automation SVM.

    ``scores`` fixes the test-time human scores (see :func:`evaluate`).

    The human draws at test time use ``default_rng(seed)``; the error-label
    draws of ``predicted_error`` use an independent stream spawned from it.
    """
    if kind not in BASELINES:
        raise ValidationError(f"unknown baseline {kind!r}; choose from {BASELINES}")
    rng_test, rng_labels = np.random.default_rng(seed).spawn(2)
    if kind == "no_automation":
        return evaluate(test, None, np.ones(len(test), dtype=bool), human, rng_test, scores=scores)
    if model is None:
        model = train_svm(train, np.arange(len(train)), lam, kernel, with_offset)
    if kind == "full_automation":
        return evaluate(test, model, np.zeros(len(test), dtype=bool), human, rng_test, scores=scores)
    if kind == "uncertainty":
        m = np.abs(decision_function(model, test.features))
        # uncertainty is 1/|m|; ranking by -|m| avoids dividing by zero
        mask = defer_top(-m, budget_fraction)
        return evaluate(test, model, mask, human, rng_test, scores=scores)
    z_h, z_m = error_labels(train, model, human, rng_labels)
    if feature_map == "none":
        raise ValidationError("predicted_error needs a feature map other than 'none'")
    F_tr = feature_matrix(train.features, feature_map)
    F_te = feature_matrix(test.features, feature_map)
    score = _error_probability(F_tr, z_m, F_te, l2) - _error_probability(F_tr, z_h, F_te, l2)
    return evaluate(test, model, defer_top(score, budget_fraction), human, rng_test, scores=scores)


def write_metrics_csv(rows, path) -> None:
    """Rows of ``(method, budget_fraction, Metrics, seed)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "budget_fraction", "misclassification", "f1", "deferred_fraction", "seed"])
        for method, budget, m, seed in rows:
            w.writerow([method, repr(float(budget)), repr(m.misclassification), repr(m.f1_positive), repr(m.deferred_fraction), seed])


def dumps_policy(policy: DeferralPolicy) -> str:
    fmt = lambda v: format(float(v), ".17g")
    vec = lambda t: ",".join(fmt(v) for v in t)
    return (
        "# svmtriage policy v1\n"
        f"weight={fmt(policy.weight)}\n"
        f"bias={fmt(policy.bias)}\n"
        f"budget_fraction={fmt(policy.budget_fraction)}\n"
        f"feature_map={policy.feature_map}\n"
        f"extra={vec(policy.extra)}\n"
        f"shift={vec(policy.shift)}\n"
        f"scale={vec(policy.scale)}\n"
    )


def loads_policy(text: str) -> DeferralPolicy:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            if "=" not in line:
                raise ValidationError(f"bad policy line {line!r}")
            k, v = line.split("=", 1)
            kv[k] = v
    vec = lambda s: tuple(float(x) for x in s.split(",") if x)
    try:
        return DeferralPolicy(
            float(kv["weight"]),
            float(kv["bias"]),
            float(kv["budget_fraction"]),
            kv.get("feature_map", "none"),
            vec(kv.get("extra", "")),
            vec(kv.get("shift", "")),
            vec(kv.get("scale", "")),
        )
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed policy text: {exc}") from None
