"""Human score models and per-sample human error.

Three models are supported:

* :class:`UniformSynthetic` -- scores uniform on an interval of width one that
  slides toward the wrong side as ``delta_h`` grows.
* :class:`DirichletCategorical` -- a grade ``q`` given by a single expert
  selects a Dirichlet concentration vector; a fresh expert grade is drawn
  from the resulting categorical and rescaled linearly onto ``[-1, 1]``.
* :class:`FixedScores` -- scores stored in the dataset.

Human error is the hinge ``(1 - y*h)_+`` (its expectation for the random
models).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .data import DataSet, LabeledSample
from .errors import ValidationError

__all__ = [
    "UniformSynthetic",
    "DirichletCategorical",
    "FixedScores",
    "HumanModel",
    "PRESETS",
    "preset",
    "parse_human_model",
    "rescale_grade",
    "grade_probabilities",
    "sample_score",
    "human_error",
    "human_errors",
    "sample_scores",
]


@dataclass(frozen=True)
class UniformSynthetic:
    delta_h: float

    def __post_init__(self):
        if not 0.0 <= self.delta_h <= 1.0:
            raise ValidationError(f"delta_h must lie in [0, 1], got {self.delta_h}")


@dataclass(frozen=True)
class DirichletCategorical:
    """Per-grade Dirichlet concentrations.

    ``chi[q-1]`` is the concentration vector used for a sample whose recorded
    grade is ``q``. Grades ``<= grade_threshold`` belong to class -1.
    """

    chi: tuple[tuple[float, ...], ...]
    grade_threshold: int = 2

    def __post_init__(self):
        chi = tuple(tuple(float(v) for v in row) for row in self.chi)
        object.__setattr__(self, "chi", chi)
        k = len(chi)
        if k < 2:
            raise ValidationError("need at least two grades")
        if any(len(row) != k for row in chi):
            raise ValidationError("every concentration vector must have one entry per grade")
        if any(v <= 0 for row in chi for v in row):
            raise ValidationError("Dirichlet concentrations must be strictly positive")
        if not 1 <= self.grade_threshold < k:
            raise ValidationError(f"grade_threshold must lie in [1, {k - 1}]")

    @property
    def grade_count(self) -> int:
        return len(self.chi)

    def label_of_grade(self, grade: int) -> int:
        return -1 if grade <= self.grade_threshold else 1


@dataclass(frozen=True)
class FixedScores:
    pass


HumanModel = Union[UniformSynthetic, DirichletCategorical, FixedScores]

PRESETS = {
    "messidor": DirichletCategorical(
        chi=(
            (3, 3, 1, 1),
            (2, 3, 2, 1),
            (0.5, 0.5, 5, 4),
            (0.1, 0.1, 4, 6),
        ),
        grade_threshold=2,
    ),
    "stare": DirichletCategorical(
        chi=(
            (3, 3, 2, 1, 1),
            (2, 7, 0.5, 0.5, 0.1),
            (0.1, 0.1, 4, 3, 2),
            (1, 2, 3, 3, 1),
            (0.1, 0.1, 5, 5, 5),
        ),
        grade_threshold=2,
    ),
    "aptos": DirichletCategorical(
        chi=(
            (4, 2, 1, 1, 1),
            (4, 1, 1, 0.5, 0.5),
            (0.1, 0.1, 5, 4, 4),
            (0.1, 0.1, 4, 5, 4),
            (0.1, 0.1, 4, 4, 5),
        ),
        grade_threshold=2,
    ),
}


def preset(name: str) -> DirichletCategorical:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown human preset {name!r}; choose from {sorted(PRESETS)}") from None


def parse_human_model(text: str) -> HumanModel:
    """Parse ``uniform:<dH>``, ``fixed`` or a preset name (``messidor``...)."""
    text = text.strip().lower()
    if text == "fixed":
        return FixedScores()
    if text.startswith("uniform"):
        _, _, val = text.partition(":")
        try:
            return UniformSynthetic(float(val))
        except ValueError:
            raise ValidationError(f"bad uniform human model {text!r}; use uniform:<delta_h>") from None
    if text.startswith("dirichlet:"):
        text = text.split(":", 1)[1]
    return preset(text)


def rescale_grade(grade, k: int):
    """Map grades 1..k linearly onto [-1, 1]."""
    return 2.0 * (np.asarray(grade, dtype=float) - 1.0) / (k - 1) - 1.0


def grade_probabilities(model: DirichletCategorical, grade: int) -> np.ndarray:
    """Compound Dirichlet-categorical probabilities of each reported grade."""
    if not 1 <= grade <= model.grade_count:
        raise ValidationError(f"grade {grade} outside 1..{model.grade_count}")
    chi = np.asarray(model.chi[grade - 1])
    return chi / chi.sum()


def _require_grade(grade):
    if grade is None:
        raise ValidationError("the Dirichlet human model needs the sample's recorded grade")
    return int(grade)


def sample_score(model: HumanModel, sample: LabeledSample, grade=None, rng=None) -> float:
    """Draw one human score in [-1, 1] for ``sample``."""
    rng = np.random.default_rng() if rng is None else rng
    if isinstance(model, UniformSynthetic):
        lo = -model.delta_h if sample.label == 1 else -1.0 + model.delta_h
        return float(lo + rng.random())
    if isinstance(model, DirichletCategorical):
        g = _require_grade(sample.grade if grade is None else grade)
        if not 1 <= g <= model.grade_count:
            raise ValidationError(f"grade {g} outside 1..{model.grade_count}")
        p = rng.dirichlet(model.chi[g - 1])
        q = int(rng.choice(model.grade_count, p=p)) + 1
        return float(rescale_grade(q, model.grade_count))
    if sample.human_score is None:
        raise ValidationError("FixedScores needs a stored human score")
    return float(sample.human_score)


def human_error(model: HumanModel, sample: LabeledSample, grade=None) -> float:
    """Expected hinge ``E[(1 - y h)_+]`` under ``model``."""
    y = sample.label
    if isinstance(model, UniformSynthetic):
        # the interval never crosses 1 - y*h = 0, so the hinge is linear in h
        return 0.5 + model.delta_h
    if isinstance(model, DirichletCategorical):
        g = _require_grade(sample.grade if grade is None else grade)
        p = grade_probabilities(model, g)
        h = rescale_grade(np.arange(1, model.grade_count + 1), model.grade_count)
        return float(np.sum(p * np.maximum(0.0, 1.0 - y * h)))
    if sample.human_score is None:
        raise ValidationError("FixedScores needs a stored human score")
    return max(0.0, 1.0 - y * sample.human_score)


def human_errors(model: HumanModel, ds: DataSet) -> np.ndarray:
    """Vectorised :func:`human_error` over a dataset."""
    y = ds.labels
    if isinstance(model, UniformSynthetic):
        return np.full(len(ds), 0.5 + model.delta_h)
    if isinstance(model, DirichletCategorical):
        if ds.grades is None:
            raise ValidationError("the Dirichlet human model needs a grade column")
        k = model.grade_count
        if ds.grades.max() > k:
            raise ValidationError(f"grades exceed the model's {k} levels")
        chi = np.asarray(model.chi)
        P = chi / chi.sum(axis=1, keepdims=True)
        h = rescale_grade(np.arange(1, k + 1), k)
        hinge = np.maximum(0.0, 1.0 - y[:, None] * h[None, :])
        return np.sum(P[ds.grades - 1] * hinge, axis=1)
    if ds.human_scores is None:
        if ds.human_errors is not None:
            return np.array(ds.human_errors)
        raise ValidationError("dataset has neither human scores nor human errors")
    return np.maximum(0.0, 1.0 - y * ds.human_scores)


def sample_scores(model: HumanModel, ds: DataSet, rng) -> np.ndarray:
    """One fresh score per sample. ``FixedScores`` returns the stored scores."""
    N = len(ds)
    if isinstance(model, UniformSynthetic):
        lo = np.where(ds.labels == 1, -model.delta_h, -1.0 + model.delta_h)
        return lo + rng.random(N)
    if isinstance(model, DirichletCategorical):
        if ds.grades is None:
            raise ValidationError("the Dirichlet human model needs a grade column")
        k = model.grade_count
        out = np.empty(N)
        for i, g in enumerate(ds.grades):
            p = rng.dirichlet(model.chi[g - 1])
            out[i] = rescale_grade(int(rng.choice(k, p=p)) + 1, k)
        return out
    if ds.human_scores is None:
        raise ValidationError("FixedScores needs stored human scores")
    return np.array(ds.human_scores)
