"""The triage set functions ``g`` and ``c`` over outsourcing sets.

For an outsourcing set ``S`` the SVM is trained on ``V \\ S``.
``g(S) = a(V) - objective(V \\ S)`` where ``a(V)`` is the trained objective on
the whole ground set, and ``c(S)`` sums the per-sample human errors over
``S``. Maximizing ``g - c`` under ``|S| <= n`` is the triage problem.

Trained models are cached by their outsourcing set; a new solve is warm
started from the model of any cached subset one element smaller.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .data import DataSet
from .errors import DegenerateProblemError, ValidationError
from .human import FixedScores, HumanModel, human_errors as _human_errors
from .kernels import Kernel, gram_matrix
from .svm import SvmModel, objective_value, train_svm

__all__ = [
    "ObjectiveContext",
    "SetEvaluation",
    "g_value",
    "c_value",
    "marginal_gain",
    "evaluate_set",
]


# tighter than the solver default so g differences stay accurate to the clamp
CONTEXT_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class SetEvaluation:
    S: frozenset
    g: float
    c: float
    model: SvmModel

    @property
    def objective(self) -> float:
        return self.g - self.c


class ObjectiveContext:
    """Everything ``g`` and ``c`` depend on, plus the model cache.

    Parameters
    ----------
    dataset : DataSet
    lam : float
    kernel : Kernel
    with_offset : bool
    human_errors : array, optional
        Per-sample human error. When omitted it is derived from
        ``human_model`` (default: the dataset's stored scores or errors).
    hard_margin : bool
        Use the hard-margin objective ``lam |V\\S| ||w||^2`` instead.
    tol : float
        Solver KKT tolerance. The default keeps duality gaps below ``clamp``.
    clamp : float
        Negative ``g`` values down to ``-clamp`` are reported as 0.
    """

    def __init__(
        self,
        dataset: DataSet,
        lam: float,
        kernel: Kernel,
        *,
        with_offset: bool = True,
        human_errors=None,
        human_model: HumanModel | None = None,
        hard_margin: bool = False,
        tol: float = CONTEXT_TOL,
        clamp: float = 1e-6,
        cache_size: int | None = None,
        alpha_cap: float = 1e6,
    ):
        self.dataset = dataset
        self.lam = float(lam)
        self.kernel = kernel
        self.with_offset = with_offset
        self.hard_margin = hard_margin
        self.tol = tol
        self.clamp = clamp
        self.alpha_cap = alpha_cap
        N = len(dataset)
        if human_errors is None:
            if human_model is None and dataset.human_scores is None and dataset.human_errors is not None:
                human_errors = dataset.human_errors
            else:
                human_errors = _human_errors(human_model or FixedScores(), dataset)
        c = np.array(human_errors, dtype=float)
        if c.shape != (N,):
            raise ValidationError(f"need one human error per sample ({N}), got shape {c.shape}")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValidationError("human errors must be finite and nonnegative")
        c.setflags(write=False)
        self.human_errors = c
        self.gram = gram_matrix(dataset, kernel)
        self._cache: OrderedDict = OrderedDict()
        self._capacity = cache_size if cache_size is not None else max(16, 2 * N)
        self._lock = threading.Lock()
        # objective values outlive the model LRU; keys are the (small) outsourced sets
        self._values: dict = {}
        self.solves = 0
        full = self.model(frozenset())
        self.full_model = full
        self.full_objective = self._inner(full)

    @property
    def ground_size(self) -> int:
        return len(self.dataset)

    @property
    def max_outsourced(self) -> int:
        """Largest ``|S|`` that leaves a well-posed SVM on ``V \\ S``."""
        if self.with_offset:
            return min(self.dataset.positives.size, self.dataset.negatives.size) - 1
        return self.ground_size - 1

    def is_degenerate(self, S: Iterable[int]) -> bool:
        S = frozenset(S)
        rest = len(self.dataset) - len(S)
        if rest < 1:
            return True
        if not self.with_offset:
            return False
        y = self.dataset.labels
        pos_out = sum(1 for i in S if y[i] == 1)
        return pos_out >= self.dataset.positives.size or len(S) - pos_out >= self.dataset.negatives.size

    def _key(self, S) -> frozenset:
        S = frozenset(int(i) for i in S)
        if S and (min(S) < 0 or max(S) >= len(self.dataset)):
            raise ValidationError("outsourcing set has indices outside the ground set")
        return S

    def _inner(self, model: SvmModel) -> float:
        return objective_value(model)

    def _warm_start(self, key: frozenset, active: np.ndarray):
        with self._lock:
            for j in sorted(key):
                base = self._cache.get(key - {j})
                if base is not None:
                    break
            else:
                return None
        pos = np.searchsorted(base.active, active)
        return base.alpha[pos]

    def model(self, S: Iterable[int]) -> SvmModel:
        """SVM trained on ``V \\ S`` (cached)."""
        key = self._key(S)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        if self.is_degenerate(key):
            raise DegenerateProblemError(
                f"outsourcing {len(key)} samples leaves a single class (or nothing) to train on; "
                f"keep the budget at most {self.max_outsourced} (minority class size minus one)"
            )
        mask = np.ones(len(self.dataset), dtype=bool)
        mask[list(key)] = False
        active = np.flatnonzero(mask)
        warm = self._warm_start(key, active) if key else None
        model = train_svm(
            self.dataset,
            active,
            self.lam,
            self.kernel,
            self.with_offset,
            warm,
            tol=self.tol,
            hard_margin=self.hard_margin,
            alpha_cap=self.alpha_cap,
        )
        with self._lock:
            self.solves += 1
            self._cache[key] = model
            self._cache.move_to_end(key)
            while len(self._cache) > self._capacity:
                self._cache.popitem(last=False)
        return model

    def objective(self, S: Iterable[int]) -> float:
        """Trained objective on ``V \\ S`` (value cache first, then the model cache)."""
        key = self._key(S)
        val = self._values.get(key)
        if val is None:
            val = self._inner(self.model(key))
            with self._lock:
                self._values[key] = val
        return val

    def g(self, S: Iterable[int]) -> float:
        key = self._key(S)
        if not key:
            return 0.0
        val = self.full_objective - self.objective(key)
        if -self.clamp <= val < 0.0:
            return 0.0
        return float(val)

    def c(self, S: Iterable[int]) -> float:
        key = self._key(S)
        return math.fsum(self.human_errors[i] for i in key)

    def gain(self, S: Iterable[int], j: int) -> float:
        """``g(S + {j}) - g(S)``, warm starting the larger set from ``S``."""
        key = self._key(S)
        if j in key:
            raise ValidationError(f"element {j} is already in the set")
        return float(self.objective(key) - self.objective(key | {int(j)}))

    def evaluate(self, S: Iterable[int]) -> SetEvaluation:
        key = self._key(S)
        return SetEvaluation(key, self.g(key), self.c(key), self.model(key))


def g_value(ctx: ObjectiveContext, S) -> float:
    return ctx.g(S)


def c_value(ctx: ObjectiveContext, S) -> float:
    return ctx.c(S)


def marginal_gain(ctx: ObjectiveContext, S, j: int) -> float:
    return ctx.gain(S, j)


def evaluate_set(ctx: ObjectiveContext, S) -> SetEvaluation:
    return ctx.evaluate(S)
