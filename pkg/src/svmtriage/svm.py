"""Soft-margin SVM on an index subset, solved in the dual.

The primal trained on an active set ``A`` (``m = |A|``) is::

    minimize  lam * m * ||w||^2 + sum_{i in A} (1 - y_i (w.phi(x_i) + b))_+

so the regularizer is charged once per active sample. Its dual is::

    maximize  sum(alpha) - alpha' Y K Y alpha / (4 lam m)
    s.t.      0 <= alpha <= 1,  sum(alpha * y) = 0   (the latter only with an offset)

with ``w.phi(x) = sum_i alpha_i y_i K(x, x_i) / (2 lam m)``. The hard-margin
variant drops the upper bound and the hinge terms.

The dual is solved by pairwise coordinate ascent with second-order working
set selection when an offset is present, and by greedy single-coordinate
ascent otherwise. Both stop once the largest KKT violation, measured in
margin units, is below ``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .data import DataSet
from .errors import DegenerateProblemError, NonSeparableError, ParseError, ValidationError
from .kernels import Kernel, Precomputed, gram_matrix, kernel_descriptor, kernel_matrix, parse_kernel

__all__ = [
    "SvmModel",
    "KktReport",
    "train_svm",
    "margin",
    "decision_function",
    "objective_value",
    "dual_value",
    "kkt_check",
    "dumps_model",
    "loads_model",
    "save_model",
    "load_model",
    "DEFAULT_TOL",
    "MAX_UPDATES",
]

DEFAULT_TOL = 1e-5
MAX_UPDATES = 10**6
_TAU = 1e-12

CONVERGED, MAX_ITER, DIVERGED = 0, 1, 2


@numba.njit(cache=True, nogil=True)
def _init_grad(K, idx, y, scale, alpha):
    m = idx.shape[0]
    G = -np.ones(m)
    for s in range(m):
        if alpha[s] != 0.0:
            a_s = alpha[s] * y[s] * scale
            ks = idx[s]
            for t in range(m):
                G[t] += y[t] * K[ks, idx[t]] * a_s
    return G


@numba.njit(cache=True, nogil=True)
def _smo_pairs(K, idx, y, scale, C, alpha, G, tol, max_updates, alpha_cap):
    """Minimize 0.5 a'Qa - sum(a) with y'a = 0 and 0 <= a <= C (in place)."""
    m = idx.shape[0]
    bounded = C < np.inf
    updates = 0
    while True:
        gmax = -np.inf
        i = -1
        for t in range(m):
            if y[t] == 1:
                if alpha[t] < C:
                    v = -G[t]
                    if v > gmax:
                        gmax = v
                        i = t
            else:
                if alpha[t] > 0.0:
                    v = G[t]
                    if v > gmax:
                        gmax = v
                        i = t
        gmin = np.inf
        j = -1
        objmin = np.inf
        if i >= 0:
            ki = idx[i]
            kii = K[ki, ki]
            for t in range(m):
                if (y[t] == 1 and alpha[t] > 0.0) or (y[t] == -1 and alpha[t] < C):
                    v = -y[t] * G[t]
                    if v < gmin:
                        gmin = v
                    b = gmax - v
                    if b > 0.0:
                        kt = idx[t]
                        a = scale * (kii + K[kt, kt] - 2.0 * K[ki, kt])
                        if a <= 0.0:
                            a = _TAU
                        obj = -(b * b) / a
                        if obj < objmin:
                            objmin = obj
                            j = t
        if i < 0 or j < 0 or gmax - gmin < tol:
            return updates, 0
        if updates >= max_updates:
            return updates, 1
        ki = idx[i]
        kj = idx[j]
        Kij = K[ki, kj]
        old_i = alpha[i]
        old_j = alpha[j]
        if y[i] != y[j]:
            quad = scale * (K[ki, ki] + K[kj, kj] - 2.0 * Kij)
            if quad <= 0.0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0.0:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if bounded:
                if diff > 0.0:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = C - diff
                else:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = C + diff
        else:
            quad = scale * (K[ki, ki] + K[kj, kj] - 2.0 * Kij)
            if quad <= 0.0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if bounded and total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if bounded and total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = (alpha[i] - old_i) * y[i] * scale
        dj = (alpha[j] - old_j) * y[j] * scale
        for t in range(m):
            kt = idx[t]
            G[t] += y[t] * (K[ki, kt] * di + K[kj, kt] * dj)
        updates += 1
        if alpha[i] > alpha_cap or alpha[j] > alpha_cap:
            return updates, 2


@numba.njit(cache=True, nogil=True)
def _cd_single(K, idx, y, scale, C, alpha, G, tol, max_updates, alpha_cap):
    """Minimize 0.5 a'Qa - sum(a) with 0 <= a <= C, one coordinate at a time."""
    m = idx.shape[0]
    updates = 0
    while True:
        best = 0.0
        t = -1
        for s in range(m):
            g = G[s]
            if alpha[s] <= 0.0:
                v = -g if g < 0.0 else 0.0
            elif alpha[s] >= C:
                v = g if g > 0.0 else 0.0
            else:
                v = abs(g)
            if v > best:
                best = v
                t = s
        if t < 0 or best < tol:
            return updates, 0
        if updates >= max_updates:
            return updates, 1
        kt = idx[t]
        q = scale * K[kt, kt]
        if q > 0.0:
            new = alpha[t] - G[t] / q
        elif G[t] < 0.0:
            new = C
        else:
            new = 0.0
        if new < 0.0:
            new = 0.0
        if new > C:
            new = C
        if new == np.inf:
            return updates, 2
        d = (new - alpha[t]) * y[t] * scale
        alpha[t] = new
        for s in range(m):
            G[s] += y[s] * K[kt, idx[s]] * d
        updates += 1
        if new > alpha_cap:
            return updates, 2


@dataclass(frozen=True, eq=False)
class KktReport:
    """Indices (into the dataset) violating each optimality condition.

    ``a1``: margin above one but alpha positive. ``a2``: margin below one but
    alpha below its upper bound. ``box``: alpha outside its feasible range.
    """

    a1: list[int]
    a2: list[int]
    box: list[int]
    max_violation: float

    @property
    def count(self) -> int:
        return len(self.a1) + len(self.a2) + len(self.box)

    @property
    def ok(self) -> bool:
        return self.count == 0


@dataclass(frozen=True, eq=False)
class SvmModel:
    """A trained SVM restricted to ``active`` (indices into ``dataset``)."""

    active: np.ndarray
    alpha: np.ndarray
    offset: float | None
    lam: float
    kernel: Kernel
    dataset: DataSet
    hard_margin: bool = False
    converged: bool = True
    updates: int = 0
    # w.phi(x_i) for i in active, offset excluded
    active_decision: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.active.shape[0])

    @property
    def coef(self) -> np.ndarray:
        """Expansion coefficients ``alpha_i y_i / (2 lam m)``."""
        y = self.dataset.labels[self.active]
        return self.alpha * y / (2.0 * self.lam * self.size)

    @property
    def w_norm_sq(self) -> float:
        f = self._active_decision()
        y = self.dataset.labels[self.active]
        # ||w||^2 = sum_i coef_i f_i
        return float(max(0.0, np.dot(self.coef, f) if y.size else 0.0))

    def _active_decision(self) -> np.ndarray:
        if self.active_decision is not None:
            return self.active_decision
        K = gram_matrix(self.dataset, self.kernel)
        return K[np.ix_(self.active, self.active)] @ self.coef

    def decision_values(self) -> np.ndarray:
        """Margins of every dataset sample (offset included)."""
        K = gram_matrix(self.dataset, self.kernel)
        return K[:, self.active] @ self.coef + (self.offset or 0.0)


def _repair_equality(alpha, y):
    r = float(np.dot(alpha, y))
    if abs(r) <= 1e-12:
        return alpha
    pos, neg = y == 1, y == -1
    if r > 0:
        P = alpha[pos].sum()
        alpha[pos] *= (P - r) / P
    else:
        Nn = alpha[neg].sum()
        alpha[neg] *= (Nn + r) / Nn
    return alpha


def _recover_offset(alpha, y, G, C, tol=1e-8):
    # b candidates y_t - w.phi(x_t) = -y_t G_t
    cand = -y * G
    upper_c = C if C < np.inf else np.inf
    interior = (alpha > tol) & (alpha < upper_c - tol)
    if interior.any():
        return float(np.median(cand[interior]))
    at_zero = alpha <= tol
    at_c = ~at_zero
    lower_mask = ((y == 1) & at_zero) | ((y == -1) & at_c)
    upper_mask = ((y == 1) & at_c) | ((y == -1) & at_zero)
    lo = cand[lower_mask].max() if lower_mask.any() else -np.inf
    hi = cand[upper_mask].min() if upper_mask.any() else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return float(0.5 * (lo + hi))
    if np.isfinite(lo):
        return float(lo)
    if np.isfinite(hi):
        return float(hi)
    return 0.0


def train_svm(
    ds: DataSet,
    active,
    lam: float,
    kernel: Kernel,
    with_offset: bool = True,
    warm_start=None,
    *,
    tol: float = DEFAULT_TOL,
    max_updates: int = MAX_UPDATES,
    hard_margin: bool = False,
    alpha_cap: float = 1e6,
) -> SvmModel:
    """Train on ``ds[active]`` and return the dual solution.

    Parameters
    ----------
    warm_start : array, optional
        Initial alpha aligned with ``active``. It is clipped to the box and,
        with an offset, rescaled to satisfy the equality constraint.
    hard_margin : bool
        Drop the hinge terms and the upper bound on alpha. Raises
        :class:`NonSeparableError` when alpha exceeds ``alpha_cap``.

    Non-convergence within ``max_updates`` is reported through
    ``model.converged`` rather than raised.
    """
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    active = np.asarray(active, dtype=np.int64)
    if active.ndim != 1 or active.size < 1:
        raise DegenerateProblemError("the active set is empty")
    if active.min() < 0 or active.max() >= len(ds):
        raise ValidationError("active indices out of range")
    K = gram_matrix(ds, kernel)
    y = ds.labels[active].astype(np.float64)
    yi = ds.labels[active]
    if with_offset and (np.all(yi == 1) or np.all(yi == -1)):
        raise DegenerateProblemError(
            "an SVM with offset needs both classes among the active samples; "
            "cap the number of outsourced samples below the minority class size"
        )
    m = active.size
    scale = 1.0 / (2.0 * lam * m)
    C = np.inf if hard_margin else 1.0
    if warm_start is not None and np.shape(warm_start) == (m,):
        alpha = np.clip(np.array(warm_start, dtype=float), 0.0, C)
        if with_offset:
            alpha = _repair_equality(alpha, y)
    else:
        alpha = np.zeros(m)
    G = _init_grad(K, active, yi, scale, alpha)
    if with_offset:
        updates, status = _smo_pairs(K, active, yi, scale, C, alpha, G, tol, max_updates, alpha_cap)
    else:
        updates, status = _cd_single(K, active, yi, scale, C, alpha, G, tol, max_updates, alpha_cap)
    if hard_margin and (status == DIVERGED or (status == MAX_ITER and alpha.max() > 1e-3 * alpha_cap)):
        raise NonSeparableError("hard-margin dual diverged: the active samples are not separable")
    b = _recover_offset(alpha, y, G, C) if with_offset else None
    f = y * (G + 1.0)
    return SvmModel(
        active=active,
        alpha=alpha,
        offset=b,
        lam=float(lam),
        kernel=kernel,
        dataset=ds,
        hard_margin=hard_margin,
        converged=status == CONVERGED,
        updates=int(updates),
        active_decision=f,
    )


def decision_function(model: SvmModel, X) -> np.ndarray:
    """Margins ``w.phi(x) + b`` for each row of ``X``."""
    if isinstance(model.kernel, Precomputed):
        raise ValidationError("a precomputed-kernel model can only be queried by dataset index")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dataset.dimension:
        raise ValidationError(f"expected {model.dataset.dimension} features, got {X.shape[1]}")
    Kx = kernel_matrix(model.kernel, X, model.dataset.features[model.active])
    return Kx @ model.coef + (model.offset or 0.0)


def margin(model: SvmModel, x) -> float:
    """Margin of one point, given as a feature vector or a dataset index."""
    if isinstance(x, (int, np.integer)):
        if not 0 <= x < len(model.dataset):
            raise ValidationError(f"index {x} outside the dataset")
        K = gram_matrix(model.dataset, model.kernel)
        return float(K[x, model.active] @ model.coef + (model.offset or 0.0))
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("margin expects a single feature vector")
    return float(decision_function(model, x[None, :])[0])


def objective_value(model: SvmModel, ds: DataSet | None = None, active=None) -> float:
    """Primal objective ``lam m ||w||^2 + sum hinge`` on the model's active set."""
    if ds is not None and ds is not model.dataset:
        raise ValidationError("model was trained on a different dataset")
    if active is not None and not np.array_equal(np.asarray(active), model.active):
        raise ValidationError("model was trained on a different active set")
    reg = model.lam * model.size * model.w_norm_sq
    if model.hard_margin:
        return float(reg)
    y = model.dataset.labels[model.active]
    f = model._active_decision() + (model.offset or 0.0)
    return float(reg + np.maximum(0.0, 1.0 - y * f).sum())


def dual_value(model: SvmModel) -> float:
    return float(model.alpha.sum() - model.lam * model.size * model.w_norm_sq)


def kkt_check(model: SvmModel, ds: DataSet | None = None, tolerance: float = 1e-4) -> KktReport:
    """Check the complementary-slackness conditions at ``tolerance``."""
    y = model.dataset.labels[model.active]
    ym = y * (model._active_decision() + (model.offset or 0.0))
    a = model.alpha
    upper = np.inf if model.hard_margin else 1.0
    v1 = (ym > 1 + tolerance) & (a > tolerance)
    v2 = (ym < 1 - tolerance) & (a < upper - tolerance)
    vb = (a < -tolerance) | (a > upper + tolerance)
    mags = [0.0]
    if v1.any():
        mags.append(float(np.max(np.minimum(ym[v1] - 1, a[v1]))))
    if v2.any():
        mags.append(float(np.max(np.minimum(1 - ym[v2], upper - a[v2]))))
    if vb.any():
        mags.append(float(np.max(np.maximum(-a[vb], a[vb] - upper))))
    ids = lambda mask: [int(i) for i in model.active[mask]]
    return KktReport(a1=ids(v1), a2=ids(v2), box=ids(vb), max_violation=max(mags))


def dumps_model(model: SvmModel) -> str:
    """Flat text serialization; floats carry 17 significant digits."""
    fmt = lambda v: format(float(v), ".17g")
    lines = [
        "# svmtriage model v1",
        f"kernel={kernel_descriptor(model.kernel)}",
        f"lambda={fmt(model.lam)}",
        f"offset={'none' if model.offset is None else fmt(model.offset)}",
        f"hard_margin={int(model.hard_margin)}",
        f"dataset_size={len(model.dataset)}",
        "active=" + " ".join(str(int(i)) for i in model.active),
        "alpha=" + " ".join(fmt(a) for a in model.alpha),
    ]
    return "\n".join(lines) + "\n"


def loads_model(text: str, ds: DataSet, kernel: Kernel | None = None) -> SvmModel:
    """Rebuild a model written by :func:`dumps_model` against its dataset."""
    fields = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {line!r}", line=n)
        fields[key.strip()] = val.strip()
    try:
        desc = fields["kernel"]
        if kernel is None:
            if desc == "precomputed":
                raise ValidationError("pass the Precomputed kernel explicitly to load this model")
            kernel = parse_kernel(desc)
        active = np.array([int(v) for v in fields["active"].split()], dtype=np.int64)
        alpha = np.array([float(v) for v in fields["alpha"].split()])
        lam = float(fields["lambda"])
        offset = None if fields["offset"] == "none" else float(fields["offset"])
        hard = bool(int(fields.get("hard_margin", "0")))
        size = int(fields.get("dataset_size", len(ds)))
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if size != len(ds):
        raise ValidationError(f"model was trained on {size} samples, dataset has {len(ds)}")
    if active.shape != alpha.shape:
        raise ParseError("active and alpha lengths differ")
    return SvmModel(active, alpha, offset, lam, kernel, ds, hard_margin=hard)


def save_model(model: SvmModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path, ds: DataSet, kernel: Kernel | None = None) -> SvmModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read(), ds, kernel)
