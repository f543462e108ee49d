"""Computable lower bounds on the submodularity ratio of ``g``.

The class-overlap geometry is captured by reduced convex hulls: convex
combinations of one class's feature vectors with every weight capped at
``1/s``. Their distance ``Delta_{1/s}`` grows with ``s``; the first positive
value of the scan, and the cap at which it appears, feed the offset bound.
All hull programs are posed on the Gram matrix, so they work in feature space
for any kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import DataSet
from .errors import ValidationError
from .kernels import Kernel, Linear, gram_matrix

__all__ = [
    "HullDistanceResult",
    "ZetaResult",
    "GammaBoundReport",
    "VARIANTS",
    "project_capped_simplex",
    "reduced_hull_distance",
    "hull_distance_scan",
    "delta_star",
    "zeta",
    "eta",
    "gamma_star_offset",
    "gamma_star_no_offset",
    "gamma_bound",
    "format_report",
]

VARIANTS = ("linear_offset", "kernel_offset", "no_offset", "hard_margin")


def project_capped_simplex(v, cap: float) -> np.ndarray:
    """Euclidean projection onto ``{mu : sum(mu) = 1, 0 <= mu <= cap}``.

    Sorts the ``2k`` breakpoints of ``tau -> sum(clip(v - tau, 0, cap))`` and
    interpolates on the segment where that piecewise-linear function crosses 1.
    """
    v = np.asarray(v, dtype=float)
    k = v.size
    if cap * k < 1.0 - 1e-12:
        raise ValidationError(f"cap {cap} too small for {k} weights to sum to one")
    if cap * k <= 1.0 + 1e-12:
        return np.full(k, 1.0 / k)
    bps = np.sort(np.concatenate([v, v - cap]))

    def mass(tau):
        return np.clip(v - tau, 0.0, cap).sum()

    # mass is nonincreasing in tau; mass(bps[0]) = k*cap >= 1, mass(bps[-1]) = 0
    lo, hi = 0, bps.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mass(bps[mid]) >= 1.0:
            lo = mid
        else:
            hi = mid
    t0, t1 = bps[lo], bps[hi]
    m0, m1 = mass(t0), mass(t1)
    tau = t0 if m0 == m1 else t0 + (m0 - 1.0) * (t1 - t0) / (m0 - m1)
    mu = np.clip(v - tau, 0.0, cap)
    # exact feasibility: push rounding residue onto a coordinate with slack
    r = 1.0 - mu.sum()
    if r != 0.0:
        room = (cap - mu) if r > 0 else mu
        i = int(np.argmax(room))
        mu[i] = min(cap, max(0.0, mu[i] + r))
    return mu


def _lmo_capped(grad, cap):
    # vertex of the capped simplex minimizing <grad, v>
    order = np.argsort(grad, kind="stable")
    v = np.zeros_like(grad)
    left = 1.0
    for i in order:
        take = min(cap, left)
        v[i] = take
        left -= take
        if left <= 0:
            break
    return v


@dataclass(frozen=True, eq=False)
class HullDistanceResult:
    s: int
    distance: float
    mu_pos: np.ndarray
    mu_neg: np.ndarray
    converged: bool
    iterations: int = 0


def _class_blocks(ds):
    pos, neg = ds.positives, ds.negatives
    if pos.size == 0 or neg.size == 0:
        raise ValidationError("both classes must be present")
    return pos, neg


def _hull_qp(Q, pos, neg, cap, init=None, tol=1e-13, max_iter=200_000):
    """Accelerated projected gradient on mu'Q mu over two capped simplices."""
    n_pos = pos.size
    # variables ordered [pos block, neg block]; Q already sign-adjusted
    L = 2.0 * max(np.linalg.eigvalsh(Q)[-1], 1e-300)
    step = 1.0 / L

    def proj(z):
        return np.concatenate(
            [project_capped_simplex(z[:n_pos], cap), project_capped_simplex(z[n_pos:], cap)]
        )

    if init is None:
        x = np.concatenate([np.full(n_pos, 1.0 / n_pos), np.full(neg.size, 1.0 / neg.size)])
    else:
        x = proj(init)
    f = lambda z: float(z @ Q @ z)
    scale = max(1.0, float(np.max(np.abs(np.diag(Q)))))
    z, t, fx = x.copy(), 1.0, f(x)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_new = proj(z - step * 2.0 * (Q @ z))
        f_new = f(x_new)
        if f_new > fx:
            # adaptive restart
            z, t = x.copy(), 1.0
            x_new = proj(x - step * 2.0 * (Q @ x))
            f_new = f(x_new)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, t = x_new, f_new, t_new
        if it % 10 == 0:
            grad = 2.0 * (Q @ x)
            v = np.concatenate([_lmo_capped(grad[:n_pos], cap), _lmo_capped(grad[n_pos:], cap)])
            gap = float(grad @ (x - v))
            if gap <= tol * scale:
                converged = True
                break
    return x, max(0.0, fx), converged, it


def _signed_block_gram(ds, kernel, gram):
    K = gram_matrix(ds, kernel) if gram is None else np.asarray(gram, float)
    pos, neg = _class_blocks(ds)
    order = np.concatenate([pos, neg])
    sign = np.concatenate([np.ones(pos.size), -np.ones(neg.size)])
    Q = K[np.ix_(order, order)] * np.outer(sign, sign)
    return Q, pos, neg


def reduced_hull_distance(
    ds: DataSet,
    s: int,
    kernel: Kernel | None = None,
    *,
    gram=None,
    init=None,
    tol: float = 1e-13,
    max_iter: int = 200_000,
) -> HullDistanceResult:
    """Distance between the two classes' hulls with weights capped at ``1/s``."""
    kernel = Linear() if kernel is None else kernel
    Q, pos, neg = _signed_block_gram(ds, kernel, gram)
    if not 1 <= s <= min(pos.size, neg.size):
        raise ValidationError(f"s={s} must lie in [1, {min(pos.size, neg.size)}] (smaller class size)")
    x, fx, conv, it = _hull_qp(Q, pos, neg, 1.0 / s, init=init, tol=tol, max_iter=max_iter)
    return HullDistanceResult(s, math.sqrt(fx), x[: pos.size], x[pos.size:], conv, it)


def hull_distance_scan(ds: DataSet, kernel: Kernel | None = None, *, gram=None, stop_at_positive=False, threshold=None):
    """``Delta_{1/s}`` for ``s = 1 .. min(|V+|, |V-|)`` (warm started along the scan)."""
    kernel = Linear() if kernel is None else kernel
    Q, pos, neg = _signed_block_gram(ds, kernel, gram)
    vmin = min(pos.size, neg.size)
    thr = _positivity_threshold(Q) if threshold is None else threshold
    out, init = [], None
    for s in range(1, vmin + 1):
        x, fx, conv, it = _hull_qp(Q, pos, neg, 1.0 / s, init=init)
        res = HullDistanceResult(s, math.sqrt(fx), x[: pos.size], x[pos.size:], conv, it)
        out.append(res)
        init = x
        if stop_at_positive and res.distance > thr:
            break
    return out


def _positivity_threshold(Q):
    return 1e-7 * max(1.0, math.sqrt(float(np.max(np.abs(np.diag(Q))))))


def delta_star(ds: DataSet, kernel: Kernel | None = None, *, gram=None) -> tuple[float, int]:
    """Smallest positive reduced-hull distance and the cap index where it appears.

    Returns ``(0.0, 0)`` if every distance in the scan is zero. Distances below
    ``1e-7`` times the feature scale count as zero.
    """
    kernel = Linear() if kernel is None else kernel
    Q, _, _ = _signed_block_gram(ds, kernel, gram)
    thr = _positivity_threshold(Q)
    for res in hull_distance_scan(ds, kernel, gram=gram, stop_at_positive=True, threshold=thr):
        if res.distance > thr:
            return res.distance, res.s
    return 0.0, 0


@dataclass(frozen=True, eq=False)
class ZetaResult:
    zeta: float
    mu: np.ndarray
    min_eigenvalue: float
    full_rank: bool
    converged: bool


def zeta(ds: DataSet, kernel: Kernel | None = None, *, gram=None, tol=1e-12, max_iter=500_000) -> ZetaResult:
    """``min mu' Y K Y mu`` over one simplex per class, by pairwise Frank-Wolfe.

    Also reports the smallest Gram eigenvalue and whether the Gram matrix is
    numerically full rank (smallest eigenvalue above ``1e-8 * trace / N``).
    """
    kernel = Linear() if kernel is None else kernel
    K = gram_matrix(ds, kernel) if gram is None else np.asarray(gram, float)
    N = len(ds)
    evals = np.linalg.eigvalsh(K)
    lam_min = float(evals[0])
    full_rank = lam_min > 1e-8 * float(np.trace(K)) / N
    pos, neg = _class_blocks(ds)
    y = ds.labels.astype(float)
    Q = K * np.outer(y, y)
    blocks = [pos, neg]
    mu = np.zeros(N)
    mu[pos] = 1.0 / pos.size
    mu[neg] = 1.0 / neg.size
    Qmu = Q @ mu
    scale = max(1.0, float(np.max(np.abs(np.diag(Q)))))
    converged = False
    for _ in range(max_iter):
        grad = 2.0 * Qmu
        gap = 0.0
        best = None
        for b in blocks:
            gb = grad[b]
            s_i = b[int(np.argmin(gb))]
            gap += float(gb @ mu[b]) - float(grad[s_i])
            act = b[mu[b] > 0]
            a_i = act[int(np.argmax(grad[act]))]
            spread = grad[a_i] - grad[s_i]
            if best is None or spread > best[0]:
                best = (spread, s_i, a_i)
        if gap <= tol * scale:
            converged = True
            break
        _, s_i, a_i = best
        if s_i == a_i:
            converged = True
            break
        # direction e_s - e_a; exact line search on the quadratic
        dQmu = Qmu[s_i] - Qmu[a_i]
        dQd = Q[s_i, s_i] + Q[a_i, a_i] - 2.0 * Q[s_i, a_i]
        t_max = mu[a_i]
        t = t_max if dQd <= 0 else min(t_max, max(0.0, -dQmu / dQd))
        if t <= 0:
            converged = True
            break
        mu[s_i] += t
        mu[a_i] -= t
        if t == t_max:
            mu[a_i] = 0.0
        Qmu += t * (Q[:, s_i] - Q[:, a_i])
    val = max(0.0, float(mu @ Q @ mu))
    return ZetaResult(val, mu, lam_min, bool(full_rank), converged)


def eta(lam: float, kappa: float) -> float:
    return (2.0 * math.sqrt(lam) + kappa) / math.sqrt(lam)


def _inv_sq_eta_minus_two(e):
    d = e - 2.0
    return math.inf if d <= 0 else 1.0 / (d * d)


def gamma_star_offset(numerator_term: float, e: float, N: int) -> float:
    """Shared offset-variant bound given ``[Delta* sigma*]^2/(4 lam)`` (or its kernel analogue)."""
    num = min(numerator_term, _inv_sq_eta_minus_two(e))
    den = e + (e * e / 2.0) * (0.5 + math.sqrt(0.25 + 4.0 * N * (e - 1.0) / (e * e))) + (e - 1.0) * N
    return num / den


def gamma_star_no_offset(e: float) -> float:
    return min(_inv_sq_eta_minus_two(e), 0.5) / (e + e * e / 2.0)


@dataclass
class GammaBoundReport:
    variant: str
    size: int
    lam: float
    eta: float | None = None
    kappa: float | None = None
    delta_star: float | None = None
    s_star: int | None = None
    sigma_star: float | None = None
    rho_star: float | None = None
    zeta: float | None = None
    min_eigenvalue: float | None = None
    gamma_star: float = 0.0
    n_max: int | None = None
    warnings: list[str] = field(default_factory=list)


def gamma_bound(
    ds: DataSet,
    lam: float,
    kernel: Kernel | None = None,
    variant: str = "linear_offset",
    *,
    budget: int | None = None,
    gram=None,
) -> GammaBoundReport:
    """Evaluate the closed-form submodularity-ratio bound for ``variant``.

    ``budget`` only matters for ``kernel_offset``, whose ``sigma*`` is free:
    it is set to ``rho* - budget/|V|`` (the largest value that admits the
    budget), or to ``rho*`` when no budget is given.
    """
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    kernel = Linear() if kernel is None else kernel
    N = len(ds)
    rep = GammaBoundReport(variant=variant, size=N, lam=float(lam))
    if variant == "hard_margin":
        rep.gamma_star = 1.0 / N
        return rep
    K = gram_matrix(ds, kernel) if gram is None else np.asarray(gram, float)
    kappa = math.sqrt(max(0.0, float(np.max(np.diag(K)))))
    rep.kappa = kappa
    rep.eta = eta(lam, kappa)
    if variant == "no_offset":
        rep.gamma_star = gamma_star_no_offset(rep.eta)
        return rep
    pos, neg = _class_blocks(ds)
    vmin = min(pos.size, neg.size)
    rep.rho_star = vmin / N
    if variant == "linear_offset":
        if not isinstance(kernel, Linear):
            rep.warnings.append("linear_offset bound evaluated with a non-linear kernel")
        d, s = delta_star(ds, kernel, gram=K)
        rep.delta_star, rep.s_star = d, s
        rep.sigma_star = s / N
        if d <= 0.0:
            rep.n_max = 0
            rep.warnings.append("classes overlap at every hull reduction; bound is zero")
            return rep
        rep.n_max = vmin - s
        rep.gamma_star = gamma_star_offset((d * rep.sigma_star) ** 2 / (4.0 * lam), rep.eta, N)
        return rep
    z = zeta(ds, kernel, gram=K)
    rep.zeta = z.zeta
    rep.min_eigenvalue = z.min_eigenvalue
    if budget is None:
        sigma = rep.rho_star
    else:
        sigma = rep.rho_star - budget / N
    rep.sigma_star = sigma
    rep.n_max = max(0, int(math.floor((rep.rho_star - sigma) * N + 1e-9)))
    if not z.full_rank:
        rep.warnings.append(
            f"kernel matrix is rank deficient (min eigenvalue {z.min_eigenvalue:.3g}); bound does not apply"
        )
        return rep
    if sigma <= 0.0:
        rep.warnings.append(f"budget {budget} leaves no admissible sigma*; bound is zero")
        return rep
    rep.gamma_star = gamma_star_offset(z.zeta * sigma**2 / (4.0 * lam), rep.eta, N)
    return rep


def format_report(rep: GammaBoundReport) -> str:
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, float):
            return format(v, ".17g")
        return str(v)

    keys = [
        ("variant", rep.variant),
        ("size", rep.size),
        ("lambda", rep.lam),
        ("eta", rep.eta),
        ("kappa", rep.kappa),
        ("delta_star", rep.delta_star),
        ("s_star", rep.s_star),
        ("sigma_star", rep.sigma_star),
        ("rho_star", rep.rho_star),
        ("zeta", rep.zeta),
        ("min_eigenvalue", rep.min_eigenvalue),
        ("gamma_star", rep.gamma_star),
        ("n_max", rep.n_max),
    ]
    lines = [f"{k}={fmt(v)}" for k, v in keys]
    lines += [f"warning={w}" for w in rep.warnings]
    return "\n".join(lines) + "\n"
