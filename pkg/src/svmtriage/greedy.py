"""Distorted greedy selection of the outsourcing set, plus verification oracles.

The distorted greedy rule runs ``n`` rounds. In round ``i`` the marginal gain
of ``g`` is discounted by ``omega_i = (1 - gamma/n) ** (n - i - 1)`` and the
candidate maximizing ``omega_i * gain - c_k`` is added only if that value is
strictly positive. Ties go to the lowest index.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import DegenerateProblemError, EnumerationCapError, ValidationError
from .setfun import ObjectiveContext
from .svm import SvmModel

__all__ = [
    "TraceStep",
    "TriageSolution",
    "GammaEstimate",
    "distortion",
    "stochastic_sample_size",
    "distorted_greedy",
    "stochastic_distorted_greedy",
    "gamma_grid",
    "guess_gamma_run",
    "brute_force_opt",
    "enumeration_count",
    "empirical_gamma",
    "write_trace_csv",
]


@dataclass(frozen=True)
class TraceStep:
    iteration: int
    omega: float
    chosen: int | None
    distorted_gain: float
    g: float
    c: float

    @property
    def objective(self) -> float:
        return self.g - self.c


@dataclass(frozen=True, eq=False)
class TriageSolution:
    """Outcome of one greedy run.

    ``grid`` is filled by :func:`guess_gamma_run` with one
    ``(gamma, objective, selected_count)`` triple per grid value.
    """

    S: frozenset
    model: SvmModel
    g: float
    c: float
    trace: list[TraceStep]
    gamma_used: float
    n: int
    seconds: float = 0.0
    grid: list[tuple[float, float, int]] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.g - self.c

    @property
    def selected(self) -> list[int]:
        return sorted(self.S)

    @property
    def seconds_per_iter(self) -> float:
        return self.seconds / self.n if self.n else 0.0


@dataclass(frozen=True)
class GammaEstimate:
    gamma: float
    pairs: int
    witness: tuple[frozenset, frozenset] | None


def distortion(i: int, n: int, gamma: float) -> float:
    return (1.0 - gamma / n) ** (n - (i + 1))


def stochastic_sample_size(ground: int, remaining: int, n: int, epsilon: float) -> int:
    return min(remaining, math.ceil(ground / n * math.log(1.0 / epsilon)))


def _check_run(ctx, n, gamma):
    if n < 0 or int(n) != n:
        raise ValidationError("budget n must be a nonnegative integer")
    if not 0.0 < gamma <= 1.0:
        raise ValidationError(f"gamma must lie in (0, 1], got {gamma}")
    limit = ctx.ground_size - (2 if ctx.with_offset else 1)
    if n > limit:
        raise DegenerateProblemError(
            f"budget n={n} exceeds {limit}: the machine must keep "
            f"{'one sample of each class' if ctx.with_offset else 'at least one sample'}"
        )


def _gains(ctx: ObjectiveContext, S: frozenset, cands, workers: int) -> np.ndarray:
    base = ctx.objective(S)

    def one(k):
        return base - ctx.objective(S | {k})

    if workers > 1 and len(cands) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return np.array(list(pool.map(one, cands)))
    return np.array([one(k) for k in cands])


def _run(ctx, n, gamma, pick_candidates, workers) -> TriageSolution:
    _check_run(ctx, n, gamma)
    t0 = time.perf_counter()
    S: frozenset = frozenset()
    N = ctx.ground_size
    trace = []
    g_S = 0.0
    c_S = 0.0
    for i in range(n):
        omega = distortion(i, n, gamma)
        rest = [k for k in range(N) if k not in S and not ctx.is_degenerate(S | {k})]
        cands = pick_candidates(i, rest)
        chosen = None
        best = float("nan")
        if cands:
            gains = _gains(ctx, S, cands, workers)
            cost = ctx.human_errors[np.asarray(cands)]
            values = omega * gains - cost
            b = int(np.argmax(values))
            best = float(values[b])
            if best > 0.0:
                chosen = int(cands[b])
                S = S | {chosen}
                g_S = ctx.g(S)
                c_S = ctx.c(S)
        trace.append(TraceStep(i, omega, chosen, best, g_S, c_S))
    return TriageSolution(
        S=S,
        model=ctx.model(S),
        g=ctx.g(S),
        c=ctx.c(S),
        trace=trace,
        gamma_used=gamma,
        n=n,
        seconds=time.perf_counter() - t0,
    )


def distorted_greedy(ctx: ObjectiveContext, n: int, gamma: float, *, workers: int = 1) -> TriageSolution:
    """Deterministic distorted greedy over all remaining samples."""
    return _run(ctx, n, gamma, lambda i, rest: rest, workers)


def stochastic_distorted_greedy(
    ctx: ObjectiveContext,
    n: int,
    gamma: float,
    epsilon: float,
    seed: int,
    *,
    workers: int = 1,
) -> TriageSolution:
    """Distorted greedy over a random candidate sample per round.

    Each round draws ``min(|V\\S|, ceil(|V|/n * ln(1/epsilon)))`` candidates
    without replacement from the remaining samples.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValidationError("epsilon must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    N = ctx.ground_size

    def pick(i, rest):
        size = stochastic_sample_size(N, len(rest), n, epsilon)
        if size >= len(rest):
            return rest
        return sorted(int(k) for k in rng.choice(rest, size=size, replace=False))

    return _run(ctx, n, gamma, pick, workers)


def gamma_grid(grid_ratio: float, gamma_min: float) -> list[float]:
    if not 0.0 < grid_ratio < 1.0:
        raise ValidationError("grid_ratio must lie in (0, 1)")
    if not 0.0 < gamma_min <= 1.0:
        raise ValidationError("gamma_min must lie in (0, 1]")
    out, g = [], 1.0
    while g >= gamma_min * (1.0 - 1e-12):
        out.append(g)
        g *= grid_ratio
    return out


def guess_gamma_run(
    ctx: ObjectiveContext,
    n: int,
    grid_ratio: float = 0.7,
    gamma_min: float | None = None,
    *,
    epsilon: float | None = None,
    seed: int = 0,
    workers: int = 1,
) -> TriageSolution:
    """Run distorted greedy for gamma in {1, r, r^2, ...} and keep the best ``g - c``.

    ``gamma_min`` defaults to ``1/|V|``. With ``epsilon`` set, the stochastic
    variant is used (same seed for every grid value).
    """
    if gamma_min is None:
        gamma_min = 1.0 / ctx.ground_size
    best = None
    grid = []
    t0 = time.perf_counter()
    for gamma in gamma_grid(grid_ratio, gamma_min):
        if epsilon is None:
            sol = distorted_greedy(ctx, n, gamma, workers=workers)
        else:
            sol = stochastic_distorted_greedy(ctx, n, gamma, epsilon, seed, workers=workers)
        grid.append((gamma, sol.objective, len(sol.S)))
        if best is None or sol.objective > best.objective:
            best = sol
    return TriageSolution(
        S=best.S,
        model=best.model,
        g=best.g,
        c=best.c,
        trace=best.trace,
        gamma_used=best.gamma_used,
        n=n,
        seconds=time.perf_counter() - t0,
        grid=grid,
    )


def enumeration_count(ground: int, n: int) -> int:
    return sum(comb(ground, k) for k in range(min(n, ground) + 1))


def brute_force_opt(ctx, n: int, cap: int = 200_000) -> tuple[frozenset, float]:
    """Exact maximizer of ``g - c`` over ``|S| <= n`` by enumeration.

    Sets leaving a degenerate training problem are skipped.
    """
    N = ctx.ground_size
    count = enumeration_count(N, n)
    if count > cap:
        raise EnumerationCapError(count, cap)
    best_S, best_val = frozenset(), ctx.g(frozenset()) - ctx.c(frozenset())
    degenerate = getattr(ctx, "is_degenerate", lambda S: False)
    for k in range(1, min(n, N) + 1):
        for combo in itertools.combinations(range(N), k):
            S = frozenset(combo)
            if degenerate(S):
                continue
            val = ctx.g(S) - ctx.c(S)
            if val > best_val:
                best_S, best_val = S, val
    return best_S, best_val


def _pair_count(N, max_size, max_union):
    total = 0
    for s in range(min(max_size, N) + 1):
        top = min(max_size, N - s, max_union - s)
        total += comb(N, s) * sum(comb(N - s, l) for l in range(2, top + 1))
    return total


def empirical_gamma(
    ctx,
    cap: int = 1_000_000,
    *,
    max_size: int | None = None,
    max_union: int | None = None,
    denom_tol: float = 1e-9,
) -> GammaEstimate:
    """Smallest ratio ``sum_j [g(S+j) - g(S)] / (g(S+L) - g(S))`` over disjoint pairs.

    ``S`` and ``L`` range over sets of size at most ``max_size`` with
    ``|S| + |L| <= max_union`` and ``|L| >= 2`` (singletons give ratio 1).
    Pairs whose union leaves a degenerate problem, or whose denominator is at
    most ``denom_tol``, are skipped.
    """
    N = ctx.ground_size
    max_size = N if max_size is None else max_size
    max_union = N if max_union is None else max_union
    count = _pair_count(N, max_size, max_union)
    if count > cap:
        raise EnumerationCapError(count, cap)
    degenerate = getattr(ctx, "is_degenerate", lambda S: False)
    memo: dict = {}

    def g(T):
        v = memo.get(T)
        if v is None:
            v = memo[T] = ctx.g(T)
        return v

    gamma, witness, pairs = 1.0, None, 0
    for s in range(min(max_size, N) + 1):
        for S_t in itertools.combinations(range(N), s):
            S = frozenset(S_t)
            rest = [k for k in range(N) if k not in S]
            top = min(max_size, len(rest), max_union - s)
            for l in range(2, top + 1):
                for L_t in itertools.combinations(rest, l):
                    U = S.union(L_t)
                    if degenerate(U):
                        continue
                    pairs += 1
                    gS = g(S)
                    den = g(U) - gS
                    if den <= denom_tol:
                        continue
                    num = sum(g(S | {j}) - gS for j in L_t)
                    ratio = num / den
                    if ratio < gamma:
                        gamma, witness = ratio, (S, frozenset(L_t))
    return GammaEstimate(min(1.0, max(0.0, gamma)), pairs, witness)


def write_trace_csv(solution: TriageSolution, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "omega", "chosen_index", "distorted_gain", "g", "c", "objective"])
        for st in solution.trace:
            w.writerow(
                [
                    st.iteration,
                    repr(st.omega),
                    "" if st.chosen is None else st.chosen,
                    repr(st.distorted_gain),
                    repr(st.g),
                    repr(st.c),
                    repr(st.objective),
                ]
            )
