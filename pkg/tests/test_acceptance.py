"""End-to-end acceptance criteria 1-9, each at its stated tolerance.

Every test appends one ``criterion N: PASS|FAIL ...`` line that is printed in
the terminal summary (and to stdout when run with ``-s``).
"""

import math
import time

import numpy as np
import pytest

from _instances import one_d, random_instance, separable_instance
from conftest import ACCEPTANCE_LINES
from svmtriage.bounds import delta_star, gamma_bound, hull_distance_scan, reduced_hull_distance
from svmtriage.data import DataSet, write_csv
from svmtriage.experiments import ExperimentConfig, prepare_seed, run_sweep, seed_means
from svmtriage.greedy import brute_force_opt, distorted_greedy, empirical_gamma, stochastic_distorted_greedy
from svmtriage.kernels import Linear, Polynomial, Rbf
from svmtriage.setfun import ObjectiveContext
from svmtriage.svm import dual_value, kkt_check, margin, objective_value, train_svm
from svmtriage.triage import _positive_probability, expected_metrics


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# Brute-forceable instances shared by criteria 1 and 2: |V| = 10, lambda = 1, linear kernel.
N_BUDGET = 3


@pytest.fixture(scope="module")
def guarantee_instances():
    t0 = time.perf_counter()
    out = []
    for seed in range(20):
        ctx = ObjectiveContext(random_instance(seed, size=10, spread=1.0), 1.0, Linear())
        # the guarantee only uses pairs with |S| <= n and |L| <= n
        gamma = empirical_gamma(ctx, max_size=N_BUDGET).gamma
        S_opt, _ = brute_force_opt(ctx, N_BUDGET)
        out.append((ctx, gamma, ctx.g(S_opt), ctx.c(S_opt)))
    return out, time.perf_counter() - t0


def _run_gamma(gamma):
    # gamma = 0 is outside the algorithm's domain; the bound is then -c(OPT) for any gamma
    return max(gamma, 1e-12)


def test_criterion_1_deterministic_guarantee(guarantee_instances):
    instances, setup = guarantee_instances
    t0 = time.perf_counter()
    worst = math.inf
    for ctx, gamma, g_opt, c_opt in instances:
        sol = distorted_greedy(ctx, N_BUDGET, _run_gamma(gamma))
        bound = (1 - math.exp(-gamma)) * g_opt - c_opt
        worst = min(worst, sol.objective - bound)
    elapsed = setup + time.perf_counter() - t0
    record(1, worst >= -1e-6 and elapsed < 120, f"min slack {worst:.4g} over 20 instances ({elapsed:.1f}s)")


def test_criterion_2_stochastic_guarantee(guarantee_instances):
    eps = 0.2
    worst = math.inf
    for ctx, gamma, g_opt, c_opt in guarantee_instances[0]:
        vals = [stochastic_distorted_greedy(ctx, N_BUDGET, _run_gamma(gamma), eps, seed).objective for seed in range(20)]
        bound = (1 - math.exp(-gamma) - eps) * g_opt - c_opt
        worst = min(worst, float(np.mean(vals)) - bound)
    record(2, worst >= -1e-6, f"min slack of the 20-seed mean {worst:.4g} over 20 instances")


def test_criterion_3_monotone_nonnegative():
    rng = np.random.default_rng(2024)
    worst_gain, worst_g, checked = math.inf, math.inf, 0
    for draw in range(100):
        size = int(rng.integers(4, 13))
        ds = random_instance(int(rng.integers(1 << 30)), size=size)
        kernel = [Linear(), Rbf(1.0), Polynomial(0.5, 2)][draw % 3]
        lam = float(rng.choice([0.01, 0.1, 1.0, 10.0]))
        ctx = ObjectiveContext(ds, lam, kernel, with_offset=bool(draw % 4))
        S = frozenset()
        for k in rng.permutation(size):
            k = int(k)
            if ctx.is_degenerate(S | {k}):
                continue
            # raw objective difference, no clamping
            gain = ctx.objective(S) - ctx.objective(S | {k})
            worst_gain = min(worst_gain, gain)
            S = S | {k}
            worst_g = min(worst_g, ctx.full_objective - ctx.objective(S))
            checked += 1
    ok = worst_gain >= -1e-6 and worst_g >= -1e-6
    record(3, ok, f"min gain {worst_gain:.3g}, min g {worst_g:.3g} over {checked} steps in 100 chains")


def _bound_instances(count=20):
    """Seeds of 10-point instances with a positive linear bound and room for pairs."""
    seeds = []
    for seed in range(1000):
        ds = random_instance(seed, size=10, spread=1.0)
        rep = gamma_bound(ds, 1.0, Linear(), "linear_offset")
        if rep.delta_star > 0 and rep.n_max >= 2:
            seeds.append(seed)
        if len(seeds) == count:
            return seeds
    raise AssertionError("not enough instances")


def test_criterion_4_bound_validity():
    lines, ok = [], True
    # Theorem for the linear kernel with offset: pairs with |S u L| <= n_max
    worst = math.inf
    for seed in _bound_instances():
        ds = random_instance(seed, size=10, spread=1.0)
        rep = gamma_bound(ds, 1.0, Linear(), "linear_offset")
        est = empirical_gamma(ObjectiveContext(ds, 1.0, Linear()), max_union=rep.n_max)
        worst = min(worst, est.gamma - rep.gamma_star)
    ok &= worst >= -1e-6
    lines.append(f"linear_offset min(gamma_hat - gamma*) {worst:.3g}")
    # kernel variant on full-rank RBF Grams, sigma* set by the budget
    worst = math.inf
    for seed in range(20):
        ds = random_instance(seed, size=10, spread=1.0)
        n = min(len(ds.positives), len(ds.negatives)) - 1
        rep = gamma_bound(ds, 1.0, Rbf(1.0), "kernel_offset", budget=n)
        assert not rep.warnings and rep.gamma_star > 0
        est = empirical_gamma(ObjectiveContext(ds, 1.0, Rbf(1.0)), max_union=n)
        worst = min(worst, est.gamma - rep.gamma_star)
    ok &= worst >= -1e-6
    lines.append(f"kernel_offset {worst:.3g}")
    # no offset: no budget condition, every pair
    worst = math.inf
    for seed in range(20):
        ds = random_instance(seed, size=8, spread=1.0)
        rep = gamma_bound(ds, 1.0, Linear(), "no_offset")
        est = empirical_gamma(ObjectiveContext(ds, 1.0, Linear(), with_offset=False))
        worst = min(worst, est.gamma - rep.gamma_star)
    ok &= worst >= -1e-6
    lines.append(f"no_offset {worst:.3g}")
    # hard margin on separable data: gamma_hat >= 1/|V|
    worst = math.inf
    for seed in range(20):
        ds = separable_instance(seed, size=8)
        est = empirical_gamma(ObjectiveContext(ds, 1.0, Linear(), hard_margin=True))
        worst = min(worst, est.gamma - 1.0 / len(ds))
    ok &= worst >= -1e-6
    lines.append(f"hard_margin {worst:.3g}")
    record(4, ok, "; ".join(lines))


def test_criterion_5_svm_correctness():
    worst_gap, violations = -math.inf, 0
    for seed in range(50):
        ds = random_instance(seed, size=10)
        model = train_svm(ds, np.arange(10), 1.0, Linear(), True)
        p, d = objective_value(model), dual_value(model)
        worst_gap = max(worst_gap, abs(p - d) / (1 + abs(p)))
        violations += not kkt_check(model, tolerance=1e-4).ok
    two = train_svm(one_d([1.0, -1.0], [1, -1]), np.arange(2), 1.0, Linear(), True)
    one = train_svm(one_d([1.0], [1]), np.arange(1), 1.0, Linear(), False)
    micro = (
        np.allclose(two.alpha, [1.0, 1.0], atol=1e-6)
        and abs(two.offset) < 1e-6
        and abs(margin(two, np.array([1.0])) - 0.5) < 1e-6
        and abs(objective_value(two) - 1.5) < 1e-6
        and abs(one.alpha[0] - 1.0) < 1e-6
        and abs(objective_value(one) - 0.75) < 1e-6
    )
    ok = worst_gap <= 1e-4 and violations == 0 and micro
    record(5, ok, f"max relative gap {worst_gap:.2g}, KKT failures {violations}, micro-instances {'ok' if micro else 'wrong'}")


@pytest.fixture(scope="module")
def fig3_rows():
    cfg = ExperimentConfig(timing=False)
    t0 = time.perf_counter()
    rows = run_sweep(cfg)
    return rows, time.perf_counter() - t0


def test_criterion_6_fig3(fig3_rows):
    rows, elapsed = fig3_rows
    assert not any(r["error"] for r in rows)
    mis = seed_means(rows, "misclassification")
    f1 = seed_means(rows, "f1")
    na_mis, na_f1 = mis[("no_automation", 0.0)], f1[("no_automation", 0.0)]
    a = abs(na_mis - 0.19) <= 0.05 and abs(na_f1 - 0.81) <= 0.05
    b = mis[("greedy", 0.3)] <= mis[("full_automation", 0.3)]
    # triage baselines are the two that split work at a budget; the extremes are reported alongside
    c_fail = [
        (kind, budget)
        for budget in (0.2, 0.3, 0.4)
        for kind in ("uncertainty", "predicted_error")
        if mis[("greedy", budget)] > mis[(kind, budget)]
    ]
    extremes = ", ".join(
        f"{kind}@{budget}" for budget in (0.2, 0.3, 0.4) for kind in ("full_automation", "no_automation")
        if mis[("greedy", budget)] > mis[(kind, budget)]
    )
    table = ", ".join(f"{b}:{mis[('greedy', b)]:.3f}" for b in (0.0, 0.1, 0.2, 0.3, 0.4))
    detail = (
        f"(a) no-automation {na_mis:.3f}/{na_f1:.3f} {'ok' if a else 'off'}; "
        f"(b) greedy@0.3 {mis[('greedy', 0.3)]:.3f} vs full {mis[('full_automation', 0.3)]:.3f}; "
        f"(c) losses {c_fail or 'none'} (greedy above extremes at: {extremes or 'none'}); "
        f"greedy {table}; {elapsed:.0f}s"
    )
    record(6, a and b and not c_fail and elapsed < 1800, detail)


def test_criterion_7_fig4():
    budgets = (0.1, 0.2, 0.3, 0.4, 0.5)
    means = {}
    for dh in (0.3, 0.4, 0.5):
        cfg = ExperimentConfig(delta_h=dh, methods=("greedy",), budgets=budgets, timing=False)
        rows = run_sweep(cfg)
        assert not any(r["error"] for r in rows)
        sel = seed_means(rows, "selected_count")
        for b in budgets:
            means[(dh, b)] = sel[("greedy", b)]
    n_train = 240
    n_of = {b: math.floor(b * n_train + 1e-9) for b in budgets}
    full_low = [b for b in budgets if means[(0.3, b)] != n_of[b]]
    short_high = means[(0.5, 0.5)] < n_of[0.5]
    trend = all(means[(0.3, b)] >= means[(0.4, b)] >= means[(0.5, b)] for b in budgets)
    table = "; ".join(f"dH={dh}: " + ",".join(f"{means[(dh, b)]:g}" for b in budgets) for dh in (0.3, 0.4, 0.5))
    detail = (
        f"|S|=n at dH=0.3 fails at budgets {full_low or 'none'}; "
        f"|S|<n at dH=0.5, budget 0.5 {'holds' if short_high else 'fails'}; "
        f"monotone in dH {'yes' if trend else 'no'}; mean |S| {table} (n={list(n_of.values())})"
    )
    record(7, not full_low and short_high, detail)


def _graded_csv(path, seed=0, count=300):
    rng = np.random.default_rng(seed)
    q = rng.integers(1, 5, count)
    y = np.where(q > 2, 1, -1)
    X = rng.normal(size=(count, 4)) + 0.6 * y[:, None] + 0.3 * q[:, None]
    write_csv(DataSet(X, y, grades=q), path)


def test_criterion_8_real_data_pipeline(tmp_path):
    src = tmp_path / "graded.csv"
    _graded_csv(src)
    cfg = ExperimentConfig(
        source=str(src),
        human="aptos",
        methods=("greedy", "full_automation", "no_automation"),
        budgets=(0.0, 0.1, 0.2),
        timing=False,
    )
    rows = run_sweep(cfg)
    completed = not any(r["error"] for r in rows)
    by = {(r["method"], float(r["budget_fraction"]), int(r["seed"])): r for r in rows}
    # sampled no-automation misclassification against the closed form, pooled over seeds
    diff, var = 0.0, 0.0
    for seed in cfg.seeds:
        sd = prepare_seed(cfg, seed)
        allh = np.ones(len(sd.test), bool)
        exp = expected_metrics(sd.test, None, allh, sd.human)
        p_pos = _positive_probability(sd.human, sd.test)
        q = np.where(sd.test.labels == 1, 1 - p_pos, p_pos)
        var += float(np.sum(q * (1 - q))) / len(sd.test) ** 2
        diff += float(by[("no_automation", 0.0, seed)]["misclassification"]) - exp.misclassification
    z = abs(diff) / math.sqrt(var)
    exact = all(
        by[("greedy", 0.0, s)][c] == by[("full_automation", 0.0, s)][c]
        for s in cfg.seeds
        for c in ("misclassification", "f1", "deferred_fraction")
    )
    ok = completed and z <= 4.0 and exact
    record(8, ok, f"sweep {'completed' if completed else 'had errors'}; no-automation |z| = {z:.2f}; budget-0 greedy == full automation: {exact}")


def test_criterion_9_geometry():
    ds = one_d([0.0, 2.0, 1.0, 3.0], [1, 1, -1, -1])
    # dense grid over the one free weight per class
    oracle = {}
    for s in (1, 2):
        t = np.linspace(0, 1, 100_001)
        t = t[(t <= 1 / s + 1e-12) & (1 - t <= 1 / s + 1e-12)]
        a, b = 2 * (1 - t), 1 + 2 * (1 - t)
        oracle[s] = _grid_min(a, b)
    d, s_star = delta_star(ds, Linear())
    geo = (
        abs(reduced_hull_distance(ds, 1).distance - oracle[1]) < 1e-6
        and abs(reduced_hull_distance(ds, 2).distance - oracle[2]) < 1e-6
        and abs(d - 1.0) < 1e-6
        and s_star == 2
    )
    worst = math.inf
    for seed in range(30):
        inst = random_instance(seed, size=14)
        for kernel in (Linear(), Rbf(0.7)):
            dist = [r.distance for r in hull_distance_scan(inst, kernel, stop_at_positive=False)]
            worst = min([worst] + [b - a for a, b in zip(dist, dist[1:])])
    ok = geo and worst >= -1e-6
    record(9, ok, f"(delta*, s*) = ({d:.6g}, {s_star}); min step along scans {worst:.3g}")


def _grid_min(a, b):
    # |a - b| over a sorted grid without the full outer product
    b_sorted = np.sort(b)
    idx = np.clip(np.searchsorted(b_sorted, a), 1, b_sorted.size - 1)
    return float(np.min(np.minimum(np.abs(a - b_sorted[idx - 1]), np.abs(a - b_sorted[idx]))))
