"""Experiment configuration and the methods x budgets x seeds sweep.

Config files are flat ``key = value`` text. Blank lines and lines starting
with ``#`` are ignored; list values are comma separated. Keys are the field
names of :class:`ExperimentConfig` (``lambda`` is accepted for ``lam``).

Per seed the pipeline is: build the dataset (synthetic draw or CSV), split it
60/40, pick lambda, then run each (method, budget) cell on the shared split.
All methods at one seed see the same test-time human scores.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bounds import gamma_bound
from .data import DataSet, generate_synthetic_linear, generate_synthetic_quadratic, load_csv, split
from .errors import TriageError, ValidationError
from .greedy import TriageSolution, distorted_greedy, guess_gamma_run, stochastic_distorted_greedy
from .human import FixedScores, UniformSynthetic, human_errors, parse_human_model, sample_scores
from .kernels import Linear, parse_kernel
from .setfun import ObjectiveContext
from .svm import train_svm
from .triage import BASELINES, FEATURE_MAPS, decide_batch, evaluate, fit_policy, machine_predictions, run_baseline

__all__ = [
    "METHODS",
    "RESULT_COLUMNS",
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "theorem_variant",
    "SeedData",
    "prepare_seed",
    "cross_validate_lambda",
    "solve_triage",
    "run_sweep",
    "write_results",
    "read_results",
    "write_svg",
    "seed_means",
    "format_config",
]

METHODS = ("greedy", "stochastic_greedy") + BASELINES
RESULT_COLUMNS = (
    "method",
    "budget_fraction",
    "seed",
    "misclassification",
    "f1",
    "deferred_fraction",
    "gamma_used",
    "selected_count",
    "seconds_per_iter",
    "error",
)
LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


@dataclass
class ExperimentConfig:
    """One experiment. ``source`` is ``linear``, ``quadratic`` or a CSV path."""

    source: str = "linear"
    count: int = 400
    delta_h: float = 0.2
    lam: str = "1"
    kernel: str = "linear"
    with_offset: bool = True
    budgets: tuple = (0.0, 0.1, 0.2, 0.3, 0.4)
    methods: tuple = METHODS
    human: str = "auto"
    seeds: tuple = (0, 1, 2, 3, 4)
    train_fraction: float = 0.6
    epsilon: float = 0.1
    gamma: str = "guess"
    grid_ratio: float = 0.7
    gamma_min: float | None = None
    policy_features: str = "auto"
    error_features: str = "auto"
    cv_folds: int = 5
    workers: int = 1
    timing: bool = True
    svg: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.budgets or any(not 0.0 <= b <= 1.0 for b in self.budgets):
            raise ValidationError("budgets must be a nonempty list of fractions in [0, 1]")
        if not self.methods:
            raise ValidationError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValidationError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must lie in (0, 1)")
        if not 0.0 < self.epsilon < 1.0:
            raise ValidationError("epsilon must lie in (0, 1)")
        if self.lam != "cv":
            try:
                if not float(self.lam) > 0:
                    raise ValueError
            except ValueError:
                raise ValidationError(f"lambda must be a positive number or 'cv', got {self.lam!r}") from None
        if self.gamma not in ("guess", "theorem_bound"):
            try:
                g = float(self.gamma)
            except ValueError:
                raise ValidationError("gamma must be a number in (0, 1], 'guess' or 'theorem_bound'") from None
            if not 0.0 < g <= 1.0:
                raise ValidationError("fixed gamma must lie in (0, 1]")
        for name in ("policy_features", "error_features"):
            if getattr(self, name) not in FEATURE_MAPS + ("auto",):
                raise ValidationError(f"{name} must be 'auto' or one of {FEATURE_MAPS}")
        if self.error_features == "none":
            raise ValidationError("error_features cannot be 'none'")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")
        parse_kernel(self.kernel)
        if self.human != "auto":
            parse_human_model(self.human)
        if self.source in ("linear", "quadratic"):
            if self.count < 2:
                raise ValidationError("count must be at least 2")
            if not 0.0 <= self.delta_h <= 1.0:
                raise ValidationError(f"delta_h must lie in [0, 1], got {self.delta_h}")

    @property
    def synthetic(self) -> bool:
        return self.source in ("linear", "quadratic")

    @property
    def policy_map(self) -> str:
        """``auto``: margin only for CSV data, plus quadratic raw-feature terms for synthetic data."""
        if self.policy_features != "auto":
            return self.policy_features
        return "quadratic" if self.synthetic else "none"

    @property
    def error_map(self) -> str:
        if self.error_features != "auto":
            return self.error_features
        return "quadratic" if self.synthetic else "linear"


_LISTS = {"budgets": float, "methods": str, "seeds": int}


def _coerce(name, text):
    text = text.strip()
    if name in _LISTS:
        kind = _LISTS[name]
        items = [t.strip() for t in text.split(",") if t.strip()]
        try:
            return tuple(kind(t) for t in items)
        except ValueError:
            raise ValidationError(f"bad list for {name}: {text!r}") from None
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    t = types[name]
    try:
        if t == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if t == "int":
            return int(text)
        if t == "float":
            return float(text)
        if t == "float | None":
            return None if text.lower() in ("", "none") else float(text)
    except ValueError:
        raise ValidationError(f"bad value for {name}: {text!r}") from None
    return text


_ALIASES = {"lambda": "lam"}


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines over ``base`` (defaults when omitted)."""
    names = {f.name for f in fields(ExperimentConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in names:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        updates[key] = _coerce(key, value)
    return replace(base or ExperimentConfig(), **updates)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def format_config(cfg: ExperimentConfig) -> str:
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


def theorem_variant(kernel, with_offset: bool) -> str:
    if not with_offset:
        return "no_offset"
    return "linear_offset" if isinstance(kernel, Linear) else "kernel_offset"


@dataclass
class SeedData:
    train: DataSet
    test: DataSet
    lam: float
    human: object
    train_errors: np.ndarray
    test_scores: np.ndarray
    full_model: object = None
    contexts: dict = field(default_factory=dict)


_csv_cache: dict = {}


def _source_dataset(cfg: ExperimentConfig, seed: int) -> DataSet:
    if cfg.source == "linear":
        return generate_synthetic_linear(cfg.count, cfg.delta_h, seed)
    if cfg.source == "quadratic":
        return generate_synthetic_quadratic(cfg.count, cfg.delta_h, seed)
    path = str(Path(cfg.source).resolve())
    if path not in _csv_cache:
        _csv_cache[path] = load_csv(path)
    return _csv_cache[path]


def _human_model(cfg: ExperimentConfig):
    if cfg.human != "auto":
        return parse_human_model(cfg.human)
    return UniformSynthetic(cfg.delta_h) if cfg.synthetic else FixedScores()


def cross_validate_lambda(train: DataSet, kernel, with_offset: bool, folds: int, seed: int, grid=LAMBDA_GRID) -> float:
    """Lambda with the lowest k-fold misclassification under full automation.

    Ties go to the larger lambda (stronger regularization).
    """
    N = len(train)
    if folds < 2 or folds > N:
        raise ValidationError(f"cv_folds must lie in [2, {N}]")
    perm = np.random.default_rng(seed).permutation(N)
    parts = np.array_split(perm, folds)
    best, best_err = None, math.inf
    for lam in sorted(grid, reverse=True):
        wrong = 0
        for k in range(folds):
            tr = np.sort(np.concatenate([parts[j] for j in range(folds) if j != k]))
            model = train_svm(train, tr, lam, kernel, with_offset)
            held = train.subset(np.sort(parts[k]))
            wrong += int(np.sum(machine_predictions(model, held) != held.labels))
        if wrong < best_err:
            best, best_err = lam, wrong
    return float(best)


def prepare_seed(cfg: ExperimentConfig, seed: int) -> SeedData:
    ds = _source_dataset(cfg, seed)
    train, test = split(ds, cfg.train_fraction, seed)
    kernel = parse_kernel(cfg.kernel)
    human = _human_model(cfg)
    if isinstance(human, FixedScores) and test.human_scores is None:
        raise ValidationError("test samples have no 'h' column; set human to uniform:<delta_h> or a preset")
    if cfg.synthetic and cfg.human == "auto":
        # training cost uses the realized scores of the training samples
        errs = human_errors(FixedScores(), train)
    else:
        errs = human_errors(human, train)
    lam = cross_validate_lambda(train, kernel, cfg.with_offset, cfg.cv_folds, seed) if cfg.lam == "cv" else float(cfg.lam)
    rng = np.random.default_rng([seed, 0x5eed])
    scores = sample_scores(human, test, rng)
    return SeedData(train, test, lam, human, np.asarray(errs, float), scores)


def _context(cfg, sd: SeedData) -> ObjectiveContext:
    key = "ctx"
    if key not in sd.contexts:
        sd.contexts[key] = ObjectiveContext(
            sd.train, sd.lam, parse_kernel(cfg.kernel), with_offset=cfg.with_offset, human_errors=sd.train_errors
        )
    return sd.contexts[key]


def solve_triage(cfg: ExperimentConfig, ctx: ObjectiveContext, n: int, stochastic: bool, seed: int) -> TriageSolution:
    """One greedy run for budget ``n`` under the configured gamma mode."""
    eps = cfg.epsilon if stochastic else None
    if cfg.gamma == "guess":
        return guess_gamma_run(ctx, n, cfg.grid_ratio, cfg.gamma_min, epsilon=eps, seed=seed)
    if cfg.gamma == "theorem_bound":
        variant = theorem_variant(ctx.kernel, ctx.with_offset)
        rep = gamma_bound(ctx.dataset, ctx.lam, ctx.kernel, variant, budget=n)
        if not rep.gamma_star > 0.0:
            reason = "; ".join(rep.warnings) or "bound is zero"
            raise TriageError(f"theorem bound unavailable ({variant}): {reason}")
        gamma = rep.gamma_star
    else:
        gamma = float(cfg.gamma)
    if stochastic:
        return stochastic_distorted_greedy(ctx, n, gamma, cfg.epsilon, seed)
    return distorted_greedy(ctx, n, gamma)


def _row(method, budget, seed, metrics=None, sol=None, timing=True, error=""):
    row = dict.fromkeys(RESULT_COLUMNS, "")
    row.update(method=method, budget_fraction=repr(float(budget)), seed=str(seed), error=error)
    if metrics is not None:
        row.update(
            misclassification=repr(metrics.misclassification),
            f1=repr(metrics.f1_positive),
            deferred_fraction=repr(metrics.deferred_fraction),
        )
    if sol is not None:
        row.update(gamma_used=repr(sol.gamma_used), selected_count=str(len(sol.S)))
        if timing:
            row["seconds_per_iter"] = repr(sol.seconds_per_iter)
    return row


def _run_cell(cfg, sd: SeedData, method, budget, seed):
    kernel = parse_kernel(cfg.kernel)
    if method in BASELINES:
        if sd.full_model is None:
            # same solve as the greedy runs' S = {} model, so budget 0 matches exactly
            sd.full_model = _context(cfg, sd).full_model
        m = run_baseline(
            method,
            sd.train,
            sd.test,
            budget,
            sd.human,
            sd.lam,
            kernel,
            seed,
            with_offset=cfg.with_offset,
            feature_map=cfg.error_map,
            model=sd.full_model,
            scores=sd.test_scores,
        )
        return _row(method, budget, seed, m, timing=cfg.timing)
    ctx = _context(cfg, sd)
    n = int(math.floor(budget * len(sd.train) + 1e-9))
    sol = solve_triage(cfg, ctx, n, method == "stochastic_greedy", seed)
    policy = fit_policy(sd.train, sol, feature_map=cfg.policy_map)
    test_budget = len(sol.S) / len(sd.train)
    mask = decide_batch(policy, sol.model, sd.test, test_budget)
    m = evaluate(sd.test, sol.model, mask, sd.human, scores=sd.test_scores)
    return _row(method, budget, seed, m, sol, timing=cfg.timing)


def _run_seed(cfg: ExperimentConfig, seed: int, log=None):
    rows = []
    try:
        sd = prepare_seed(cfg, seed)
    except TriageError as exc:
        return [_row(m, b, seed, error=str(exc)) for m in cfg.methods for b in cfg.budgets]
    for method in cfg.methods:
        for budget in cfg.budgets:
            t0 = time.perf_counter()
            try:
                row = _run_cell(cfg, sd, method, budget, seed)
            except TriageError as exc:
                row = _row(method, budget, seed, error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
            if log is not None:
                log(f"seed={seed} method={method} budget={budget} ({time.perf_counter() - t0:.1f}s) {row['error']}")
    return rows


def run_sweep(cfg: ExperimentConfig, log=None) -> list[dict]:
    """All (method, budget, seed) rows, ordered by seed then method then budget."""
    cfg.validate()
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(lambda s: _run_seed(cfg, s, log), cfg.seeds))
    else:
        parts = [_run_seed(cfg, s, log) for s in cfg.seeds]
    return [r for part in parts for r in part]


def write_results(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_results(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def seed_means(rows, column: str) -> dict:
    """``{(method, budget): mean}`` over seeds, skipping failed rows."""
    acc: dict = {}
    for r in rows:
        if r["error"] or r[column] == "":
            continue
        acc.setdefault((r["method"], float(r["budget_fraction"])), []).append(float(r[column]))
    return {k: float(np.mean(v)) for k, v in acc.items()}


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def write_svg(rows, column: str, path, title: str | None = None) -> None:
    """Line chart of the seed-mean ``column`` against budget, one line per method."""
    means = seed_means(rows, column)
    methods = sorted({m for m, _ in means}, key=lambda m: METHODS.index(m) if m in METHODS else 99)
    W, H, pad = 480, 320, 50
    xs = sorted({b for _, b in means}) or [0.0, 1.0]
    ys = list(means.values()) or [0.0, 1.0]
    x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1
    y0, y1 = min(0.0, min(ys)), max(1.0, max(ys))
    sx = lambda x: pad + (x - x0) / (x1 - x0) * (W - 2 * pad)
    sy = lambda y: H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">budget fraction</text>',
        f'<text x="14" y="{H / 2}" transform="rotate(-90 14 {H / 2})" text-anchor="middle">{column}</text>',
    ]
    if title:
        out.append(f'<text x="{W / 2}" y="20" text-anchor="middle">{title}</text>')
    for x in xs:
        out.append(f'<text x="{sx(x):.1f}" y="{H - pad + 14}" text-anchor="middle">{x:g}</text>')
    for t in np.linspace(y0, y1, 5):
        out.append(f'<text x="{pad - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.2f}</text>')
    for i, m in enumerate(methods):
        pts = sorted((b, v) for (mm, b), v in means.items() if mm == m)
        color = _COLORS[i % len(_COLORS)]
        path_pts = " ".join(f"{sx(b):.1f},{sy(v):.1f}" for b, v in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path_pts}"/>')
        out.append(f'<text x="{W - pad + 4}" y="{pad + 14 * i}" fill="{color}">{m}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
