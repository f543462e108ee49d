"""Command-line harness: ``synth``, ``train``, ``bounds``, ``sweep`` and ``eval``.

Exit codes: 0 on success, 1 on invalid input (bad flags, config or data),
2 on runtime failure (degenerate problems, I/O errors, every sweep row
failing).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bounds import VARIANTS, format_report, gamma_bound
from .data import generate_synthetic_linear, generate_synthetic_quadratic, load_csv, write_csv
from .errors import TriageError, ValidationError
from .experiments import (
    METHODS,
    ExperimentConfig,
    format_config,
    load_config,
    run_sweep,
    solve_triage,
    theorem_variant,
    write_results,
    write_svg,
)
from .greedy import write_trace_csv
from .human import FixedScores, human_errors, parse_human_model, sample_scores
from .kernels import parse_kernel
from .setfun import ObjectiveContext
from .svm import dumps_model, load_model
from .triage import decide_batch, dumps_policy, evaluate, fit_policy, loads_policy, write_metrics_csv

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _csv_list(kind):
    def parse(text):
        try:
            return tuple(kind(t.strip()) for t in text.split(",") if t.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None

    return parse


def _add_experiment_flags(p):
    g = p.add_argument_group("experiment overrides (config keys)")
    g.add_argument("--source", help="linear, quadratic or a dataset CSV path")
    g.add_argument("--count", type=int)
    g.add_argument("--delta-h", type=float)
    g.add_argument("--lambda", dest="lam", help="positive value or 'cv'")
    g.add_argument("--kernel", help="linear, quadratic, poly:<scale>:<degree>, rbf:<width>")
    g.add_argument("--no-offset", dest="with_offset", action="store_const", const=False)
    g.add_argument("--human", help="auto, fixed, uniform:<delta_h>, messidor, stare, aptos")
    g.add_argument("--epsilon", type=float)
    g.add_argument("--gamma", help="fixed value in (0,1], 'guess' or 'theorem_bound'")
    g.add_argument("--grid-ratio", type=float)
    g.add_argument("--gamma-min", type=float)
    g.add_argument("--policy-features", choices=("auto", "none", "linear", "quadratic"))
    g.add_argument("--error-features", choices=("auto", "linear", "quadratic"))


def build_parser() -> argparse.ArgumentParser:
    def global_flags(p, default):
        d = (lambda v: v) if default else (lambda v: argparse.SUPPRESS)
        p.add_argument("--config", type=Path, default=d(None), help="flat key = value experiment config")
        p.add_argument("--out", type=Path, default=d(Path(".")), help="output directory")
        p.add_argument("--seed", type=int, default=d(None), help="random seed (sweep: run only this seed)")
        p.add_argument("--workers", type=int, default=d(None), help="parallel workers")

    parser = _Parser(prog="svmtriage", description="SVM triage under human assistance.")
    global_flags(parser, True)
    # global flags are accepted after the command name as well
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset CSV")
    p.add_argument("--kind", choices=("linear", "quadratic"), default="linear")
    p.add_argument("--count", type=int, default=400)
    p.add_argument("--delta-h", type=float, default=0.2)
    p.add_argument("--file", type=Path, help="output file (default: <out>/<kind>_<count>_<seed>.csv)")

    p = sub.add_parser("train", parents=[common], help="select the outsourcing set and train the SVM on the rest")
    _add_experiment_flags(p)
    p.add_argument("--budget", type=float, default=0.1, help="n/|V| in [0, 1]")
    p.add_argument("--stochastic", action="store_true")

    p = sub.add_parser("bounds", parents=[common], help="submodularity-ratio bound report")
    _add_experiment_flags(p)
    p.add_argument("--variant", choices=("auto",) + VARIANTS, default="auto")
    p.add_argument("--budgets", type=_csv_list(float), help="budget fractions to check against n_max")

    p = sub.add_parser("sweep", parents=[common], help="methods x budgets x seeds grid to a results CSV")
    _add_experiment_flags(p)
    p.add_argument("--budgets", type=_csv_list(float))
    p.add_argument("--methods", type=_csv_list(str), help=",".join(METHODS))
    p.add_argument("--seeds", type=_csv_list(int))
    p.add_argument("--svg", action="store_const", const=True, help="also draw misclassification and F1 charts")
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False, help="leave seconds_per_iter empty")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained model and policy on a test CSV")
    p.add_argument("--train-data", type=Path, required=True, help="CSV the model was trained on")
    p.add_argument("--test-data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--policy", type=Path, required=True)
    p.add_argument("--budget", type=float, help="test budget fraction (default: the policy's)")
    p.add_argument("--human", default="fixed")
    return parser


_OVERRIDES = (
    "source",
    "count",
    "delta_h",
    "lam",
    "kernel",
    "with_offset",
    "human",
    "epsilon",
    "gamma",
    "grid_ratio",
    "gamma_min",
    "policy_features",
    "error_features",
    "budgets",
    "methods",
    "seeds",
    "svg",
    "timing",
)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    updates = {k: getattr(args, k) for k in _OVERRIDES if getattr(args, k, None) is not None}
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.seed is not None and getattr(args, "seeds", None) is None:
        updates["seeds"] = (args.seed,)
    return replace(cfg, **updates)


def _dataset(cfg: ExperimentConfig, seed: int):
    if cfg.source == "linear":
        return generate_synthetic_linear(cfg.count, cfg.delta_h, seed)
    if cfg.source == "quadratic":
        return generate_synthetic_quadratic(cfg.count, cfg.delta_h, seed)
    return load_csv(cfg.source)


def _training_errors(cfg, ds):
    # auto: stored scores or errors (realized scores for synthetic data)
    model = FixedScores() if cfg.human == "auto" else parse_human_model(cfg.human)
    return human_errors(model, ds)


def _lam(cfg, ds, seed):
    if cfg.lam != "cv":
        return float(cfg.lam)
    from .experiments import cross_validate_lambda

    return cross_validate_lambda(ds, parse_kernel(cfg.kernel), cfg.with_offset, cfg.cv_folds, seed)


def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    gen = generate_synthetic_linear if args.kind == "linear" else generate_synthetic_quadratic
    if args.count < 1:
        raise ValidationError("count must be at least 1")
    ds = gen(args.count, args.delta_h, seed)
    path = args.file or args.out / f"{args.kind}_{args.count}_{seed}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, path)
    print(path)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    seed = 0 if args.seed is None else args.seed
    if not 0.0 <= args.budget <= 1.0:
        raise ValidationError("budget must lie in [0, 1]")
    ds = _dataset(cfg, seed)
    kernel = parse_kernel(cfg.kernel)
    lam = _lam(cfg, ds, seed)
    ctx = ObjectiveContext(ds, lam, kernel, with_offset=cfg.with_offset, human_errors=_training_errors(cfg, ds))
    n = int(math.floor(args.budget * len(ds) + 1e-9))
    sol = solve_triage(cfg, ctx, n, args.stochastic, seed)
    policy = fit_policy(ds, sol, feature_map=cfg.policy_map)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(sol, out / "trace.csv")
    (out / "model.txt").write_text(dumps_model(sol.model), encoding="utf-8")
    (out / "policy.txt").write_text(dumps_policy(policy), encoding="utf-8")
    if cfg.synthetic:
        write_csv(ds, out / "train.csv")
    summary = [
        f"n={n}",
        f"selected_count={len(sol.S)}",
        f"selected={','.join(str(i) for i in sol.selected)}",
        f"gamma_used={sol.gamma_used!r}",
        f"lambda={lam!r}",
        f"g={sol.g!r}",
        f"c={sol.c!r}",
        f"objective={sol.objective!r}",
    ]
    summary += [f"grid={g!r}:{v!r}:{k}" for g, v, k in sol.grid]
    (out / "solution.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    print("\n".join(summary[:2] + summary[3:8]))
    return 0


def cmd_bounds(args) -> int:
    cfg = _config(args)
    seed = 0 if args.seed is None else args.seed
    ds = _dataset(cfg, seed)
    kernel = parse_kernel(cfg.kernel)
    variant = theorem_variant(kernel, cfg.with_offset) if args.variant == "auto" else args.variant
    lam = _lam(cfg, ds, seed)
    budgets = args.budgets or ()
    largest = max((int(math.floor(b * len(ds) + 1e-9)) for b in budgets), default=None)
    rep = gamma_bound(ds, lam, kernel, variant, budget=largest if variant == "kernel_offset" else None)
    for b in budgets:
        n = int(math.floor(b * len(ds) + 1e-9))
        if rep.n_max is not None and n > rep.n_max:
            rep.warnings.append(f"budget {b} (n={n}) exceeds n_max={rep.n_max}; the bound does not cover it")
    text = format_report(rep)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "bounds.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    rows = run_sweep(cfg, log=log)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_results(rows, out / "results.csv")
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    if cfg.svg:
        write_svg(rows, "misclassification", out / "misclassification.svg", "Misclassification")
        write_svg(rows, "f1", out / "f1.svg", "F1 (positive class)")
    print(out / "results.csv")
    failed = sum(1 for r in rows if r["error"])
    if failed:
        print(f"{failed} of {len(rows)} rows failed; see the error column", file=sys.stderr)
    return 2 if rows and failed == len(rows) else 0


def cmd_eval(args) -> int:
    train = load_csv(args.train_data)
    test = load_csv(args.test_data)
    model = load_model(args.model, train)
    policy = loads_policy(args.policy.read_text(encoding="utf-8"))
    budget = policy.budget_fraction if args.budget is None else args.budget
    human = parse_human_model(args.human)
    seed = 0 if args.seed is None else args.seed
    mask = decide_batch(policy, model, test, budget)
    if isinstance(human, FixedScores):
        scores = None
        if mask.any() and test.human_scores is None:
            raise ValidationError("test data has no human scores; pick a human model with --human")
    else:
        scores = sample_scores(human, test, np.random.default_rng(seed))
    m = evaluate(test, model, mask, human, np.random.default_rng(seed), scores=scores)
    args.out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv([("triage", budget, m, seed)], args.out / "metrics.csv")
    print(f"misclassification={m.misclassification!r}")
    print(f"f1={m.f1_positive!r}")
    print(f"deferred_fraction={m.deferred_fraction!r}")
    return 0


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "bounds": cmd_bounds, "sweep": cmd_sweep, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TriageError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
