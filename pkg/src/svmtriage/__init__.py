"""SVM training under human assistance.

Selects which training samples to outsource to human experts and trains a
soft-margin SVM on the rest by distorted greedy maximization of ``g - c``.
"""

from .bounds import GammaBoundReport, delta_star, gamma_bound, reduced_hull_distance, zeta
from .data import DataSet, LabeledSample, generate_synthetic_linear, generate_synthetic_quadratic, load_csv, split, write_csv
from .errors import (
    DegenerateProblemError,
    EnumerationCapError,
    NonSeparableError,
    NumericError,
    ParseError,
    SchemaError,
    TriageError,
    ValidationError,
)
from .greedy import (
    GammaEstimate,
    TriageSolution,
    brute_force_opt,
    distorted_greedy,
    empirical_gamma,
    guess_gamma_run,
    stochastic_distorted_greedy,
)
from .human import DirichletCategorical, FixedScores, UniformSynthetic, human_error, preset, sample_score
from .kernels import Linear, Polynomial, Precomputed, Rbf
from .setfun import ObjectiveContext, SetEvaluation, c_value, evaluate_set, g_value, marginal_gain
from .svm import KktReport, SvmModel, kkt_check, margin, objective_value, train_svm
from .triage import DeferralPolicy, Metrics, decide_batch, evaluate, fit_policy, run_baseline

__version__ = "0.1.0"

__all__ = [
    "DataSet",
    "DeferralPolicy",
    "DegenerateProblemError",
    "DirichletCategorical",
    "EnumerationCapError",
    "FixedScores",
    "GammaBoundReport",
    "GammaEstimate",
    "KktReport",
    "LabeledSample",
    "Linear",
    "Metrics",
    "NonSeparableError",
    "NumericError",
    "ObjectiveContext",
    "ParseError",
    "Polynomial",
    "Precomputed",
    "Rbf",
    "SchemaError",
    "SetEvaluation",
    "SvmModel",
    "TriageError",
    "TriageSolution",
    "UniformSynthetic",
    "ValidationError",
    "brute_force_opt",
    "c_value",
    "decide_batch",
    "delta_star",
    "distorted_greedy",
    "empirical_gamma",
    "evaluate",
    "evaluate_set",
    "fit_policy",
    "g_value",
    "gamma_bound",
    "generate_synthetic_linear",
    "generate_synthetic_quadratic",
    "guess_gamma_run",
    "human_error",
    "kkt_check",
    "load_csv",
    "margin",
    "marginal_gain",
    "objective_value",
    "preset",
    "reduced_hull_distance",
    "run_baseline",
    "sample_score",
    "split",
    "stochastic_distorted_greedy",
    "train_svm",
    "write_csv",
    "zeta",
]
