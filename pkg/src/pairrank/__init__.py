"""Collaborative ranking from pairwise comparisons.

Fits a low-rank users-by-items score matrix to "user i prefers item j
over item k" observations, via alternating SVM subproblems solved with
stochastic dual coordinate descent (with optional lock-free parallel
passes) or a plain SGD baseline.  Ships the full data pipeline for
rating datasets, ranking metrics, and statistical scaling experiments.
"""

from .model import (
    ComparisonSet,
    ComparisonTriple,
    DivergenceError,
    DualInfeasibleError,
    FactorPair,
    L2_HINGE,
    LOGISTIC,
    LOGISTIC_MLE,
    LOSSES,
    Loss,
    conjugate_l2hinge,
    margin,
    margins,
    primal_objective,
)

__version__ = "0.1.0"

__all__ = [
    "ComparisonSet",
    "ComparisonTriple",
    "DivergenceError",
    "DualInfeasibleError",
    "FactorPair",
    "L2_HINGE",
    "LOGISTIC",
    "LOGISTIC_MLE",
    "LOSSES",
    "Loss",
    "conjugate_l2hinge",
    "margin",
    "margins",
    "primal_objective",
    "__version__",
]
