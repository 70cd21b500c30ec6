"""Random convex analysis on finite probability spaces.

The module ``L0(E, R^d)`` of random vectors over a finite probability space
is treated as a module over ``L0(F)`` for a sub-sigma-algebra ``F`` given by
an atom partition.  The package provides conditional norms, stable convex
sets with compactness certificates, stable convex functions, minimization
and variational-inequality solvers.
"""

from .errors import (ConvergenceError, DivergenceError, HypothesisError, InfeasibleError,
                     L0OptError)
from .prob_core import (IndicatorSet, ProbSpace, RandomVariable, SigmaAlgebra,
                        as_sup_distance, ess_inf, ess_sup, ky_fan_distance, restrict_glue)
from .rn_module import (DualFunctional, ModuleElement, concatenate, cond_expectation,
                        cond_norm, fin_gen_decompose, l0_convex_combination, pairing)
from .convex_sets import (RandomInterval, StableConvexSet, certify_order_bounded,
                          extract_forward_combinations, james_certify, membership, project)
from .functions import (CondNormPower, CondVariance, Indicator, Quadratic, SeparablePLQ,
                        Sum, extend, gateaux, prox)
from .optimize import hansen_richard, minimize, minimize_quadratic, minty_certificate
from .vi import (GradientOperator, LinearOperator, solve_operator_equation, solve_vi,
                 solve_vi_over_set)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DivergenceError",
    "HypothesisError",
    "InfeasibleError",
    "L0OptError",
    "IndicatorSet",
    "ProbSpace",
    "RandomVariable",
    "SigmaAlgebra",
    "as_sup_distance",
    "ess_inf",
    "ess_sup",
    "ky_fan_distance",
    "restrict_glue",
    "DualFunctional",
    "ModuleElement",
    "concatenate",
    "cond_expectation",
    "cond_norm",
    "fin_gen_decompose",
    "l0_convex_combination",
    "pairing",
    "RandomInterval",
    "StableConvexSet",
    "certify_order_bounded",
    "extract_forward_combinations",
    "james_certify",
    "membership",
    "project",
    "CondNormPower",
    "CondVariance",
    "Indicator",
    "Quadratic",
    "SeparablePLQ",
    "Sum",
    "extend",
    "gateaux",
    "prox",
    "hansen_richard",
    "minimize",
    "minimize_quadratic",
    "minty_certificate",
    "GradientOperator",
    "LinearOperator",
    "solve_operator_equation",
    "solve_vi",
    "solve_vi_over_set",
]
