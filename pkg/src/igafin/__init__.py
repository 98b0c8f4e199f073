"""Isogeometric (NURBS Galerkin) solvers for nonlinear option-pricing PDEs.

The package prices European calls under proportional transaction costs
(the Leland volatility correction) and convertible bonds with credit risk
(a two-component splitting with penalty-enforced call, put and conversion
constraints), both on a log-price line with cubic NURBS trial spaces and
a theta time-march.  Finite-difference, hat-function and closed-form
references live in :mod:`igafin.reference`; structural invariants in
:mod:`igafin.checks`; the batch runner in :mod:`igafin.cli`.
"""

from .basis import (KnotVector, NurbsBasis, eval_nurbs_all, eval_spline_many,
                    greville_abscissae, load_weights,
                    make_refined_open_knots, make_uniform_open_knots)
from .quadrature import QuadratureRule, gauss_legendre_rule
from .assembly import (Collocation, GalerkinSystem, PhysicalMap, assemble,
                       group_project)
from .linsolve import BandedLU, BandedMatrix, SingularMatrixError
from .models import (AfvParams, ConstraintState, LelandParams,
                     accrued_interest, afv_terminal, calibrate_weights,
                     constraint_state, default_domain, leland_payoff_vhat,
                     unified_coefficients)
from .stepper import (Discretization, NewtonDivergenceError, SchemeConfig,
                      SolutionSurface, TimeSlice, afv_value_curve,
                      build_discretization, evaluate_slice,
                      leland_price_curve, run, run_afv, run_leland)
from .greeks import (GreekCurve, GreekTable, delta, gamma, greeks_table,
                     theta, write_greeks_csv)
from .reference import (bs_exact_call, bs_exact_greeks, fdm_solve_afv,
                        fdm_solve_leland, misfit_epsilon, p1fem_solve)
from .checks import CheckResult, format_report, run_checks

__version__ = "0.1.0"

__all__ = [
    "KnotVector", "NurbsBasis", "eval_nurbs_all", "eval_spline_many",
    "greville_abscissae", "load_weights", "make_refined_open_knots",
    "make_uniform_open_knots",
    "QuadratureRule", "gauss_legendre_rule",
    "Collocation", "GalerkinSystem", "PhysicalMap", "assemble",
    "group_project",
    "BandedLU", "BandedMatrix", "SingularMatrixError",
    "AfvParams", "ConstraintState", "LelandParams", "accrued_interest",
    "afv_terminal", "calibrate_weights", "constraint_state", "default_domain",
    "leland_payoff_vhat", "unified_coefficients",
    "Discretization", "NewtonDivergenceError", "SchemeConfig",
    "SolutionSurface", "TimeSlice", "afv_value_curve", "build_discretization",
    "evaluate_slice", "leland_price_curve", "run", "run_afv", "run_leland",
    "GreekCurve", "GreekTable", "delta", "gamma", "greeks_table", "theta",
    "write_greeks_csv",
    "bs_exact_call", "bs_exact_greeks", "fdm_solve_afv", "fdm_solve_leland",
    "misfit_epsilon", "p1fem_solve",
    "CheckResult", "format_report", "run_checks",
    "__version__",
]
