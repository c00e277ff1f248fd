"""Double phase operators with solution- or gradient-dependent exponents.

Modular calculus for generalized N-functions, a P1 finite element
discretization, three solution pipelines and a randomized inequality
harness.
"""

from .expr import Expr, ExprError, evaluate, parse
from .mesh import Field, Mesh, build_interval_mesh, build_rect_mesh, gradient, interpolate, poincare_estimate
from .modular import LuxemburgNorm, ModularValue, holder_pairing, luxemburg_norm, modular
from .nfunction import (
    Bounds,
    Coupling,
    ExponentModel,
    Mode,
    SamplerConfig,
    conjugate,
    eval_H,
    eval_h,
    inverse_H,
    ratio,
    sobolev_conjugate,
    validate_hypotheses,
)
from .operator import (
    ProblemSpec,
    Sign,
    Source,
    assemble_residual,
    coercivity_check,
    derivative_check,
    energy,
    lsc_check,
    monotonicity_check,
    truncate_source,
)
from .report import Report, read_reports, write_reports
from .solvers import (
    SolveConfig,
    SolveResult,
    solve_multiplicity,
    solve_pseudomonotone,
    solve_solution_coupled,
    solve_variational,
)
from .verify import Suite, reevaluate, run_all, run_suite, stock_model

__version__ = "0.1.0"
