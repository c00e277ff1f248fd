"""Weak form of the double phase operator, energy, and the operator checks.

The discrete operator is

    <A(u), phi_i> = sum_q w_q a(x_q) grad u . grad phi_i,
    a = |grad u|^(p-2) + mu |grad u|^(q-2),

with the t-argument of the exponents bound according to the model coupling:
the element gradient magnitude (gradient coupling), the value of u at the
quadrature point (solution coupling), or 0 (no coupling).  Passing
``frozen_at`` binds t from that field instead of from u.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from .expr import Expr, parse
from .mesh import Field, Mesh
from .modular import luxemburg_norm
from .nfunction import DEFAULT_QUAD_TOL, Coupling, ExponentModel, Mode, eval_H
from .quadrature import integrate_unit
from .report import Report

__all__ = [
    "Sign",
    "Source",
    "TruncatedSource",
    "truncate_source",
    "ProblemSpec",
    "assemble_residual",
    "residual_full",
    "element_coefficients",
    "energy",
    "derivative_check",
    "monotonicity_check",
    "coercivity_check",
    "lsc_check",
]


class Sign(enum.Enum):
    PLUS = "plus"
    MINUS = "minus"


def _spatial_env(model_dim: int, points: np.ndarray) -> dict:
    env = {"x": points[..., 0]}
    if model_dim >= 2:
        env["y"] = points[..., 1]
    return env


class Source:
    """Source term ``f(x, t)`` with its primitive ``F(x, t) = int_0^t f(x, s) ds``."""

    def __init__(self, expr, dim: int = 1):
        space = ("x", "y")[:dim]
        self.dim = dim
        self.expr = expr if isinstance(expr, Expr) else parse(str(expr), space + ("t",))

    def __repr__(self):
        return f"Source({self.expr.source!r})"

    def __call__(self, points, t) -> np.ndarray:
        return self.expr.vec(t=np.asarray(t, dtype=float), **_spatial_env(self.dim, points))

    def _plain_primitive(self, points, t, quad_tol):
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, points.shape[:-1])
        if not self.expr.depends_on("t"):
            return self(points, t) * t
        tf = np.broadcast_to(t, shape).ravel()
        pf = np.broadcast_to(points, shape + points.shape[-1:]).reshape(-1, points.shape[-1])
        out = np.zeros(tf.size)
        live = np.flatnonzero(tf != 0)
        if live.size:
            tl, pl = tf[live], pf[live]

            def fun(idx, sig):
                return tl[idx, None] * self(pl[idx, None, :], tl[idx, None] * sig)

            out[live] = integrate_unit(fun, live.size, tol=quad_tol)
        return out.reshape(shape)

    def primitive(self, points, t, quad_tol: float = DEFAULT_QUAD_TOL) -> np.ndarray:
        return self._plain_primitive(points, t, quad_tol)


class TruncatedSource(Source):
    """``f(x, clamp(t))`` with the clamp onto [0, eta+] (Plus) or [eta-, 0] (Minus)."""

    def __init__(self, expr, eta_plus, eta_minus, sign: Sign, dim: int = 1):
        super().__init__(expr, dim)
        self.sign = Sign(sign)
        if self.sign is Sign.PLUS:
            if eta_plus is None or not eta_plus > 0:
                raise ValueError("Plus truncation needs eta_plus > 0")
            self.lo, self.hi = 0.0, float(eta_plus)
        else:
            if eta_minus is None or not eta_minus < 0:
                raise ValueError("Minus truncation needs eta_minus < 0")
            self.lo, self.hi = float(eta_minus), 0.0
        self.eta_plus = eta_plus
        self.eta_minus = eta_minus

    def __repr__(self):
        return f"TruncatedSource({self.expr.source!r}, [{self.lo}, {self.hi}])"

    def __call__(self, points, t) -> np.ndarray:
        return super().__call__(points, np.clip(np.asarray(t, dtype=float), self.lo, self.hi))

    def primitive(self, points, t, quad_tol: float = DEFAULT_QUAD_TOL) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        c = np.clip(t, self.lo, self.hi)
        core = self._plain_primitive(points, c, quad_tol)
        below = Source.__call__(self, points, np.full_like(t, self.lo)) * np.minimum(t - self.lo, 0.0)
        above = Source.__call__(self, points, np.full_like(t, self.hi)) * np.maximum(t - self.hi, 0.0)
        return core + below + above


def truncate_source(f, eta_plus, eta_minus, sign, dim: int = 1) -> TruncatedSource:
    """Source clamped so that solutions are trapped in [0, eta+] or [eta-, 0]."""
    return TruncatedSource(f.expr if isinstance(f, Source) else f, eta_plus, eta_minus, sign, dim)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Everything that defines one discrete boundary value problem.

    ``f`` is a source in (x, t) with t bound to u.  ``r`` and ``f0`` define the
    power nonlinearity ``|u|^(r-2) u + f0(x)`` of the nonvariational problem;
    the t-argument of ``r`` follows the model coupling.  ``epsilon > 0`` adds
    ``epsilon (|grad u|^(p+ - 2) + mu |grad u|^(q+ - 2)) grad u``.
    """

    model: ExponentModel
    mesh: Mesh
    mode: Mode = Mode.INTEGRAL
    f: Source | None = None
    r: Expr | None = None
    f0: Expr | None = None
    eta_minus: float | None = None
    eta_plus: float | None = None
    epsilon: float = 0.0
    quad_tol: float = DEFAULT_QUAD_TOL

    def __post_init__(self):
        d = self.mesh.dim
        if self.model.dim != d:
            raise ValueError("model and mesh dimensions differ")
        space = ("x", "y")[:d]
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.f is not None and not isinstance(self.f, Source):
            object.__setattr__(self, "f", Source(self.f, d))
        if self.r is not None and not isinstance(self.r, Expr):
            object.__setattr__(self, "r", parse(str(self.r), space + ("t",)))
        if self.f0 is not None and not isinstance(self.f0, Expr):
            object.__setattr__(self, "f0", parse(str(self.f0), space))
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def coupling(self) -> Coupling:
        return self.model.coupling

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)

    def operator_only(self) -> "ProblemSpec":
        return self.replace(f=None, r=None, f0=None)


def _coeffs(u) -> np.ndarray:
    return np.asarray(u.coefficients if isinstance(u, Field) else u, dtype=float)


def _t_binding(spec: ProblemSpec, src: np.ndarray) -> np.ndarray:
    mesh = spec.mesh
    shape = mesh.quad_weights.shape
    if spec.coupling is Coupling.GRADIENT:
        return np.broadcast_to(mesh.grad_norm(src)[:, None], shape)
    if spec.coupling is Coupling.SOLUTION:
        return mesh.at_quad(src)
    return np.zeros(shape)


def _powers(g, p, q, mu):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        a = np.power(g, p - 2.0) + mu * np.power(g, q - 2.0)
    return np.where(np.isfinite(a), a, 0.0)


def element_coefficients(u, spec: ProblemSpec, frozen_at=None) -> np.ndarray:
    """Quadrature-weighted coefficient ``sum_q w_q a(x_q)`` per element, shape (M,)."""
    u = _coeffs(u)
    mesh, model = spec.mesh, spec.model
    g = mesh.grad_norm(u)[:, None]
    src = u if frozen_at is None else _coeffs(frozen_at)
    tb = _t_binding(spec, src)
    env = _spatial_env(mesh.dim, mesh.quad_points)
    p = model.p.vec(t=tb, **env)
    q = model.q.vec(t=tb, **env)
    mu = np.broadcast_to(model.mu.vec(**env), tb.shape)
    a = _powers(g, p, q, mu)
    if spec.epsilon > 0:
        b = model.bounds
        a = a + spec.epsilon * _powers(g, b.p_plus, b.q_plus, mu)
    return np.sum(a * mesh.quad_weights, axis=1)


def residual_full(u, spec: ProblemSpec, frozen_at=None) -> np.ndarray:
    """Residual at every node (boundary entries included, not meaningful)."""
    u = _coeffs(u)
    mesh = spec.mesh
    coef = element_coefficients(u, spec, frozen_at)
    G = mesh.gradient(u)
    flux = coef[:, None] * G
    res = mesh.assemble_vector(np.einsum("md,mkd->mk", flux, mesh.grad_basis))
    if spec.f is None and spec.r is None and spec.f0 is None:
        return res
    uq = mesh.at_quad(u)
    rhs = np.zeros_like(uq)
    if spec.f is not None:
        rhs = rhs + spec.f(mesh.quad_points, uq)
    if spec.r is not None:
        tb = _t_binding(spec, u if frozen_at is None else _coeffs(frozen_at))
        r = spec.r.vec(t=tb, **_spatial_env(mesh.dim, mesh.quad_points))
        rhs = rhs + np.sign(uq) * np.power(np.abs(uq), r - 1.0)
    if spec.f0 is not None:
        rhs = rhs + spec.f0.vec(**_spatial_env(mesh.dim, mesh.quad_points))
    return res - mesh.load_vector(rhs)


def assemble_residual(u, spec: ProblemSpec, frozen_at=None) -> np.ndarray:
    """Residual entries at the interior nodes."""
    return residual_full(u, spec, frozen_at)[spec.mesh.interior]


def energy(u, spec: ProblemSpec, frozen_at=None) -> float:
    """``J(u) = sum_q w_q [H(x_q, |grad u|) - F(x_q, u)]``.

    H is the integral-form N-function (its t-derivative is ``a(t) t``, so the
    gradient of J is the residual) whatever ``spec.mode`` says.  With
    ``frozen_at`` the exponents are frozen at that field.
    """
    if spec.r is not None or spec.f0 is not None:
        raise ValueError("the power-source problem has no energy")
    u = _coeffs(u)
    mesh, model = spec.mesh, spec.model
    if frozen_at is None and spec.coupling is Coupling.SOLUTION:
        raise ValueError("solution-coupled problems are variational only with frozen exponents")
    g = np.broadcast_to(mesh.grad_norm(u)[:, None], mesh.quad_weights.shape)
    if frozen_at is None:
        frozen_t = None if spec.coupling is Coupling.GRADIENT else np.zeros_like(g)
    else:
        frozen_t = _t_binding(spec, _coeffs(frozen_at))
    dens = eval_H(model, Mode.INTEGRAL, mesh.quad_points, g, spec.quad_tol, frozen_t)
    if spec.epsilon > 0:
        b = model.bounds
        mu = model.mu.vec(**_spatial_env(mesh.dim, mesh.quad_points))
        dens = dens + spec.epsilon * (np.power(g, b.p_plus) / b.p_plus + mu * np.power(g, b.q_plus) / b.q_plus)
    if spec.f is not None:
        dens = dens - spec.f.primitive(mesh.quad_points, mesh.at_quad(u), spec.quad_tol)
    return float(np.sum(dens * mesh.quad_weights))


# ---------------------------------------------------------------------------
# checks


def derivative_check(u, v, spec: ProblemSpec, step: float = 1e-5, tol: float = 1e-5, frozen_at=None) -> Report:
    """Central difference of J along v against ``sum_i residual_i v_i``."""
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    u, v = _coeffs(u), _coeffs(v)
    value = float(residual_full(u, spec, frozen_at)[spec.mesh.interior] @ v[spec.mesh.interior])
    jp = energy(u + step * v, spec, frozen_at)
    jm = energy(u - step * v, spec, frozen_at)
    fd = (jp - jm) / (2.0 * step)
    rel = abs(fd - value) / (1.0 + abs(value))
    return Report.from_margins(
        "derivative",
        [-rel],
        tol,
        {"directional_derivative": value, "central_difference": fd, "step": step},
        margin_kind="relative",
    )


def _pairing(res, w, mesh):
    return float(res[mesh.interior] @ w[mesh.interior])


def monotonicity_check(u, v, spec: ProblemSpec, tol: float = 1e-10) -> Report:
    """``<A(u) - A(v), u - v>`` against ``4 int H(x, |grad(u - v)| / 2)``.

    The lower bound is asserted for exponents that ignore t; with genuine
    t-dependence only nonnegativity is asserted and the bound is logged.
    """
    u, v = _coeffs(u), _coeffs(v)
    op = spec.operator_only()
    mesh = spec.mesh
    w = u - v
    lhs = _pairing(residual_full(u, op) - residual_full(v, op), w, mesh)
    half = np.broadcast_to(0.5 * mesh.grad_norm(w)[:, None], mesh.quad_weights.shape)
    rhs = 4.0 * float(np.sum(eval_H(spec.model, Mode.INTEGRAL, mesh.quad_points, half, spec.quad_tol)
                             * mesh.quad_weights))
    scale = 1.0 + abs(lhs) + abs(rhs)
    bound_margin = (lhs - rhs) / scale
    if spec.model.t_dependent:
        margin, bound = lhs / scale, "nonnegative"
    else:
        margin, bound = bound_margin, "4H"
    return Report.from_margins(
        "monotonicity",
        [margin],
        tol,
        {"lhs": lhs, "rhs_4H": rhs},
        margin_kind="relative",
        details={"asserted": bound, "margin_4H": bound_margin},
    )


def coercivity_check(u, spec: ProblemSpec, tol: float = 1e-10) -> Report:
    """``<A(u), u> / ||u|| >= min(||u||^(p- - 1), ||u||^(q+ - 1))``, gradient Luxemburg norm."""
    u = _coeffs(u)
    mesh = spec.mesh
    if not np.any(u[mesh.interior]):
        raise ValueError("coercivity is undefined for the zero field")
    op = spec.operator_only()
    pair = _pairing(residual_full(u, op), u, mesh)
    norm = luxemburg_norm(mesh.grad_norm(u), spec.model, spec.mode, mesh).value
    b = spec.model.bounds
    bound = min(norm ** (b.p_minus - 1.0), norm ** (b.q_plus - 1.0))
    ratio = pair / norm
    return Report.from_margins(
        "coercivity",
        [(ratio - bound) / (1.0 + bound)],
        tol,
        {"ratio": ratio, "bound": bound, "norm": norm},
        margin_kind="relative",
    )


def lsc_check(modulars, limit_modular: float, tol: float = 1e-8) -> Report:
    """Lower-semicontinuity diagnostic along a recorded sequence of modulars.

    The liminf is estimated by the minimum over the last third of the
    sequence.  A finite trace cannot resolve the liminf better than its own
    tail oscillation, so that oscillation is added to the tolerance.
    """
    m = np.asarray(list(modulars), dtype=float)
    if m.size == 0:
        return Report.from_margins("lsc", [], tol)
    tail = m[-max(1, int(np.ceil(m.size / 3))):]
    liminf = float(tail.min())
    allowance = tol + float(tail.max() - tail.min())
    return Report.from_margins(
        "lsc",
        [liminf - limit_modular],
        allowance,
        {"liminf_estimate": liminf, "limit_modular": limit_modular},
        details={"tail_length": int(tail.size)},
    )
