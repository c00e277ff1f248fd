"""Solution pipelines: truncated energy descent, damped Newton for the
power-source problem, and the epsilon-perturbation scheme with frozen
exponents for solution-dependent exponents.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Field, Mesh, interpolate
from .modular import luxemburg_norm
from .nfunction import Coupling, Mode
from .operator import (
    ProblemSpec,
    Sign,
    Source,
    _t_binding,
    assemble_residual,
    element_coefficients,
    energy,
    truncate_source,
)
from .report import Report

__all__ = [
    "SolveConfig",
    "SolveResult",
    "fd_jacobian",
    "solve_variational",
    "solve_pseudomonotone",
    "solve_solution_coupled",
    "solve_multiplicity",
    "default_epsilon_schedule",
    "sign_condition",
]

BOUND_TOL = 1e-8


def default_epsilon_schedule(levels: int = 11) -> tuple:
    return tuple(2.0 ** -k for k in range(levels))


@dataclass(frozen=True)
class SolveConfig:
    """Solver controls.

    ``max_outer`` caps the nonlinear (Newton or descent) iterations of one
    solve; ``max_inner`` caps the frozen-exponent fixed-point iterations per
    epsilon level.  ``limit_stage`` appends a final epsilon = 0 level to the
    schedule.  ``direction`` selects the descent direction of the energy
    solver: ``"newton"`` (finite-difference Newton, safeguarded to descend)
    or ``"gradient"`` (negative residual).
    """

    max_outer: int = 200
    max_inner: int = 50
    residual_tol: float = 1e-10
    step_tol: float = 1e-10
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 60
    epsilon_schedule: tuple = field(default_factory=default_epsilon_schedule)
    limit_stage: bool = True
    initial_guess: object = "zero"
    direction: str = "newton"
    newton_rejections: int = 3
    stagnation_window: int = 10

    def __post_init__(self):
        if self.residual_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.armijo_c < 1 or not 0 < self.backtrack_factor < 1:
            raise ValueError("armijo_c and backtrack_factor must lie in (0, 1)")
        eps = np.asarray(self.epsilon_schedule, dtype=float)
        if eps.size and (np.any(eps <= 0) or np.any(np.diff(eps) >= 0)):
            raise ValueError("epsilon_schedule must be positive and strictly decreasing")
        if self.direction not in ("newton", "gradient"):
            raise ValueError("direction must be 'newton' or 'gradient'")


@dataclass
class SolveResult:
    solution: Field
    residual_history: list
    energy_history: list = field(default_factory=list)
    outer_trace: list = field(default_factory=list)
    bound_check: dict | None = None
    converged: bool = False
    final_residual: float = float("nan")
    iterations: int = 0
    message: str = ""
    initial_guess: str = "zero"
    warnings: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {
            "converged": self.converged,
            "final_residual": self.final_residual,
            "iterations": self.iterations,
            "message": self.message,
            "initial_guess": self.initial_guess,
            "residual_history": list(self.residual_history),
        }
        if self.energy_history:
            out["energy_history"] = list(self.energy_history)
        if self.bound_check is not None:
            out["bound_check"] = self.bound_check
        if self.warnings:
            out["warnings"] = list(self.warnings)
        return out


# ---------------------------------------------------------------------------
# linear algebra helpers


def fd_jacobian(res_fn, u: np.ndarray, r0: np.ndarray, mesh: Mesh) -> sp.csr_matrix:
    """Forward-difference Jacobian of the interior residual.

    Columns that never meet in a row share one residual evaluation (graph
    coloring of the element adjacency), so the cost is a handful of residual
    calls regardless of the mesh size.
    """
    pat = mesh.interior_pattern.tocoo()
    rows, cols = pat.row, pat.col
    colors = mesh.interior_coloring
    inner = mesh.interior
    x = u[inner]
    h = np.sqrt(np.finfo(float).eps) * np.maximum(np.abs(x), 1.0)
    data = np.zeros(rows.size)
    col_color = colors[cols]
    for c in range(int(colors.max()) + 1 if colors.size else 0):
        sel = np.flatnonzero(colors == c)
        up = u.copy()
        up[inner[sel]] += h[sel]
        # use the representable increment
        hs = np.zeros_like(h)
        hs[sel] = up[inner[sel]] - u[inner[sel]]
        dr = res_fn(up) - r0
        k = np.flatnonzero(col_color == c)
        data[k] = dr[rows[k]] / hs[cols[k]]
    return sp.csr_matrix((data, (rows, cols)), shape=(inner.size, inner.size))


def _solve(A, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            x = spla.spsolve(A.tocsc(), b)
        except (RuntimeError, ValueError):
            return None
    x = np.atleast_1d(x)
    return x if np.all(np.isfinite(x)) else None


def _interior_laplacian(mesh: Mesh) -> sp.csr_matrix:
    return mesh.stiffness()[mesh.interior][:, mesh.interior].tocsr()


def _newton_direction(J, r, K, need_descent: bool):
    """Newton direction, regularized by multiples of the Laplacian if needed.

    A candidate is rejected when it is not finite, not a descent direction
    (energy mode) or more than 100 times longer than the Laplacian step
    ``-K^{-1} r``, which happens when the Jacobian is degenerate (p > 2 at a
    flat iterate).
    """
    dK = _solve(K, -r)
    cap = 100.0 * float(np.max(np.abs(dK))) if dK is not None else np.inf
    jmax = abs(J).max() if J.nnz else 0.0
    scale = max(jmax / abs(K).max(), 1.0)
    for delta in (0.0, 1e-6, 1e-3, 1.0):
        A = J if delta == 0.0 else J + (delta * scale) * K
        d = _solve(A, -r)
        if d is None or float(np.max(np.abs(d))) > cap:
            continue
        if need_descent and not float(r @ d) < 0.0:
            continue
        return d, ("newton" if delta == 0.0 else f"newton+{delta:g}K")
    if dK is not None and float(r @ dK) < 0.0:
        return dK, "laplacian-preconditioned"
    return -r, "residual"


def _picard_direction(u, spec, frozen_at, r):
    mesh = spec.mesh
    coef = element_coefficients(u, spec, frozen_at) / mesh.element_measures
    floor = 1e-12 * coef.max() if coef.max() > 0 else 1.0
    Ka = mesh.stiffness(np.maximum(coef, floor))[mesh.interior][:, mesh.interior]
    return _solve(Ka, -r)


# ---------------------------------------------------------------------------
# nonlinear iteration


@dataclass
class _Iteration:
    u: np.ndarray
    residual_history: list
    energy_history: list
    converged: bool
    iterations: int
    message: str
    final_residual: float


def _iterate(spec: ProblemSpec, u0: np.ndarray, cfg: SolveConfig, frozen_at=None, use_energy=False) -> _Iteration:
    mesh = spec.mesh
    inner = mesh.interior
    K = _interior_laplacian(mesh)
    u = mesh.dirichlet(u0)

    def res_fn(z):
        return assemble_residual(z, spec, frozen_at)

    def merit_E(z):
        return energy(z, spec, frozen_at)

    r = res_fn(u)
    E = merit_E(u) if use_energy else None
    rh, eh = [], []
    best, best_at = np.inf, 0
    message = "iteration limit reached"
    converged = False
    it = 0
    for it in range(cfg.max_outer + 1):
        rn = float(np.max(np.abs(r))) if r.size else 0.0
        rh.append(rn)
        if use_energy:
            eh.append(E)
        if rn <= cfg.residual_tol:
            converged, message = True, "residual tolerance reached"
            break
        if it == cfg.max_outer:
            break
        # progress is measured by the merit being decreased: descent methods
        # lower the energy while the residual may oscillate
        merit = E if use_energy else rn
        if not np.isfinite(best) or merit < best - 1e-14 * max(abs(best), 1.0):
            best, best_at = merit, it
        elif it - best_at >= cfg.stagnation_window:
            message = f"stagnation: no {'energy' if use_energy else 'residual'} decrease over the window"
            break

        if use_energy:
            if cfg.direction == "gradient":
                d, kind = -r, "residual"
            else:
                J = fd_jacobian(res_fn, u, r, mesh)
                d, kind = _newton_direction(J, r, K, need_descent=True)
            slope = float(r @ d)
            alpha, accepted = 1.0, False
            for _ in range(cfg.max_backtracks + 1):
                trial = u.copy()
                trial[inner] += alpha * d
                Et = merit_E(trial)
                if Et <= E + cfg.armijo_c * alpha * slope:
                    accepted = True
                    break
                # below the resolution of the energy: fall back to residual decrease
                if abs(alpha * slope) <= 1e-13 * (1.0 + abs(E)):
                    rt = res_fn(trial)
                    if np.max(np.abs(rt)) < rn:
                        accepted = True
                        break
                alpha *= cfg.backtrack_factor
            if not accepted:
                message = f"line search failed after {cfg.max_backtracks} backtracks"
                break
            u, E = trial, Et
            r = res_fn(u)
        else:
            J = fd_jacobian(res_fn, u, r, mesh)
            d, kind = _newton_direction(J, r, K, need_descent=False)
            n0 = float(np.linalg.norm(r))
            accepted = False
            for phase in ("newton", "picard"):
                if phase == "picard":
                    d = _picard_direction(u, spec, frozen_at, r)
                    if d is None:
                        break
                limit = cfg.newton_rejections if phase == "newton" else cfg.max_backtracks
                alpha = 1.0
                for _ in range(limit + 1):
                    trial = u.copy()
                    trial[inner] += alpha * d
                    rt = res_fn(trial)
                    if np.linalg.norm(rt) <= (1.0 - cfg.armijo_c * alpha) * n0:
                        accepted = True
                        break
                    alpha *= cfg.backtrack_factor
                if accepted:
                    break
            if not accepted:
                message = "line search failed for Newton and Picard directions"
                break
            u, r = trial, rt
        if alpha * float(np.max(np.abs(d))) <= cfg.step_tol:
            rn = float(np.max(np.abs(r)))
            rh.append(rn)
            if use_energy:
                eh.append(E)
            converged = rn <= cfg.residual_tol
            message = "residual tolerance reached" if converged else "step below step_tol"
            it += 1
            break
    return _Iteration(u, rh, eh, converged, it, message, rh[-1])


# ---------------------------------------------------------------------------
# helpers shared by the pipelines


def _initial(spec: ProblemSpec, guess) -> tuple:
    mesh = spec.mesh
    if guess is None or (isinstance(guess, str) and guess == "zero"):
        return np.zeros(mesh.n_nodes), "zero"
    if isinstance(guess, Field):
        return mesh.dirichlet(guess.coefficients), "field"
    if isinstance(guess, str):
        return mesh.dirichlet(interpolate(guess, mesh).coefficients), f"interpolant({guess})"
    arr = np.asarray(guess, dtype=float)
    if arr.shape == (mesh.n_nodes,):
        return mesh.dirichlet(arr), "field"
    raise ValueError("initial_guess must be 'zero', an expression, a Field or a coefficient vector")


def _bound_check(u: np.ndarray, lo: float, hi: float) -> dict:
    umin, umax = float(u.min()), float(u.max())
    return {
        "min": umin,
        "max": umax,
        "lower": lo,
        "upper": hi,
        "violated": bool(umin < lo - BOUND_TOL or umax > hi + BOUND_TOL),
    }


def sign_condition(spec: ProblemSpec, eta_plus: float, eta_minus: float, n: int = 512, seed: int = 0) -> Report:
    """Sampled ``f(x, eta+) < 0 < f(x, eta-)``."""
    if spec.f is None:
        raise ValueError("sign condition needs a source f")
    rng = np.random.default_rng(seed)
    pts = spec.model.sample_points(n, rng)
    fp = spec.f.expr.vec(t=np.full(len(pts), float(eta_plus)), **spec.model.coords(pts))
    fm = spec.f.expr.vec(t=np.full(len(pts), float(eta_minus)), **spec.model.coords(pts))
    return Report.from_margins(
        "sign-condition", np.minimum(-fp, fm), 0.0, {"x": pts}, strict=True,
        details={"eta_plus": eta_plus, "eta_minus": eta_minus},
    )


def _truncated(spec: ProblemSpec, sign) -> ProblemSpec:
    if spec.f is None:
        raise ValueError("truncation needs a source f")
    return spec.replace(f=truncate_source(spec.f, spec.eta_plus, spec.eta_minus, sign, spec.mesh.dim))


def _interval(spec: ProblemSpec, sign):
    if sign is None:
        return None
    return (0.0, float(spec.eta_plus)) if Sign(sign) is Sign.PLUS else (float(spec.eta_minus), 0.0)


# ---------------------------------------------------------------------------
# pipelines


def solve_variational(spec: ProblemSpec, sign=None, config: SolveConfig | None = None) -> SolveResult:
    """Minimize the (truncated) energy by a line-searched descent method.

    With ``sign`` set to Plus or Minus the source is truncated at the levels
    ``spec.eta_plus`` / ``spec.eta_minus``; ``sign=None`` solves the
    untruncated problem.
    """
    cfg = config or SolveConfig()
    if spec.coupling is Coupling.SOLUTION:
        raise ValueError("the energy method needs gradient-coupled (or uncoupled) exponents")
    notes = []
    work = spec
    if sign is not None:
        sign = Sign(sign)
        try:
            rep = sign_condition(spec, spec.eta_plus, spec.eta_minus)
            if not rep.passed:
                notes.append("sign condition f(x,eta+) < 0 < f(x,eta-) fails at sampled points")
        except (TypeError, ValueError):
            pass
        work = _truncated(spec, sign)
    u0, label = _initial(spec, cfg.initial_guess)
    it = _iterate(work, u0, cfg, use_energy=True)
    interval = _interval(spec, sign)
    bc = _bound_check(it.u, *interval) if interval else None
    return SolveResult(
        Field(it.u, spec.mesh), it.residual_history, it.energy_history, [], bc,
        it.converged, it.final_residual, it.iterations, it.message, label, notes,
    )


def solve_pseudomonotone(spec: ProblemSpec, config: SolveConfig | None = None) -> SolveResult:
    """Damped Newton for ``A(u) = |u|^(r-2) u + f0`` with Picard fallback."""
    cfg = config or SolveConfig()
    if spec.r is None or spec.f0 is None:
        raise ValueError("the power-source problem needs r and f0")
    notes = []
    mesh = spec.mesh
    env = {"x": mesh.quad_points[..., 0]}
    if mesh.dim > 1:
        env["y"] = mesh.quad_points[..., 1]
    rmax = float(np.max(spec.r.vec(t=np.zeros(mesh.quad_weights.shape), **env)))
    if rmax > spec.model.bounds.p_minus + 1e-12:
        notes.append(f"sampled r exceeds p- ({rmax} > {spec.model.bounds.p_minus})")
    if not np.any(spec.f0.vec(**env)):
        notes.append("f0 vanishes at every quadrature point")
    u0, label = _initial(spec, cfg.initial_guess)
    it = _iterate(spec, u0, cfg)
    return SolveResult(
        Field(it.u, mesh), it.residual_history, [], [], None,
        it.converged, it.final_residual, it.iterations, it.message, label, notes,
    )


def _modulars(spec: ProblemSpec, u: np.ndarray, eps: float) -> dict:
    """Diagnostics recorded per epsilon level."""
    mesh, model = spec.mesh, spec.model
    g = np.broadcast_to(mesh.grad_norm(u)[:, None], mesh.quad_weights.shape)
    tb = _t_binding(spec, u)
    pts = mesh.quad_points
    env = {"x": pts[..., 0]}
    if mesh.dim > 1:
        env["y"] = pts[..., 1]
    p = model.p.vec(t=tb, **env)
    q = model.q.vec(t=tb, **env)
    mu = model.mu.vec(**env)
    w = mesh.quad_weights
    main = float(np.sum((np.power(g, p) + mu * np.power(g, q)) * w))
    b = model.bounds
    plus = float(np.sum((np.power(g, b.p_plus) + mu * np.power(g, b.q_plus)) * w))
    uq = mesh.at_quad(u)
    fu = float(np.sum(spec.f(pts, uq) * uq * w)) if spec.f is not None else 0.0
    return {"modular": main, "eps_modular": eps * plus, "bound_total": main + eps * plus, "source_pairing": fu}


def _grad_norm_frozen(spec: ProblemSpec, diff: np.ndarray, at: np.ndarray) -> float:
    """Gradient Luxemburg norm with the direct-form N-function frozen at ``at``."""
    mesh = spec.mesh
    return luxemburg_norm(mesh.grad_norm(diff), spec.model, Mode.DIRECT, mesh,
                          frozen_t=_t_binding(spec, at)).value


def solve_solution_coupled(spec: ProblemSpec, config: SolveConfig | None = None, sign=None) -> SolveResult:
    """Epsilon-perturbation scheme with frozen exponents.

    For each epsilon the exponents are frozen at the current iterate ``w``,
    the frozen perturbed problem is solved by damped Newton (warm start from
    ``w``), and ``w`` is replaced by the solution until the gradient norm of
    the change drops below ``step_tol`` or the frozen exponents stop
    changing.  With ``sign`` set the source is truncated as in
    :func:`solve_variational` and the bound check is recorded.
    """
    cfg = config or SolveConfig()
    if sign is not None:
        sign = Sign(sign)
        res = solve_solution_coupled(_truncated(spec, sign), cfg)
        res.bound_check = _bound_check(res.solution.coefficients, *_interval(spec, sign))
        return res
    mesh = spec.mesh
    notes = []
    u, label = _initial(spec, cfg.initial_guess)
    levels = [float(e) for e in cfg.epsilon_schedule]
    if cfg.limit_stage:
        levels.append(0.0)
    trace, rh = [], []
    level_solutions = []
    any_ok = False
    last_ok = False
    total_its = 0
    for eps in levels:
        work = spec.replace(epsilon=eps)
        w = u
        steps, inner_res = [], []
        ok = False
        p_w = _t_binding(work, w)
        for k in range(cfg.max_inner):
            it = _iterate(work, w, cfg, frozen_at=w)
            total_its += it.iterations
            rh.extend(it.residual_history)
            new = it.u
            step = _grad_norm_frozen(work, new - w, new)
            steps.append(step)
            inner_res.append(it.final_residual)
            p_new = _t_binding(work, new)
            exps = spec.model
            env = {"x": mesh.quad_points[..., 0]}
            if mesh.dim > 1:
                env["y"] = mesh.quad_points[..., 1]
            same = bool(
                np.array_equal(exps.p.vec(t=p_new, **env), exps.p.vec(t=p_w, **env))
                and np.array_equal(exps.q.vec(t=p_new, **env), exps.q.vec(t=p_w, **env))
            )
            w, p_w = new, p_new
            if not it.converged:
                continue
            if same or step <= cfg.step_tol:
                ok = True
                break
        # residual of the coupled problem at this level (exponents bound to w itself)
        coupled_res = float(np.max(np.abs(assemble_residual(w, work)))) if mesh.interior.size else 0.0
        rec = {"epsilon": eps, "inner_iterations": len(steps), "inner_converged": ok,
               "step_norms": steps, "inner_residuals": inner_res, "coupled_residual": coupled_res}
        rec.update(_modulars(work, w, eps))
        trace.append(rec)
        if not ok:
            notes.append(f"inner fixed point not converged at epsilon={eps:g}")
        any_ok = any_ok or ok
        last_ok = ok
        level_solutions.append(w)
        u = w
    final_res = float(np.max(np.abs(assemble_residual(u, spec.replace(epsilon=levels[-1]))))) if levels else np.nan
    converged = bool(last_ok and final_res <= cfg.residual_tol)
    if len(level_solutions) >= 2:
        gap = _grad_norm_frozen(spec, level_solutions[-1] - level_solutions[-2], level_solutions[-1])
    else:
        gap = float("nan")
    msg = "converged" if converged else ("all levels failed" if not any_ok else "final level not converged")
    res = SolveResult(Field(u, mesh), rh, [], trace, None, converged, final_res, total_its, msg, label, notes)
    res.last_levels_gap = gap
    return res


def solve_multiplicity(spec: ProblemSpec, config: SolveConfig | None = None):
    """Plus- and Minus-truncated runs of the epsilon scheme.

    Returns ``(plus_result, minus_result, sign_report)``.
    """
    if spec.eta_plus is None or spec.eta_minus is None or not spec.eta_minus < 0 < spec.eta_plus:
        raise ValueError("need eta_minus < 0 < eta_plus")
    rep = sign_condition(spec, spec.eta_plus, spec.eta_minus)
    out = []
    for sign in (Sign.PLUS, Sign.MINUS):
        res = solve_solution_coupled(spec, config, sign)
        if not rep.passed:
            res.warnings.append("sign condition f(x,eta+) < 0 < f(x,eta-) fails at sampled points")
        out.append(res)
    return out[0], out[1], rep
