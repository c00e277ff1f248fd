"""Randomized harness for the pointwise, modular, operator and solver checks.

Every check is a margin function over a batch of sampled inputs; a Report
keeps the worst sample, so ``reevaluate`` can recompute its margin alone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, build_interval_mesh
from .modular import luxemburg_norm, modular
from .nfunction import Bounds, Coupling, ExponentModel, Mode, conjugate, eval_H, eval_h
from .operator import (
    ProblemSpec,
    coercivity_check,
    derivative_check,
    monotonicity_check,
    residual_full,
)
from .report import Report, write_reports

__all__ = [
    "Suite",
    "STOCK_MODELS",
    "stock_model",
    "run_suite",
    "run_all",
    "reevaluate",
    "write_reports",
]

T_MIN, T_MAX = 1e-6, 1e3


class Suite(enum.Enum):
    POINTWISE = "pointwise"
    MODULAR = "modular"
    OPERATOR = "operator"
    SOLVER_CONSISTENCY = "solver_consistency"


# name -> (p, q, mu, declared bounds)
STOCK_MODELS = {
    "constant": ("2", "3", "1", (2.0, 2.0, 3.0, 3.0)),
    "x-dependent": ("2 + x/2", "3 + x/2", "1 + x", (2.0, 2.5, 3.0, 3.5)),
    # exponents constant on [0, 1], increasing (C^1) towards +1/2 beyond
    "t-dependent": (
        "2 + max(0, t - 1)^2/(2*(1 + max(0, t - 1)^2))",
        "2.5 + max(0, t - 1)^2/(2*(1 + max(0, t - 1)^2))",
        "1 + x",
        (2.0, 2.5, 2.5, 3.0),
    ),
    "mu-zero-set": ("2.2", "3.1", "max(0, x - 0.5)", (2.2, 2.2, 3.1, 3.1)),
    "mu-zero": ("2 + x/2", "3", "0", (2.0, 2.5, 3.0, 3.0)),
}


def stock_model(name: str, coupling: Coupling = Coupling.GRADIENT) -> ExponentModel:
    p, q, mu, b = STOCK_MODELS[name]
    return ExponentModel(p, q, mu, coupling, dim=1, bounds=Bounds(*b, declared=True))


@dataclass(frozen=True)
class _Ctx:
    model: ExponentModel
    mode: Mode
    mesh: Mesh | None
    # norms and modulars already computed in this run, keyed by the samples
    memo: dict = field(default_factory=dict, compare=False)


def _rng(seed: int, suite: Suite, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), list(Suite).index(suite), stream])


def _log_uniform(rng, n, lo=T_MIN, hi=T_MAX):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), n))


# ---------------------------------------------------------------------------
# pointwise margins (vectorized over the first axis)


def _H(ctx, x, t):
    return eval_H(ctx.model, ctx.mode, x, t)


def _h(ctx, x, t):
    return eval_h(ctx.model, x, t, ctx.mode)


def _signed_h(ctx, x, t):
    return np.sign(t) * _h(ctx, x, np.abs(t))


def m_ratio(ctx, x, tau):
    b = ctx.model.bounds
    r = tau * _h(ctx, x, tau) / _H(ctx, x, tau)
    return np.minimum(r - b.p_minus, b.q_plus - r)


def m_young(ctx, x, tau, sigma):
    rhs = _H(ctx, x, tau) + conjugate(ctx.model, ctx.mode, x, sigma)
    return (rhs - tau * sigma) / (1.0 + np.abs(rhs))


def m_conjugate_identity(ctx, x, tau):
    hs = _h(ctx, x, tau)
    Hs = _H(ctx, x, tau)
    lhs = conjugate(ctx.model, ctx.mode, x, hs)
    return -np.abs(lhs - (hs * tau - Hs)) / (1.0 + Hs)


def m_conjugate_bound(ctx, x, tau):
    Hs = _H(ctx, x, tau)
    lhs = conjugate(ctx.model, ctx.mode, x, _h(ctx, x, tau))
    return ((ctx.model.bounds.q_plus - 1.0) * Hs - lhs) / (1.0 + Hs)


def m_simon(ctx, x, tau, sigma):
    lhs = (_signed_h(ctx, x, tau) - _signed_h(ctx, x, sigma)) * (tau - sigma)
    return lhs - 4.0 * _H(ctx, x, np.abs(tau - sigma) / 2.0)


def m_scaling(ctx, x, tau, lam):
    b = ctx.model.bounds
    Ht = _H(ctx, x, tau)
    Hl = _H(ctx, x, lam * tau)
    lo = np.minimum(lam ** b.p_minus, lam ** b.q_plus) * Ht
    hi = np.maximum(lam ** b.p_minus, lam ** b.q_plus) * Ht
    return np.minimum(Hl - lo, hi - Hl) / (1.0 + hi)


def m_h_monotone(ctx, x, tau, sigma):
    t1, t2 = np.minimum(tau, sigma), np.maximum(tau, sigma)
    h2 = _h(ctx, x, t2)
    return (h2 - _h(ctx, x, t1)) / (1.0 + h2)


# (margin function, tolerance, margin kind)
POINTWISE = {
    "ratio-bounds": (m_ratio, 1e-9, "absolute"),
    "young": (m_young, 1e-9, "relative"),
    "conjugate-identity": (m_conjugate_identity, 1e-8, "relative"),
    "conjugate-bound": (m_conjugate_bound, 1e-9, "relative"),
    "simon": (m_simon, 1e-9, "absolute"),
    "scaling": (m_scaling, 1e-9, "relative"),
    "h-monotone": (m_h_monotone, 1e-12, "relative"),
}


def _pointwise(ctx: _Ctx, seed: int, n: int) -> list:
    rng = _rng(seed, Suite.POINTWISE)
    model = ctx.model
    x = model.sample_points(n, rng)[: n]
    x = x[:, 0] if model.dim == 1 else x
    tau = _log_uniform(rng, n)
    sigma = _log_uniform(rng, n)
    lam = _log_uniform(rng, n, 1e-3, 1e3)
    sign_t = rng.choice([-1.0, 1.0], n)
    sign_s = rng.choice([-1.0, 1.0], n)
    inputs = {
        "ratio-bounds": {"x": x, "tau": tau},
        "young": {"x": x, "tau": tau, "sigma": sigma},
        "conjugate-identity": {"x": x, "tau": tau},
        "conjugate-bound": {"x": x, "tau": tau},
        "simon": {"x": x, "tau": sign_t * tau, "sigma": sign_s * sigma},
        "scaling": {"x": x, "tau": tau, "lam": lam},
        "h-monotone": {"x": x, "tau": tau, "sigma": sigma},
    }
    out = []
    for name, (fn, tol, kind) in POINTWISE.items():
        args = inputs[name]
        out.append(Report.from_margins(name, fn(ctx, **args), tol, args, kind))
    return out


# ---------------------------------------------------------------------------
# modular margins (one field per row)


def _field_samples(mesh: Mesh, coeffs: np.ndarray, scale: float) -> np.ndarray:
    return scale * mesh.at_quad(mesh.dirichlet(coeffs))


def _memo(ctx, kind, s, compute):
    key = (kind, s.tobytes())
    if key not in ctx.memo:
        ctx.memo[key] = compute()
    return ctx.memo[key]


def _norm(ctx, s, dual=False):
    return _memo(ctx, ("norm", dual), s,
                 lambda: luxemburg_norm(s, ctx.model, ctx.mode, ctx.mesh, 1e-10, dual=dual).value)


def _rho(ctx, s):
    return _memo(ctx, "rho", s, lambda: modular(s, ctx.model, ctx.mode, ctx.mesh).value)


def m_unit_ball(ctx, coeffs, scale):
    out = []
    for c, a in zip(np.atleast_2d(coeffs), np.atleast_1d(scale)):
        s = _field_samples(ctx.mesh, c, a)
        out.append(-abs(_rho(ctx, s / _norm(ctx, s)) - 1.0))
    return np.array(out)


def m_sandwich(ctx, coeffs, scale):
    b = ctx.model.bounds
    out = []
    for c, a in zip(np.atleast_2d(coeffs), np.atleast_1d(scale)):
        s = _field_samples(ctx.mesh, c, a)
        n, r = _norm(ctx, s), _rho(ctx, s)
        lo, hi = sorted((n ** b.p_minus, n ** b.q_plus))
        out.append(min(r - lo, hi - r) / (1.0 + hi))
    return np.array(out)


def m_holder(ctx, coeffs, coeffs_v, scale):
    out = []
    for c, cv, a in zip(np.atleast_2d(coeffs), np.atleast_2d(coeffs_v), np.atleast_1d(scale)):
        u = _field_samples(ctx.mesh, c, a)
        v = _field_samples(ctx.mesh, cv, 1.0)
        lhs = abs(float(np.sum(u * v * ctx.mesh.quad_weights)))
        rhs = 2.0 * _norm(ctx, u) * _norm(ctx, v, dual=True)
        out.append((rhs - lhs) / (1.0 + rhs))
    return np.array(out)


def m_homogeneity(ctx, coeffs, scale):
    out = []
    for c, a in zip(np.atleast_2d(coeffs), np.atleast_1d(scale)):
        s = _field_samples(ctx.mesh, c, 1.0)
        n1, na = _norm(ctx, s), _norm(ctx, a * s)
        out.append(-abs(na - abs(a) * n1) / (abs(a) * n1))
    return np.array(out)


def m_decay(ctx, coeffs, scale):
    """Positive iff modular and norm of u/2^k decrease strictly for k <= 20."""
    out = []
    for c, a in zip(np.atleast_2d(coeffs), np.atleast_1d(scale)):
        s = _field_samples(ctx.mesh, c, a)
        rho = np.array([_rho(ctx, s / 2.0 ** k) for k in range(21)])
        nrm = np.array([_norm(ctx, s / 2.0 ** k) for k in range(21)])
        gaps = np.concatenate([-np.diff(rho) / rho[:-1], -np.diff(nrm) / nrm[:-1]])
        out.append(float(gaps.min()))
    return np.array(out)


MODULAR = {
    "unit-ball": (m_unit_ball, 1e-7, "absolute"),
    "modular-norm-sandwich": (m_sandwich, 1e-7, "relative"),
    "holder": (m_holder, 1e-9, "relative"),
    "norm-homogeneity": (m_homogeneity, 2e-10, "relative"),
    "modular-decay": (m_decay, 0.0, "relative"),
}


def _random_coeffs(rng, mesh: Mesh, n: int) -> np.ndarray:
    c = rng.uniform(-1.0, 1.0, (n, mesh.n_nodes))
    c[:, mesh.boundary_nodes] = 0.0
    return c


def _modular_suite(ctx: _Ctx, seed: int, n: int) -> list:
    rng = _rng(seed, Suite.MODULAR)
    c = _random_coeffs(rng, ctx.mesh, n)
    cv = _random_coeffs(rng, ctx.mesh, n)
    # scales straddle the unit sphere
    scale = np.exp2(rng.uniform(-2.0, 2.0, n))
    signed = scale * rng.choice([-1.0, 1.0], n)
    inputs = {
        "unit-ball": {"coeffs": c, "scale": scale},
        "modular-norm-sandwich": {"coeffs": c, "scale": scale},
        "holder": {"coeffs": c, "coeffs_v": cv, "scale": scale},
        "norm-homogeneity": {"coeffs": c, "scale": signed},
        "modular-decay": {"coeffs": c[: min(n, 10)], "scale": scale[: min(n, 10)]},
    }
    out = []
    for name, (fn, tol, kind) in MODULAR.items():
        args = inputs[name]
        out.append(Report.from_margins(name, fn(ctx, **args), tol, args, kind))
    return out


# ---------------------------------------------------------------------------
# operator margins


def _spec(ctx) -> ProblemSpec:
    return ProblemSpec(ctx.model, ctx.mesh, ctx.mode)


def _linear(model: ExponentModel) -> bool:
    return (model.p.is_constant and model.q.is_constant
            and model.p() == 2.0 and model.q() == 2.0)


def _frozen(ctx, u):
    return u if ctx.model.coupling is Coupling.SOLUTION else None


def m_derivative(ctx, u, v):
    spec = _spec(ctx)
    # a quadratic energy has an exact central difference at any step, so the
    # largest step minimizes roundoff
    step, tol = (1e-3, 1e-10) if _linear(ctx.model) else (1e-5, 1e-5)
    out = []
    for a, b in zip(np.atleast_2d(u), np.atleast_2d(v)):
        rep = derivative_check(a, b, spec, step, tol, frozen_at=_frozen(ctx, a))
        out.append(rep.worst_margin)
    return np.array(out)


def m_monotonicity(ctx, u, v):
    spec = _spec(ctx)
    return np.array([monotonicity_check(a, b, spec).worst_margin
                     for a, b in zip(np.atleast_2d(u), np.atleast_2d(v))])


def m_coercivity(ctx, u):
    spec = _spec(ctx)
    return np.array([coercivity_check(a, spec).worst_margin for a in np.atleast_2d(u)])


def _coercive_ratio(spec, u):
    mesh = spec.mesh
    pair = float(residual_full(u, spec)[mesh.interior] @ u[mesh.interior])
    return pair / luxemburg_norm(mesh.grad_norm(u), spec.model, spec.mode, mesh).value


def m_coercivity_ray(ctx, u):
    """ratio(c u) against c^(p- - 1) ratio(u) / 2 for c in {2, 4, 8}."""
    spec = _spec(ctx)
    pm = ctx.model.bounds.p_minus
    out = []
    for a in np.atleast_2d(u):
        base = _coercive_ratio(spec, a)
        worst = np.inf
        for c in (2.0, 4.0, 8.0):
            bound = c ** (pm - 1.0) * base / 2.0
            worst = min(worst, (_coercive_ratio(spec, c * a) - bound) / (1.0 + bound))
        out.append(worst)
    return np.array(out)


OPERATOR = {
    "derivative": (m_derivative, 1e-5, "relative"),
    "monotonicity": (m_monotonicity, 1e-10, "relative"),
    "coercivity": (m_coercivity, 1e-10, "relative"),
    "coercivity-ray": (m_coercivity_ray, 0.0, "relative"),
}


def _operator_suite(ctx: _Ctx, seed: int, n: int) -> list:
    rng = _rng(seed, Suite.OPERATOR)
    u = _random_coeffs(rng, ctx.mesh, n)
    v = _random_coeffs(rng, ctx.mesh, n)
    nd = min(n, 20)
    inputs = {
        "derivative": {"u": u[:nd], "v": v[:nd]},
        "monotonicity": {"u": u, "v": v},
        "coercivity": {"u": u[:nd]},
        "coercivity-ray": {"u": u[:nd]},
    }
    out = []
    for name, (fn, tol, kind) in OPERATOR.items():
        args = inputs[name]
        if name == "derivative" and _linear(ctx.model):
            tol = 1e-10
        details = {}
        if name == "monotonicity":
            details["asserted"] = "nonnegative" if ctx.model.t_dependent else "4H"
        out.append(Report.from_margins(name, fn(ctx, **args), tol, args, kind, details))
    return out


# ---------------------------------------------------------------------------
# solver consistency


def _solver_suite(ctx: _Ctx, seed: int, n: int) -> list:
    from .solvers import SolveConfig, solve_pseudomonotone, solve_solution_coupled, solve_variational

    if ctx.model.t_dependent:
        return [Report.from_margins("pipeline-agreement", [], 1e-8,
                                    details={"skipped": "exponents depend on t"})]
    m = ctx.model

    def with_coupling(c):
        return ExponentModel(m.p, m.q, m.mu, c, m.dim, m.bounds, m.domain, m.sampler)

    # one problem, -div a(|grad u|) grad u = u + 1, written three ways
    base = ProblemSpec(with_coupling(Coupling.GRADIENT), ctx.mesh, ctx.mode)
    cfg = SolveConfig()
    results = {
        "variational": solve_variational(base.replace(f="t + 1"), None, cfg),
        "pseudomonotone": solve_pseudomonotone(base.replace(r="2", f0="1"), cfg),
        "solution-coupled": solve_solution_coupled(
            base.replace(model=with_coupling(Coupling.SOLUTION), f="t + 1"), cfg),
    }
    names = list(results)
    margins, pairs = [], []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a = results[names[i]].solution.coefficients
            b = results[names[j]].solution.coefficients
            margins.append(-float(np.max(np.abs(a - b))))
            pairs.append(f"{names[i]}/{names[j]}")
    conv = [0.0 if r.converged else -1.0 for r in results.values()]
    return [
        Report.from_margins("pipeline-agreement", margins, 1e-8, {"pair": pairs}),
        Report.from_margins("pipeline-converged", conv, 0.0, {"pipeline": names},
                            details={k: r.final_residual for k, r in results.items()}),
    ]


# ---------------------------------------------------------------------------


_DEFAULT_N = {
    Suite.POINTWISE: 10_000,
    Suite.MODULAR: 100,
    Suite.OPERATOR: 100,
    Suite.SOLVER_CONSISTENCY: 1,
}


def run_suite(model: ExponentModel, mode: Mode, mesh: Mesh | None, suite, seed: int = 0,
              n_samples: int | None = None) -> list:
    """Run one suite and return its Reports (deterministic for a fixed seed).

    ``n_samples`` is the number of (x, t) samples for the pointwise suite,
    of random fields for the modular and operator suites, and is ignored by
    the solver-consistency suite.  The pointwise suite does not use the mesh.
    """
    suite = Suite(suite)
    mode = Mode(mode)
    n = _DEFAULT_N[suite] if n_samples is None else int(n_samples)
    if n < 1:
        raise ValueError("n_samples must be >= 1")
    if suite is not Suite.POINTWISE:
        if mesh is None:
            mesh = build_interval_mesh(0.0, 1.0, 64)
        if mesh.dim != model.dim:
            raise ValueError("model and mesh dimensions differ")
    ctx = _Ctx(model, mode, mesh)
    runner = {
        Suite.POINTWISE: _pointwise,
        Suite.MODULAR: _modular_suite,
        Suite.OPERATOR: _operator_suite,
        Suite.SOLVER_CONSISTENCY: _solver_suite,
    }[suite]
    reports = runner(ctx, seed, n)
    for r in reports:
        r.details = {"suite": suite.value, **r.details}
    return reports


def run_all(model, mode, mesh, suites=tuple(Suite), seed: int = 0, n_samples: int | None = None) -> list:
    out = []
    for s in suites:
        out.extend(run_suite(model, mode, mesh, s, seed, n_samples))
    return out


_REGISTRY = {**POINTWISE, **MODULAR, **OPERATOR}


def reevaluate(report, model: ExponentModel, mode: Mode, mesh: Mesh | None = None) -> float:
    """Recompute the margin of a Report's worst sample on its own."""
    d = report.as_dict() if isinstance(report, Report) else report
    name = d["check"]
    if name not in _REGISTRY:
        raise ValueError(f"no margin function for check {name!r}")
    fn = _REGISTRY[name][0]
    if name not in POINTWISE and mesh is None:
        mesh = build_interval_mesh(0.0, 1.0, 64)
    args = {k: np.asarray(v, dtype=float)[None, ...] for k, v in d["worst_sample"].items()}
    return float(fn(_Ctx(model, Mode(mode), mesh), **args)[0])
