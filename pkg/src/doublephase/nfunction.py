"""Generalized N-functions of double phase type.

The density is ``h(x, t) = t^(p(x,t)-1) + mu(x) t^(q(x,t)-1)``.  Two
N-functions are built from the exponent model:

* ``Mode.INTEGRAL``: ``H(x, t) = int_0^t h(x, s) ds``;
* ``Mode.DIRECT``:   ``H(x, t) = t^p + mu t^q``.

Points ``x`` are arrays whose last axis has length ``dim`` (a bare float is
accepted in 1D).  All evaluators broadcast ``x`` against ``t``.

``frozen_t`` pins the t-argument of the exponents: when given, exponents are
``p(x, frozen_t)`` instead of ``p(x, s)``.  This is how exponents frozen at a
previous iterate are represented.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .expr import Expr, parse
from .quadrature import QuadratureError, integrate_unit
from .report import Report

__all__ = [
    "Coupling",
    "Mode",
    "Bounds",
    "ExponentModel",
    "SamplerConfig",
    "NFunctionError",
    "eval_h",
    "eval_H",
    "conjugate",
    "ratio",
    "inverse_H",
    "sobolev_conjugate",
    "validate_hypotheses",
]

DEFAULT_QUAD_TOL = 1e-13
_OVERFLOW_GUARD = 1e150


class NFunctionError(ArithmeticError):
    pass


class Coupling(enum.Enum):
    GRADIENT = "gradient"
    SOLUTION = "solution"
    NONE = "none"


class Mode(enum.Enum):
    INTEGRAL = "integral"
    DIRECT = "direct"


@dataclass(frozen=True)
class Bounds:
    p_minus: float
    p_plus: float
    q_minus: float
    q_plus: float
    declared: bool = False


@dataclass(frozen=True)
class SamplerConfig:
    """Sample counts and t-range for hypothesis validation and bound estimation."""

    n_x: int = 64
    n_t: int = 257
    t_max: float = 1e3
    t_min: float = 1e-6
    n_pairs: int = 2000
    seed: int = 0


def _as_expr(e, variables) -> Expr:
    if isinstance(e, Expr):
        bad = e.variables - set(variables)
        if bad:
            raise ValueError(f"expression {e.source!r} uses {sorted(bad)}, allowed {variables}")
        return e
    return parse(str(e), variables)


class ExponentModel:
    """Exponents ``p(x,t)``, ``q(x,t)``, weight ``mu(x)`` and the coupling mode.

    Parameters
    ----------
    p, q, mu : str or Expr
        ``mu`` may only use the spatial variables.
    coupling : Coupling
        What ``t`` stands for when the model drives an operator.
    dim : int
        Spatial dimension (1 or 2 for the meshes in this package).
    bounds : Bounds, optional
        Declared ``p-, p+, q-, q+``.  Estimated by sampling when omitted.
    domain : sequence of (lo, hi), optional
        Bounding box used for sampling; the unit cube by default.
    """

    def __init__(
        self,
        p,
        q,
        mu="0",
        coupling: Coupling = Coupling.GRADIENT,
        dim: int = 1,
        bounds: Bounds | None = None,
        domain=None,
        sampler: SamplerConfig | None = None,
    ):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        space = ("x", "y")[: min(dim, 2)]
        self.dim = int(dim)
        self.p = _as_expr(p, space + ("t",))
        self.q = _as_expr(q, space + ("t",))
        self.mu = _as_expr(mu, space)
        self.coupling = Coupling(coupling)
        self.domain = tuple(tuple(map(float, d)) for d in (domain or [(0.0, 1.0)] * self.dim))
        if len(self.domain) != self.dim:
            raise ValueError("domain box must have one interval per dimension")
        self._declared = bounds
        self.sampler = sampler or SamplerConfig()
        self._static = {}

    def __repr__(self):
        return (
            f"ExponentModel(p={self.p.source!r}, q={self.q.source!r}, mu={self.mu.source!r}, "
            f"coupling={self.coupling.value}, dim={self.dim})"
        )

    @property
    def t_dependent(self) -> bool:
        return self.p.depends_on("t") or self.q.depends_on("t")

    # -- evaluation helpers ---------------------------------------------------
    def coords(self, x) -> dict:
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self.dim:
            raise ValueError(f"points must have last axis {self.dim}, got shape {x.shape}")
        env = {"x": x[..., 0]}
        if self.dim >= 2:
            env["y"] = x[..., 1]
        return env

    def exponents(self, x, t):
        env = self.coords(x)
        t = np.asarray(t, dtype=float)
        p = self.p.vec(t=t, **env)
        q = self.q.vec(t=t, **env)
        return p, q

    def weight(self, x):
        return self.mu.vec(**self.coords(x))

    # -- bounds ------------------------------------------------------------------
    def sample_points(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.array([d[0] for d in self.domain])
        hi = np.array([d[1] for d in self.domain])
        pts = lo + (hi - lo) * rng.random((n, self.dim))
        corners = np.array(np.meshgrid(*[[a, b] for a, b in self.domain], indexing="ij"))
        corners = corners.reshape(self.dim, -1).T
        return np.concatenate([corners, pts], axis=0)

    def t_grid(self, sampler: SamplerConfig | None = None) -> np.ndarray:
        s = sampler or self.sampler
        pos = np.geomspace(s.t_min, s.t_max, s.n_t)
        pos = np.union1d(pos, np.linspace(0.0, 2.0, 81))
        if self.coupling is Coupling.SOLUTION:
            return np.union1d(-pos, pos)
        return pos

    @cached_property
    def sampled_extremes(self):
        rng = np.random.default_rng(self.sampler.seed)
        pts = self.sample_points(self.sampler.n_x, rng)
        t = self.t_grid()
        p, q = self.exponents(pts[:, None, :], t[None, :])
        return float(p.min()), float(p.max()), float(q.min()), float(q.max())

    @cached_property
    def bounds(self) -> Bounds:
        if self._declared is not None:
            return self._declared
        pmin, pmax, qmin, qmax = self.sampled_extremes
        # widen each sampled range by 1% of its spread; constants stay exact
        dp = 0.01 * (pmax - pmin)
        dq = 0.01 * (qmax - qmin)
        return Bounds(pmin - dp, pmax + dp, qmin - dq, qmax + dq, declared=False)


# ---------------------------------------------------------------------------
# pointwise N-function evaluation


def _exponents_at(model: ExponentModel, env: dict, s, frozen_t):
    tt = s if frozen_t is None else frozen_t
    return model.p.vec(t=tt, **env), model.q.vec(t=tt, **env)


def _density(model, mode, env, mu, s, frozen_t):
    p, q = _exponents_at(model, env, s, frozen_t)
    return _density_pq(mode, p, q, mu, s)


def _density_pq(mode, p, q, mu, s):
    with np.errstate(divide="ignore", invalid="ignore"):
        if mode is Mode.DIRECT:
            return p * np.power(s, p - 1.0) + mu * q * np.power(s, q - 1.0)
        return np.power(s, p - 1.0) + mu * np.power(s, q - 1.0)


def _check_nonneg(t, name="t"):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError(f"{name} must be finite and nonnegative")
    return t


def eval_h(model: ExponentModel, x, t, mode: Mode = Mode.INTEGRAL, frozen_t=None) -> np.ndarray:
    """Density ``h(x, t)`` (derivative of ``H`` in t); zero at t = 0."""
    t = _check_nonneg(t)
    env = model.coords(x)
    mu = model.mu.vec(**env)
    shape = np.broadcast_shapes(np.shape(env["x"]), t.shape, np.shape(frozen_t) if frozen_t is not None else ())
    out = _density(model, Mode(mode), env, mu, t, frozen_t)
    out = np.where(t > 0, out, 0.0)
    return np.broadcast_to(out, shape).astype(float, copy=True) if out.shape != shape else out


_STATIC_CACHE_SIZE = 16


def _static_parts(model: ExponentModel, x, frozen_t):
    """``(p, q, mu)`` at points ``x`` when they do not vary with the integration variable.

    Operators and norms evaluate these at the same quadrature points many
    times, so a few recent point sets are cached on the model.
    """
    xa = np.asarray(x, dtype=float)
    fa = None if frozen_t is None else np.asarray(frozen_t, dtype=float)
    key = (xa.shape, xa.tobytes(), None if fa is None else (fa.shape, fa.tobytes()))
    hit = model._static.get(key)
    if hit is None:
        env = model.coords(xa)
        tt = 0.0 if fa is None else fa
        hit = (model.p.vec(t=tt, **env), model.q.vec(t=tt, **env), model.mu.vec(**env))
        if len(model._static) >= _STATIC_CACHE_SIZE:
            model._static.pop(next(iter(model._static)))
        model._static[key] = hit
    return hit


def _closed_form(model, mode, x, t, frozen_t):
    p, q, mu = _static_parts(model, x, frozen_t)
    if mode is Mode.DIRECT:
        return np.power(t, p) + mu * np.power(t, q)
    return np.power(t, p) / p + mu * np.power(t, q) / q


def eval_H(
    model: ExponentModel,
    mode: Mode,
    x,
    t,
    quad_tol: float = DEFAULT_QUAD_TOL,
    frozen_t=None,
) -> np.ndarray:
    """N-function value ``H(x, t)``.

    IntegralForm uses the closed form ``t^p/p + mu t^q/q`` when the exponents
    do not vary along the integration path (no t-dependence, or frozen), and
    adaptive Gauss–Legendre quadrature otherwise.
    """
    mode = Mode(mode)
    t = _check_nonneg(t)
    env = model.coords(x)
    parts = [np.shape(env["x"]), t.shape]
    if frozen_t is not None:
        frozen_t = np.asarray(frozen_t, dtype=float)
        parts.append(frozen_t.shape)
    shape = np.broadcast_shapes(*parts)
    if frozen_t is not None or not model.t_dependent:
        out = _closed_form(model, mode, x, t, frozen_t)
        return np.broadcast_to(out, shape).astype(float, copy=True)
    mu = model.mu.vec(**env)
    if mode is Mode.DIRECT:
        p, q = _exponents_at(model, env, t, None)
        out = np.power(t, p) + mu * np.power(t, q)
        return np.broadcast_to(out, shape).astype(float, copy=True)

    # split at s = 1, where the growth hypotheses switch behavior; exponent
    # kinks there then sit on a panel boundary
    tf = np.broadcast_to(t, shape).ravel()
    envf = {k: np.broadcast_to(v, shape).ravel() for k, v in env.items()}
    muf = np.broadcast_to(mu, shape).ravel()
    out = np.zeros(tf.size)
    live = np.flatnonzero(tf > 0)
    if live.size:
        out[live] = _integrate_h(model, mode, envf, muf, live, 0.0, np.minimum(tf[live], 1.0), quad_tol)
    far = np.flatnonzero(tf > 1.0)
    if far.size:
        out[far] += _integrate_h(model, mode, envf, muf, far, 1.0, tf[far], quad_tol)
    return out.reshape(shape)


def _integrate_h(model, mode, envf, muf, rows, lower, upper, quad_tol):
    """``int_lower^upper h(x, s) ds`` for the selected rows.

    From 0 the substitution ``s = upper * u^3`` smooths the power behavior
    ``s^(p-1)`` of h at the origin; from 1 the map is affine.
    """
    el = {k: v[rows] for k, v in envf.items()}
    ml = muf[rows]
    width = upper - lower

    def fun(idx, u):
        sub = {k: v[idx, None] for k, v in el.items()}
        w = width[idx, None]
        if lower == 0.0:
            s = w * u ** 3
            jac = 3.0 * w * u ** 2
        else:
            s = lower + w * u
            jac = w
        return _density(model, mode, sub, ml[idx, None], s, None) * jac

    return integrate_unit(fun, rows.size, tol=quad_tol)


_EPS = np.finfo(float).eps


def _bisect_increasing(fun, target, tol, guard=_OVERFLOW_GUARD, max_iter=400, dfun=None):
    """Solve ``fun(tau) = target`` for increasing ``fun`` with ``fun(0) = 0``.

    ``target`` is a positive 1-D array.  The bracket starts at [0, 1] and is
    grown or shrunk geometrically so that the relative tolerance on tau is
    meaningful for tiny and huge roots alike.  When the derivative ``dfun``
    is available, Newton steps that stay inside the bracket replace the
    midpoint; the bracket is still updated at every evaluation.
    """
    n = target.size
    hi = np.ones(n)
    lo = np.zeros(n)
    fh = fun(np.arange(n), hi)
    grow = fh < target
    while np.any(grow):
        ids = np.flatnonzero(grow)
        lo[ids] = hi[ids]
        hi[ids] *= 2.0
        if np.any(hi[ids] > guard):
            raise NFunctionError("bracket growth exceeded the overflow guard")
        fh_ids = fun(ids, hi[ids])
        grow[ids] = fh_ids < target[ids]
    shrink = (lo == 0.0) & (fun(np.arange(n), 0.5 * hi) >= target)
    while np.any(shrink):
        ids = np.flatnonzero(shrink)
        hi[ids] *= 0.5
        if np.any(hi[ids] < 1e-300):
            break
        shrink[ids] = fun(ids, 0.5 * hi[ids]) >= target[ids]
    lo = np.where(lo == 0.0, 0.5 * hi, lo)
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        active = np.flatnonzero(hi - lo > tol * hi)
        if active.size == 0:
            break
        xa = x[active]
        fa = fun(active, xa) - target[active]
        up = fa >= 0
        hi[active] = np.where(up, xa, hi[active])
        lo[active] = np.where(up, lo[active], xa)
        mid = 0.5 * (lo[active] + hi[active])
        if dfun is None:
            x[active] = mid
            continue
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            xn = xa - fa / dfun(active, xa)
        inside = np.isfinite(xn) & (xn > lo[active]) & (xn < hi[active])
        xn = np.where(inside, xn, mid)
        x[active] = xn
        # converged: residual or Newton step at roundoff level
        flat = np.abs(fa) <= 8.0 * _EPS * target[active]
        sel = flat | (inside & (np.abs(xn - xa) <= max(tol, 8.0 * _EPS) * xn))
        done = active[sel]
        lo[done] = hi[done] = x[done] = np.where(flat, xa, xn)[sel]
    return np.where(lo == hi, lo, 0.5 * (lo + hi))


def _flat(model, x, arr, frozen_t=None):
    env = model.coords(x)
    parts = [np.shape(env["x"]), np.shape(arr)]
    if frozen_t is not None:
        parts.append(np.shape(frozen_t))
    shape = np.broadcast_shapes(*parts)
    pts = np.asarray(x, dtype=float)
    if model.dim == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., None]
    pts = np.broadcast_to(pts, shape + (model.dim,)).reshape(-1, model.dim)
    vals = np.broadcast_to(arr, shape).ravel()
    ft = None if frozen_t is None else np.broadcast_to(frozen_t, shape).ravel()
    return shape, pts, vals, ft


def conjugate(
    model: ExponentModel,
    mode: Mode,
    x,
    s,
    tol: float = 1e-15,
    quad_tol: float = DEFAULT_QUAD_TOL,
    frozen_t=None,
) -> np.ndarray:
    """Complementary function ``sup_tau (s tau - H(x, tau))``.

    Solves ``h(x, tau*) = s`` by bisection and returns ``s tau* - H(x, tau*)``.
    """
    mode = Mode(mode)
    s = _check_nonneg(s, "s")
    shape, pts, sv, ft = _flat(model, x, s, frozen_t)
    out = np.zeros(sv.size)
    live = np.flatnonzero(sv > 0)
    if live.size:
        P = pts[live]
        F = None if ft is None else ft[live]

        if F is not None or not model.t_dependent:
            # exponents do not move with tau: evaluate them once
            p, q, mu = (np.broadcast_to(e, (live.size,)) for e in _static_parts(model, P, F))

            def h_of(ids, tau):
                return np.where(tau > 0, _density_pq(mode, p[ids], q[ids], mu[ids], tau), 0.0)

            def dh_of(ids, tau):
                pi, qi = p[ids], q[ids]
                cp, cq = (pi, qi) if mode is Mode.DIRECT else (1.0, 1.0)
                with np.errstate(divide="ignore", invalid="ignore"):
                    return cp * (pi - 1.0) * np.power(tau, pi - 2.0) + mu[ids] * cq * (qi - 1.0) * np.power(
                        tau, qi - 2.0
                    )
        else:

            dh_of = None

            def h_of(ids, tau):
                return eval_h(model, P[ids], tau, mode)

        tau = _bisect_increasing(h_of, sv[live], tol, dfun=dh_of)
        out[live] = sv[live] * tau - eval_H(model, mode, P, tau, quad_tol, F)
    return np.maximum(out, 0.0).reshape(shape)


def ratio(model: ExponentModel, mode: Mode, x, t, quad_tol: float = DEFAULT_QUAD_TOL) -> np.ndarray:
    """``t h(x,t) / H(x,t)``; undefined at t = 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("ratio is undefined at t = 0")
    return t * eval_h(model, x, t, mode) / eval_H(model, mode, x, t, quad_tol)


def inverse_H(model: ExponentModel, mode: Mode, x, value, tol: float = 1e-15) -> np.ndarray:
    """``H^{-1}(x, value)`` by bisection."""
    value = _check_nonneg(value, "value")
    shape, pts, vv, _ = _flat(model, x, value)
    out = np.zeros(vv.size)
    live = np.flatnonzero(vv > 0)
    if live.size:
        P = pts[live]
        out[live] = _bisect_increasing(lambda ids, tau: eval_H(model, mode, P[ids], tau), vv[live], tol)
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# Sobolev conjugate


class _SobolevConjugate:
    """``H_*(x, t) = Hhat(x, N^{-1}(x, t))`` at one point ``x``."""

    def __init__(self, model: ExponentModel, mode: Mode, x, tol: float):
        if model.dim < 2:
            raise ValueError("the Sobolev conjugate needs dimension d >= 2")
        self.model, self.mode, self.tol = model, Mode(mode), tol
        self.x = np.asarray(x, dtype=float).reshape(1, model.dim)
        self.d = model.dim
        self.dprime = self.d / (self.d - 1.0)
        self.c = float(inverse_H(model, mode, self.x, np.array([1.0]))[0])

    def hhat(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        big = tau >= 1.0
        out = tau.copy()
        if np.any(big):
            tb = tau[big]
            H = eval_H(self.model, self.mode, np.broadcast_to(self.x, tb.shape + (self.d,)), self.c * tb)
            out[big] = 2.0 * np.maximum(H, 2.0 * tb - 1.0) - 1.0
        return out

    def _integral_beyond_one(self, t: np.ndarray) -> np.ndarray:
        # int_1^t (tau / Hhat(tau))^(1/(d-1)) dtau with tau = exp(L sigma), L = log t
        L = np.log(t)
        e = 1.0 / (self.d - 1.0)

        def fun(idx, sig):
            tau = np.exp(L[idx, None] * sig)
            return L[idx, None] * tau * np.power(tau / self.hhat(tau), e)

        return integrate_unit(fun, t.size, tol=self.tol)

    def N(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        inner = np.minimum(t, 1.0)
        big = t > 1.0
        if np.any(big):
            inner = inner.copy()
            inner[big] = 1.0 + self._integral_beyond_one(t[big])
        return np.power(inner, 1.0 / self.dprime)

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(_check_nonneg(t))
        out = np.zeros(t.shape)
        live = np.flatnonzero(t > 0)
        if live.size == 0:
            return out
        # N is bounded when p > d; beyond its supremum H_* is infinite
        cap = 1e12
        n_cap = float(self.N(np.array([cap]))[0])
        reach = t[live] < n_cap
        out[live[~reach]] = np.inf
        ids = live[reach]
        if ids.size:
            tt = t[ids]
            root = _bisect_increasing(lambda k, tau: self.N(tau), tt, self.tol, guard=2 * cap)
            out[ids] = self.hhat(root)
        return out


def sobolev_conjugate(model: ExponentModel, mode: Mode, x, t, tol: float = 1e-12) -> np.ndarray:
    """Sobolev conjugate ``H_*(x, t)`` at a single point ``x`` for an array of ``t``.

    Returns ``inf`` where ``t`` exceeds the supremum of ``N(x, .)`` (which is
    finite when the growth beats the dimension).
    """
    return _SobolevConjugate(model, mode, x, tol)(t)


# ---------------------------------------------------------------------------
# hypothesis validation


def _pair_quotients(f, pts, rng, n_pairs, extra=None):
    """Largest sampled ``|f(a) - f(b)| / |a - b|`` over random pairs."""
    i = rng.integers(0, len(pts), n_pairs)
    j = rng.integers(0, len(pts), n_pairs)
    keep = i != j
    a, b = pts[i[keep]], pts[j[keep]]
    dist = np.linalg.norm(a - b, axis=-1)
    keep2 = dist > 0
    a, b, dist = a[keep2], b[keep2], dist[keep2]
    if extra is None:
        fa, fb = f(a), f(b)
    else:
        fa, fb = f(a, extra[: len(a)]), f(b, extra[: len(a)])
    q = np.abs(fa - fb) / dist
    if q.size == 0:
        return 0.0, {}
    k = int(np.argmax(q))
    return float(q[k]), {"a": a[k], "b": b[k]}


def validate_hypotheses(model: ExponentModel, sampler_config: SamplerConfig | None = None) -> list:
    """Sampled check of the structural hypotheses on ``p``, ``q``, ``mu``.

    One :class:`Report` per hypothesis; nothing is raised on failure.
    Gradient-coupled (and uncoupled) models are checked against the
    gradient-dependent hypothesis set, solution-coupled models against the
    solution-dependent one.
    """
    cfg = sampler_config or model.sampler
    rng = np.random.default_rng(cfg.seed)
    pts = model.sample_points(cfg.n_x, rng)
    d = model.dim
    reports = []

    t = model.t_grid(cfg)
    P, Q = model.exponents(pts[:, None, :], t[None, :])
    b = model.bounds
    tt = np.broadcast_to(t, P.shape)
    xx = np.broadcast_to(pts[:, None, :], P.shape + (d,))

    # bounds: p, q >= 2, p <= q, inside the declared/estimated bounds
    m = np.minimum.reduce(
        [P - 2.0, Q - 2.0, Q - P, P - b.p_minus, b.p_plus - P, Q - b.q_minus, b.q_plus - Q]
    ).ravel()
    reports.append(
        Report.from_margins(
            "H1",
            m,
            1e-12,
            {"x": xx.reshape(-1, d), "t": tt.ravel(), "p": P.ravel(), "q": Q.ravel()},
            details={"p_minus": b.p_minus, "p_plus": b.p_plus, "q_minus": b.q_minus, "q_plus": b.q_plus,
                     "bounds_declared": b.declared},
        )
    )

    # dimension condition differs between the two hypothesis sets
    if model.coupling is Coupling.SOLUTION:
        rep = Report.from_margins(
            "H1-dimension", [b.p_minus - d], 0.0, {"p_minus": b.p_minus, "d": d}, strict=True
        )
        rep.details["condition"] = "p- > d"
    else:
        rep = Report.from_margins("H1-dimension", [d - b.p_plus], 0.0, {"p_plus": b.p_plus, "d": d})
        rep.details["condition"] = "p+ <= d"
    reports.append(rep)

    if model.coupling is Coupling.SOLUTION:
        # Lipschitz continuity in t, uniformly in x
        dt = np.diff(t)
        cp = np.abs(np.diff(P, axis=1)) / dt
        cq = np.abs(np.diff(Q, axis=1)) / dt
        k = np.unravel_index(np.argmax(np.maximum(cp, cq)), cp.shape)
        worst = float(max(cp.max(), cq.max()))
        reports.append(
            Report.from_margins(
                "H1-lipschitz-t",
                [0.0 if math.isfinite(worst) else -math.inf],
                0.0,
                {"x": pts[k[0]], "t": t[k[1]]},
                details={"c_p_t": float(cp.max()), "c_q_t": float(cq.max())},
            )
        )
    else:
        small = t <= 1.0
        large = t >= 1.0
        dP0, dQ0 = np.diff(P[:, small], axis=1), np.diff(Q[:, small], axis=1)
        dP1, dQ1 = np.diff(P[:, large], axis=1), np.diff(Q[:, large], axis=1)
        scale = 1e-12
        # nonincreasing on [0,1], nondecreasing on [1,T]
        m2 = np.concatenate([(-dP0).ravel(), (-dQ0).ravel(), dP1.ravel(), dQ1.ravel()])
        reports.append(Report.from_margins("H2", m2, scale, details={"t_max": cfg.t_max}))
        # constant on [0,1], nondecreasing on [1,T]
        c0 = np.concatenate(
            [-np.abs(P[:, small] - P[:, small][:, :1]).ravel(), -np.abs(Q[:, small] - Q[:, small][:, :1]).ravel()]
        )
        m2p = np.concatenate([c0, dP1.ravel(), dQ1.ravel()])
        reports.append(Report.from_margins("H2'", m2p, scale, details={"t_max": cfg.t_max}))

    # weight nonnegative; Lipschitz constants reported
    mu = model.weight(pts)
    c_mu, at_mu = _pair_quotients(model.weight, pts, rng, cfg.n_pairs)
    tpair = rng.choice(t, cfg.n_pairs)
    c_p, _ = _pair_quotients(lambda a, tv: model.p.vec(t=tv, **model.coords(a)), pts, rng, cfg.n_pairs, tpair)
    c_q, _ = _pair_quotients(lambda a, tv: model.q.vec(t=tv, **model.coords(a)), pts, rng, cfg.n_pairs, tpair)
    finite = all(math.isfinite(c) for c in (c_mu, c_p, c_q))
    m3 = np.append(mu, 0.0 if finite else -math.inf)
    rep = Report.from_margins(
        "H3",
        m3,
        0.0,
        {"x": np.vstack([pts, pts[:1]])},
        details={"c_mu": c_mu, "c_p": c_p, "c_q": c_q},
    )
    reports.append(rep)

    # q+/p- < 1 + 1/d (strict)
    gap = 1.0 + 1.0 / d - b.q_plus / b.p_minus
    reports.append(
        Report.from_margins("H4", [gap], 0.0, {"q_plus": b.q_plus, "p_minus": b.p_minus, "d": d}, strict=True)
    )
    return reports
