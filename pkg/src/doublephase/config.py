"""Line-oriented problem configuration files.

A config file is a sequence of ``[section]`` headers and ``key = value``
lines.  ``#`` starts a comment outside quotes.  Expressions may be quoted
with double or single quotes (recommended); lists are whitespace separated.
Example::

    [domain]
    kind = interval
    bounds = 0 1
    n = 64

    [exponents]
    p = "2"
    q = "3"
    mu = "0"
    coupling = gradient

    [source]
    f = "1"
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .expr import ExprError, parse
from .mesh import build_interval_mesh, build_rect_mesh
from .nfunction import Bounds, Coupling, ExponentModel, Mode, SamplerConfig, validate_hypotheses
from .operator import ProblemSpec, Sign
from .solvers import SolveConfig, default_epsilon_schedule

__all__ = ["ConfigError", "RunConfig", "parse_config", "parse_config_text", "SCHEMA", "describe_defaults"]


class ConfigError(ValueError):
    """Malformed or invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


_SPACE = {1: ("x",), 2: ("x", "y")}


def _word(*choices):
    def conv(v):
        v = v.lower()
        if v not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}, got {v!r}")
        return v

    return conv


def _bool(v):
    lv = v.lower()
    if lv in ("true", "yes", "on", "1"):
        return True
    if lv in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true or false, got {v!r}")


def _floats(v):
    return tuple(float(s) for s in v.split())


def _ints(v):
    out = []
    for s in v.split():
        if not s.lstrip("+-").isdigit():
            raise ValueError(f"expected integers, got {v!r}")
        out.append(int(s))
    return tuple(out)


def _int(v):
    vals = _ints(v)
    if len(vals) != 1:
        raise ValueError(f"expected one integer, got {v!r}")
    return vals[0]


def _positive(v):
    x = float(v)
    if not x > 0:
        raise ValueError(f"expected a positive number, got {v!r}")
    return x


def _str(v):
    return v


# section -> key -> (converter, default); None means "not set"
SCHEMA = {
    "domain": {
        "kind": (_word("interval", "rectangle"), "interval"),
        "bounds": (_floats, None),
        "n": (_ints, (64,)),
    },
    "exponents": {
        "p": ("expr", None),
        "q": ("expr", None),
        "mu": ("expr", "0"),
        "coupling": (_word("gradient", "solution", "none"), "gradient"),
        "mode": (_word("integral", "direct"), "integral"),
        "p_minus": (float, None),
        "p_plus": (float, None),
        "q_minus": (float, None),
        "q_plus": (float, None),
    },
    "source": {
        "f": ("expr", None),
        "r": ("expr", None),
        "f0": ("expr", None),
        "eta_plus": (float, None),
        "eta_minus": (float, None),
        "sign": (_word("none", "plus", "minus", "both"), "none"),
    },
    "solver": {
        "method": (_word("auto", "variational", "pseudomonotone", "coupled", "multiplicity"), "auto"),
        "max_outer": (_int, 200),
        "max_inner": (_int, 50),
        "residual_tol": (_positive, 1e-10),
        "step_tol": (_positive, 1e-10),
        "armijo_c": (_positive, 1e-4),
        "backtrack_factor": (_positive, 0.5),
        "max_backtracks": (_int, 60),
        "epsilon_levels": (_int, 11),
        "epsilon_schedule": (_floats, None),
        "limit_stage": (_bool, True),
        "direction": (_word("newton", "gradient"), "newton"),
        "initial_guess": (_str, "zero"),
        "initial_guess_file": ("path", None),
        "quad_tol": (_positive, 1e-13),
    },
    "verify": {
        "suites": (_str, "pointwise modular operator solver_consistency"),
        "samples": (_int, None),
        "seed": (_int, 0),
    },
    "norms": {
        "field": ("expr", None),
        "of": (_word("value", "gradient"), "value"),
        "dual": (_bool, False),
        "tol": (_positive, 1e-10),
    },
    "output": {
        "dir": ("path", "."),
        "solution": (_str, None),
        "report": (_str, None),
    },
}

_EXPR_VARS = {
    "p": ("t",), "q": ("t",), "mu": (), "f": ("t",), "r": ("t",), "f0": (), "field": (),
}


def describe_defaults() -> str:
    """Human-readable table of sections, keys and defaults (used by --help)."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (_conv, default) in keys.items():
            if default is None:
                shown = "(unset)"
            elif isinstance(default, tuple):
                shown = " ".join(str(v) for v in default)
            else:
                shown = str(default).lower() if isinstance(default, bool) else str(default)
            lines.append(f"  {key} = {shown}")
    return "\n".join(lines)


@dataclass
class RunConfig:
    """Validated contents of a config file with defaults filled in."""

    path: str
    dim: int
    domain_kind: str
    domain_bounds: tuple
    n: tuple
    model: ExponentModel
    mode: Mode
    f: str | None
    r: str | None
    f0: str | None
    eta_plus: float | None
    eta_minus: float | None
    sign: str
    method: str
    solve: SolveConfig
    quad_tol: float
    verify_suites: tuple
    verify_samples: int | None
    seed: int
    norms_field: str | None
    norms_of: str
    norms_dual: bool
    norms_tol: float
    out_dir: str
    solution_name: str
    report_name: str | None
    initial_guess_file: str | None = None
    warnings: list = field(default_factory=list)
    lines: dict = field(default_factory=dict)

    def mesh(self):
        if self.domain_kind == "interval":
            a, b = self.domain_bounds
            return build_interval_mesh(a, b, self.n[0])
        lx, ly = self.domain_bounds
        return build_rect_mesh(lx, ly, *self.n)

    def spec(self, mesh=None) -> ProblemSpec:
        return ProblemSpec(
            self.model,
            mesh or self.mesh(),
            self.mode,
            f=self.f,
            r=self.r,
            f0=self.f0,
            eta_minus=self.eta_minus,
            eta_plus=self.eta_plus,
            quad_tol=self.quad_tol,
        )

    def resolved_method(self) -> str:
        if self.method != "auto":
            return self.method
        if self.sign == "both":
            return "multiplicity"
        if self.r is not None or self.f0 is not None:
            return "pseudomonotone"
        if self.model.coupling is Coupling.SOLUTION:
            return "coupled"
        return "variational"

    @property
    def sign_enum(self):
        return {"plus": Sign.PLUS, "minus": Sign.MINUS}.get(self.sign)


def _split_value(raw: str, lineno: int):
    """Strip a trailing comment and surrounding quotes; return (value, quoted)."""
    raw = raw.strip()
    if raw[:1] in ('"', "'"):
        q = raw[0]
        end = raw.find(q, 1)
        if end < 0:
            raise ConfigError(f"unterminated string at line {lineno}", lineno)
        rest = raw[end + 1:].strip()
        if rest and not rest.startswith("#"):
            raise ConfigError(f"unexpected text after closing quote at line {lineno}", lineno)
        return raw[1:end], True
    return raw.split("#", 1)[0].strip(), False


def _read_sections(text: str):
    values: dict = {}
    where: dict = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("["):
            head = stripped.split("#", 1)[0].strip()
            if not head.endswith("]"):
                raise ConfigError(f"malformed section header at line {lineno}", lineno)
            section = head[1:-1].strip().lower()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section '{section}' at line {lineno}", lineno)
            values.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value' at line {lineno}", lineno)
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if section is None:
            raise ConfigError(f"key '{key}' outside any section at line {lineno}", lineno)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' at line {lineno}", lineno)
        if key in values[section]:
            raise ConfigError(f"duplicate key '{key}' at line {lineno}", lineno)
        value, _quoted = _split_value(raw, lineno)
        if value == "":
            raise ConfigError(f"empty value for '{key}' at line {lineno}", lineno)
        values[section][key] = value
        where[(section, key)] = lineno
    return values, where


def _convert(values, where, base_dir):
    out: dict = {}
    for sec, keys in SCHEMA.items():
        for key, (conv, default) in keys.items():
            raw = values.get(sec, {}).get(key)
            if raw is None:
                out[(sec, key)] = default
                continue
            ln = where[(sec, key)]
            if conv == "expr":
                out[(sec, key)] = raw  # parsed once the dimension is known
            elif conv == "path":
                path = raw if os.path.isabs(raw) else os.path.join(base_dir, raw)
                out[(sec, key)] = os.path.normpath(path)
            else:
                try:
                    out[(sec, key)] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for '{key}' at line {ln}: {exc}", ln) from None
    return out


def _check_expr(src, key, dim, ln):
    if src is None:
        return None
    try:
        parse(src, _SPACE[dim] + _EXPR_VARS[key])
    except ExprError as exc:
        raise ConfigError(f"expression error in '{key}' at line {ln}: {exc}", ln) from None
    return src


def _p_le_q_warnings(model: ExponentModel) -> list:
    rng = np.random.default_rng(model.sampler.seed)
    pts = model.sample_points(model.sampler.n_x, rng)
    t = model.t_grid()
    P, Q = model.exponents(pts[:, None, :], t[None, :])
    bad = np.argwhere(P > Q)
    if not bad.size:
        return []
    i, j = bad[0]
    xs = ", ".join(f"{v:.6g}" for v in pts[i])
    return [
        f"(H1) p ≤ q violated at sample x=({xs}), t={t[j]:.6g}: p={P[i, j]:.6g} > q={Q[i, j]:.6g}"
        f" ({len(bad)} of {P.size} samples)"
    ]


def _hypothesis_warnings(model: ExponentModel) -> list:
    out = _p_le_q_warnings(model)
    for rep in validate_hypotheses(model):
        if rep.passed:
            continue
        if rep.check == "H1" and out:
            continue  # already reported in the specific form above
        cond = rep.details.get("condition", "")
        extra = f" ({cond})" if cond else ""
        out.append(f"({rep.check}) hypothesis check failed{extra}: worst margin {rep.worst_margin:.6g}"
                   f" at {rep.worst_sample}")
    return out


def parse_config_text(text: str, path: str = "<string>", strict: bool = False) -> RunConfig:
    """Parse config text; ``path`` anchors relative paths and error messages."""
    base_dir = os.path.dirname(os.path.abspath(path)) if path != "<string>" else os.getcwd()
    values, where = _read_sections(text)
    v = _convert(values, where, base_dir)

    def ln(sec, key):
        return where.get((sec, key))

    kind = v[("domain", "kind")]
    dim = 1 if kind == "interval" else 2
    bounds = v[("domain", "bounds")]
    if bounds is None:
        bounds = (0.0, 1.0) if dim == 1 else (1.0, 1.0)
    if len(bounds) != 2:
        raise ConfigError(f"'bounds' needs two numbers at line {ln('domain', 'bounds')}", ln("domain", "bounds"))
    n = v[("domain", "n")]
    if dim == 2 and len(n) == 1:
        n = (n[0], n[0])
    if len(n) != dim:
        raise ConfigError(f"'n' needs {dim} integer(s) at line {ln('domain', 'n')}", ln("domain", "n"))
    # rectangles are (0, lx) x (0, ly); the mesh builders check the rest
    try:
        if dim == 1:
            build_interval_mesh(bounds[0], bounds[1], n[0])
        else:
            build_rect_mesh(bounds[0], bounds[1], *n)
    except ValueError as exc:
        line = ln("domain", "bounds") or ln("domain", "n")
        raise ConfigError(f"invalid domain: {exc}" + (f" at line {line}" if line else ""), line) from None

    exprs = {}
    for sec, key in (("exponents", "p"), ("exponents", "q"), ("exponents", "mu"), ("source", "f"),
                     ("source", "r"), ("source", "f0"), ("norms", "field")):
        exprs[key] = _check_expr(v[(sec, key)], key, dim, ln(sec, key))
    for key in ("p", "q"):
        if exprs[key] is None:
            raise ConfigError(f"missing required key '{key}' in [exponents]")

    declared = [v[("exponents", k)] for k in ("p_minus", "p_plus", "q_minus", "q_plus")]
    if any(d is not None for d in declared):
        if any(d is None for d in declared):
            raise ConfigError("declare all of p_minus, p_plus, q_minus, q_plus or none of them")
        bnds = Bounds(*declared, declared=True)
    else:
        bnds = None
    domain_box = [(bounds[0], bounds[1])] if dim == 1 else [(0.0, bounds[0]), (0.0, bounds[1])]
    model = ExponentModel(
        exprs["p"], exprs["q"], exprs["mu"], Coupling(v[("exponents", "coupling")]), dim, bnds, domain_box,
        SamplerConfig(),
    )

    sched = v[("solver", "epsilon_schedule")]
    if sched is not None and ln("solver", "epsilon_levels"):
        raise ConfigError(f"set epsilon_schedule or epsilon_levels, not both (line {ln('solver', 'epsilon_schedule')})",
                          ln("solver", "epsilon_schedule"))
    if sched is None:
        levels = v[("solver", "epsilon_levels")]
        if levels < 0:
            raise ConfigError(f"epsilon_levels must be >= 0 at line {ln('solver', 'epsilon_levels')}")
        sched = default_epsilon_schedule(levels)

    guess = v[("solver", "initial_guess")]
    guess_file = v[("solver", "initial_guess_file")]
    if guess_file is not None:
        if ln("solver", "initial_guess"):
            raise ConfigError("set initial_guess or initial_guess_file, not both")
        if not os.path.isfile(guess_file):
            line = ln("solver", "initial_guess_file")
            raise ConfigError(f"initial_guess_file '{guess_file}' does not exist at line {line}", line)
    elif guess != "zero":
        try:
            parse(guess, _SPACE[dim])
        except ExprError as exc:
            line = ln("solver", "initial_guess")
            raise ConfigError(f"expression error in 'initial_guess' at line {line}: {exc}", line) from None

    try:
        solve = SolveConfig(
            max_outer=v[("solver", "max_outer")],
            max_inner=v[("solver", "max_inner")],
            residual_tol=v[("solver", "residual_tol")],
            step_tol=v[("solver", "step_tol")],
            armijo_c=v[("solver", "armijo_c")],
            backtrack_factor=v[("solver", "backtrack_factor")],
            max_backtracks=v[("solver", "max_backtracks")],
            epsilon_schedule=tuple(sched),
            limit_stage=v[("solver", "limit_stage")],
            initial_guess=guess if guess_file is None else "zero",
            direction=v[("solver", "direction")],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [solver] settings: {exc}") from None

    suites = tuple(v[("verify", "suites")].replace(",", " ").split())
    known = ("pointwise", "modular", "operator", "solver_consistency")
    for s in suites:
        if s not in known:
            line = ln("verify", "suites")
            raise ConfigError(f"unknown suite '{s}' at line {line}", line)

    for key in ("eta_plus", "eta_minus"):
        val = v[("source", key)]
        if val is not None and not math.isfinite(val):
            raise ConfigError(f"'{key}' must be finite at line {ln('source', key)}", ln("source", key))
    sign = v[("source", "sign")]
    if sign in ("plus", "both") and v[("source", "eta_plus")] is None:
        raise ConfigError(f"sign = {sign} needs eta_plus")
    if sign in ("minus", "both") and v[("source", "eta_minus")] is None:
        raise ConfigError(f"sign = {sign} needs eta_minus")

    cfg = RunConfig(
        path=path,
        dim=dim,
        domain_kind=kind,
        domain_bounds=tuple(bounds),
        n=tuple(n),
        model=model,
        mode=Mode(v[("exponents", "mode")]),
        f=exprs["f"],
        r=exprs["r"],
        f0=exprs["f0"],
        eta_plus=v[("source", "eta_plus")],
        eta_minus=v[("source", "eta_minus")],
        sign=sign,
        method=v[("solver", "method")],
        solve=solve,
        quad_tol=v[("solver", "quad_tol")],
        verify_suites=suites,
        verify_samples=v[("verify", "samples")],
        seed=v[("verify", "seed")],
        norms_field=exprs["field"],
        norms_of=v[("norms", "of")],
        norms_dual=v[("norms", "dual")],
        norms_tol=v[("norms", "tol")],
        out_dir=v[("output", "dir")],
        solution_name=v[("output", "solution")] or ("solution.csv" if dim == 1 else "solution.txt"),
        report_name=v[("output", "report")],
        initial_guess_file=guess_file,
        lines={f"{s}.{k}": line for (s, k), line in where.items()},
    )
    cfg.warnings = _hypothesis_warnings(model)
    if strict and cfg.warnings:
        raise ConfigError("hypothesis check failed (--strict): " + "; ".join(cfg.warnings))
    return cfg


def parse_config(path, strict: bool = False) -> RunConfig:
    """Read and validate a UTF-8 config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, os.fspath(path), strict)
