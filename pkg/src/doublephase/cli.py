"""Command line entry point: ``doublephase {solve,verify,norms} --config FILE``.

Exit status: 0 success, 1 usage or config error, 2 unconverged solve,
3 failed verification suite.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig, describe_defaults, parse_config
from .expr import parse
from .mesh import Field, Mesh, interpolate
from .nfunction import Coupling
from .modular import luxemburg_norm, modular
from .report import write_reports
from .solvers import (
    sign_condition,
    solve_multiplicity,
    solve_pseudomonotone,
    solve_solution_coupled,
    solve_variational,
)
from .verify import run_suite

__all__ = ["main", "run", "write_solution", "read_solution", "EXIT_OK", "EXIT_USAGE", "EXIT_UNCONVERGED",
           "EXIT_VERIFY_FAILED"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNCONVERGED = 2
EXIT_VERIFY_FAILED = 3

COMMANDS = ("solve", "verify", "norms")


# ---------------------------------------------------------------------------
# solution files


def _num(v) -> str:
    # repr of a Python float is the shortest string that round-trips
    return repr(float(v))


def write_solution(path, field: Field) -> None:
    """CSV ``x,u`` in 1D; ``POINTS`` / ``TRIANGLES`` blocks in 2D."""
    mesh = field.mesh
    u = field.coefficients
    if mesh.dim == 1:
        order = np.argsort(mesh.nodes[:, 0], kind="stable")
        lines = ["x,u"] + [f"{_num(mesh.nodes[i, 0])},{_num(u[i])}" for i in order]
    else:
        lines = [f"POINTS {mesh.n_nodes}"]
        lines += [f"{_num(x)} {_num(y)} {_num(v)}" for (x, y), v in zip(mesh.nodes, u)]
        lines.append(f"TRIANGLES {mesh.n_elements}")
        lines += [" ".join(str(int(i)) for i in tri) for tri in mesh.elements]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_solution(path, mesh: Mesh) -> np.ndarray:
    """Nodal values from a solution file written for the same mesh."""
    with open(path, encoding="utf-8") as fh:
        rows = [ln.strip() for ln in fh if ln.strip()]
    if mesh.dim == 1:
        if not rows or rows[0] != "x,u":
            raise ConfigError(f"{path}: expected header 'x,u'")
        data = np.array([[float(s) for s in r.split(",")] for r in rows[1:]])
        coords, vals = data[:, :1], data[:, 1]
        order = np.argsort(mesh.nodes[:, 0], kind="stable")
        ref = mesh.nodes[order]
    else:
        head = rows[0].split()
        if len(head) != 2 or head[0] != "POINTS":
            raise ConfigError(f"{path}: expected 'POINTS n' header")
        k = int(head[1])
        data = np.array([[float(s) for s in r.split()] for r in rows[1:1 + k]])
        coords, vals = data[:, :2], data[:, 2]
        order = np.arange(mesh.n_nodes)
        ref = mesh.nodes
    if coords.shape != ref.shape or not np.allclose(coords, ref, rtol=0, atol=1e-12):
        raise ConfigError(f"{path}: nodes do not match the configured mesh")
    out = np.empty(mesh.n_nodes)
    out[order] = vals
    return out


# ---------------------------------------------------------------------------
# commands


def _describe(cfg: RunConfig) -> dict:
    m = cfg.model
    b = m.bounds
    return {
        "config": os.path.basename(cfg.path),
        "domain": {"kind": cfg.domain_kind, "bounds": list(cfg.domain_bounds), "n": list(cfg.n)},
        "model": {"p": m.p.source, "q": m.q.source, "mu": m.mu.source, "coupling": m.coupling.value,
                  "mode": cfg.mode.value, "p_minus": b.p_minus, "p_plus": b.p_plus, "q_minus": b.q_minus,
                  "q_plus": b.q_plus, "bounds_declared": b.declared},
    }


def _solution_name(cfg: RunConfig, tag: str | None) -> str:
    if tag is None:
        return cfg.solution_name
    stem, ext = os.path.splitext(cfg.solution_name)
    return f"{stem}_{tag}{ext}"


def _solve(cfg: RunConfig, out_dir: str, say) -> int:
    mesh = cfg.mesh()
    spec = cfg.spec(mesh)
    scfg = cfg.solve
    if cfg.initial_guess_file is not None:
        scfg = dataclasses.replace(scfg, initial_guess=read_solution(cfg.initial_guess_file, mesh))
    method = cfg.resolved_method()
    runs = []
    extra = []
    if method == "variational":
        runs.append((None, solve_variational(spec, cfg.sign_enum, scfg)))
    elif method == "pseudomonotone":
        runs.append((None, solve_pseudomonotone(spec, scfg)))
    elif method == "coupled":
        runs.append((None, solve_solution_coupled(spec, scfg, cfg.sign_enum)))
    else:
        if spec.coupling is Coupling.SOLUTION:
            plus, minus, rep = solve_multiplicity(spec, scfg)
        else:
            plus = solve_variational(spec, "plus", scfg)
            minus = solve_variational(spec, "minus", scfg)
            rep = sign_condition(spec, spec.eta_plus, spec.eta_minus)
        runs += [("plus", plus), ("minus", minus)]
        extra.append({"kind": "precondition", **rep.as_dict()})

    lines = []
    converged = True
    for tag, res in runs:
        name = _solution_name(cfg, tag)
        write_solution(os.path.join(out_dir, name), res.solution)
        head = {"kind": "run", "command": "solve", "method": method, **_describe(cfg)}
        if tag is not None:
            head["sign"] = tag
        head["solution_file"] = name
        head.update(res.summary())
        if hasattr(res, "last_levels_gap"):
            head["last_levels_gap"] = res.last_levels_gap
        if cfg.warnings:
            head["config_warnings"] = list(cfg.warnings)
        lines.append(head)
        for rec in res.outer_trace:
            lines.append({"kind": "outer", **({"sign": tag} if tag else {}), **rec})
        converged = converged and res.converged
        label = f" [{tag}]" if tag else ""
        say(f"solve{label}: method={method} converged={str(res.converged).lower()} "
            f"residual={res.final_residual:.3e} iterations={res.iterations} -> {name}")
        for w in res.warnings:
            say(f"warning: {w}", err=True)
    report = cfg.report_name or "report.jsonl"
    write_reports(os.path.join(out_dir, report), [], lines + extra)
    return EXIT_OK if converged else EXIT_UNCONVERGED


def _verify(cfg: RunConfig, out_dir: str, seed: int, say) -> int:
    mesh = cfg.mesh()
    reports = []
    for suite in cfg.verify_suites:
        reports += run_suite(cfg.model, cfg.mode, mesh, suite, seed=seed, n_samples=cfg.verify_samples)
    failed = [r.check for r in reports if not r.passed]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        say(f"{status} {r.details.get('suite', '')}/{r.check}: {r.passes}/{r.samples} "
            f"worst margin {r.worst_margin:.3e} (tol {r.tolerance:g})")
    summary = {"kind": "summary", "command": "verify", "seed": seed, **_describe(cfg),
               "checks": len(reports), "failed": failed, "passed": not failed}
    write_reports(os.path.join(out_dir, cfg.report_name or "verify_report.jsonl"), reports, [summary])
    return EXIT_VERIFY_FAILED if failed else EXIT_OK


def _norms(cfg: RunConfig, out_dir: str, say) -> int:
    if cfg.norms_field is None:
        raise ConfigError("the norms command needs 'field' in [norms]")
    mesh = cfg.mesh()
    space = ("x", "y")[: mesh.dim]
    if cfg.norms_of == "value":
        e = parse(cfg.norms_field, space)
        env = {"x": mesh.quad_points[..., 0]}
        if mesh.dim > 1:
            env["y"] = mesh.quad_points[..., 1]
        samples = np.broadcast_to(e.vec(**env), mesh.quad_weights.shape).copy()
    else:
        samples = mesh.grad_norm(interpolate(cfg.norms_field, mesh).coefficients)
    norm = luxemburg_norm(samples, cfg.model, cfg.mode, mesh, tol=cfg.norms_tol, dual=cfg.norms_dual)
    rec = {"kind": "norms", **_describe(cfg), "field": cfg.norms_field, "of": cfg.norms_of,
           "dual": cfg.norms_dual, "luxemburg_norm": norm.value, "bisection_iterations": norm.bisection_iterations}
    if not cfg.norms_dual:
        mv = modular(samples, cfg.model, cfg.mode, mesh, quad_tol=cfg.quad_tol)
        rec["modular"] = mv.value
        rec["modular_error_estimate"] = mv.quadrature_error_estimate
    say(f"luxemburg_norm = {norm.value!r}")
    if "modular" in rec:
        say(f"modular = {rec['modular']!r}")
    write_reports(os.path.join(out_dir, cfg.report_name or "norms_report.jsonl"), [], [rec])
    return EXIT_OK


def run(command: str, cfg: RunConfig, seed: int | None = None, quiet: bool = False,
        out_dir: str | None = None) -> int:
    """Execute one command; artifacts go to ``out_dir`` (default: the config's)."""
    def say(msg, err=False):
        if not quiet:
            print(msg, file=sys.stderr if err else sys.stdout)

    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    for w in cfg.warnings:
        say(f"warning: {w}", err=True)
    if command == "solve":
        return _solve(cfg, out, say)
    if command == "verify":
        return _verify(cfg, out, cfg.seed if seed is None else seed, say)
    return _norms(cfg, out, say)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="doublephase",
        description="Solve, verify and measure double phase problems described by a config file.",
        epilog="config keys and defaults:\n" + describe_defaults()
        + "\n\nexit status: 0 ok, 1 usage/config error, 2 unconverged solve, 3 failed verification",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, metavar="PATH", help="problem config file")
    p.add_argument("--seed", type=int, default=None, help="seed for the verification suites")
    p.add_argument("--strict", action="store_true", help="treat failed hypothesis checks as errors")
    p.add_argument("--quiet", action="store_true", help="print nothing")
    p.add_argument("--out", metavar="DIR", default=None, help="output directory (overrides [output] dir)")
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(args.config, strict=args.strict)
        return run(args.command, cfg, seed=args.seed, quiet=args.quiet, out_dir=args.out)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
