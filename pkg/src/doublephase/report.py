"""Pass/fail records for inequality and hypothesis checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

__all__ = ["Report", "to_jsonable", "dumps_line", "write_reports", "read_reports"]


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and nested containers to plain Python."""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def dumps_line(obj: Mapping[str, Any]) -> str:
    # json uses float.__repr__, which is the shortest round-trip decimal
    return json.dumps(to_jsonable(obj), ensure_ascii=False, separators=(", ", ": "))


@dataclass
class Report:
    """Outcome of one check over a batch of samples.

    A sample passes when its margin is at least ``-tolerance``.  ``margin_kind``
    says whether margins are absolute or scaled by the size of the compared
    quantities.
    """

    check: str
    samples: int
    passes: int
    worst_margin: float
    tolerance: float
    passed: bool
    margin_kind: str = "absolute"
    worst_sample: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @classmethod
    def from_margins(
        cls,
        check: str,
        margins,
        tolerance: float,
        inputs: Mapping[str, Any] | None = None,
        margin_kind: str = "absolute",
        details: Mapping[str, Any] | None = None,
        strict: bool = False,
    ) -> "Report":
        m = np.atleast_1d(np.asarray(margins, dtype=float))
        n = int(m.size)
        if n == 0:
            return cls(check, 0, 0, math.inf, tolerance, True, margin_kind, {}, dict(details or {}))
        ok = m > -tolerance if strict else m >= -tolerance
        # NaN margins count as failures and are reported as the worst case
        nan = np.isnan(m)
        worst = int(np.argmax(nan)) if nan.any() else int(np.argmin(m))
        sample = {}
        for key, arr in (inputs or {}).items():
            arr = np.asarray(arr)
            if arr.ndim >= 1 and arr.shape[0] == n:
                sample[key] = to_jsonable(arr[worst])
            else:
                sample[key] = to_jsonable(arr)
        passes = int(ok.sum())
        return cls(
            check,
            n,
            passes,
            float(m[worst]),
            float(tolerance),
            passes == n,
            margin_kind,
            sample,
            dict(details or {}),
        )

    def as_dict(self) -> dict:
        out = {
            "check": self.check,
            "samples": self.samples,
            "passes": self.passes,
            "worst_margin": self.worst_margin,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "margin_kind": self.margin_kind,
            "worst_sample": self.worst_sample,
        }
        if self.details:
            out["details"] = self.details
        return out

    def to_line(self) -> str:
        return dumps_line(self.as_dict())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Report":
        return cls(
            d["check"],
            int(d["samples"]),
            int(d["passes"]),
            float(d["worst_margin"]),
            float(d["tolerance"]),
            bool(d["passed"]),
            d.get("margin_kind", "absolute"),
            dict(d.get("worst_sample", {})),
            dict(d.get("details", {})),
        )


def write_reports(path, reports: Iterable[Report], extra: Iterable[Mapping[str, Any]] = ()) -> None:
    lines = [r.to_line() for r in reports]
    lines.extend(dumps_line(e) for e in extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))


def read_reports(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
