"""Batched adaptive Gauss–Legendre quadrature on the unit interval."""

from __future__ import annotations

import numpy as np

__all__ = ["QuadratureError", "integrate_unit", "gauss_legendre", "GL_NODES", "GL_WEIGHTS"]


class QuadratureError(RuntimeError):
    pass


def gauss_legendre(n: int):
    """Nodes and weights of the n-point rule mapped to [0, 1]."""
    z, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (z + 1.0), 0.5 * w


GL_NODES, GL_WEIGHTS = gauss_legendre(15)


def _panel(fun, idx, a, b):
    width = b - a
    s = a[:, None] + width[:, None] * GL_NODES[None, :]
    vals = fun(idx, s)
    # row-wise reduction: a BLAS product may round differently with batch size
    return width * np.sum(vals * GL_WEIGHTS, axis=1)


def integrate_unit(fun, n: int, tol: float = 1e-13, max_depth: int = 40) -> np.ndarray:
    """Integrate ``n`` independent integrands over [0, 1].

    ``fun(idx, s)`` receives an integer array ``idx`` of shape (k,) naming the
    integrands and abscissae ``s`` of shape (k, 15); it returns values of the
    same shape.  A panel's estimate is the 15-point rule summed over its two
    halves, and its error indicator is the difference to the rule on the
    whole panel.  The indicator must be below ``tol * (1 + |I0|) * width``
    (``I0`` the first single-panel estimate of that integrand) for the panel
    and for its parent: the indicator is a linear functional, so for sums of
    powers it can vanish by cancellation on one level, but not on two.

    Panels of one integrand are accumulated in a fixed order, so the result
    for an integrand does not depend on which other integrands share the batch.
    """
    if n == 0:
        return np.zeros(0)
    idx = np.arange(n)
    a = np.zeros(n)
    b = np.ones(n)
    whole = _panel(fun, idx, a, b)
    scale = tol * (1.0 + np.abs(whole))
    parent_ok = np.zeros(n, dtype=bool)
    total = np.zeros(n)
    for _depth in range(max_depth):
        mid = 0.5 * (a + b)
        left = _panel(fun, idx, a, mid)
        right = _panel(fun, idx, mid, b)
        both = left + right
        small = np.abs(both - whole) <= scale[idx] * (b - a)
        ok = small & parent_ok
        if np.any(ok):
            np.add.at(total, idx[ok], both[ok])
        bad = ~ok
        if not np.any(bad):
            return total
        idx = np.concatenate([idx[bad], idx[bad]])
        parent_ok = np.concatenate([small[bad], small[bad]])
        a, b, whole = (
            np.concatenate([a[bad], mid[bad]]),
            np.concatenate([mid[bad], b[bad]]),
            np.concatenate([left[bad], right[bad]]),
        )
    raise QuadratureError(
        f"adaptive quadrature did not converge within {max_depth} bisections "
        f"({np.unique(idx).size} integrands unresolved)"
    )
