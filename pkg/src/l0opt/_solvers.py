"""Small per-atom first-order solvers in a diagonally weighted metric.

All gradients are representers for the weighted inner product
``<a, b>_w = sum(w * a * b)``, so a gradient step is ``u - step * grad(u)``
and every prox/projection is taken in the same metric.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, DivergenceError

EXPLOSION = 1e12


def _guard(u, it):
    if not np.all(np.isfinite(u)) or np.max(np.abs(u), initial=0.0) > EXPLOSION:
        raise DivergenceError(
            "iterates exploded; a declared coercivity/monotonicity hypothesis "
            "probably does not hold", iterations=it)


def fista(grad, L, prox, x0, w, tol=1e-10, maxiter=200_000):
    """Accelerated proximal gradient with gradient-based restart.

    ``prox(v, step)`` is the proximal map of the nonsmooth part.  Stops when
    successive iterates differ by less than ``tol`` in the sup norm.
    """
    step = 1.0 / L
    x = np.array(x0, dtype=float)
    y = x.copy()
    t = 1.0
    gauge = np.inf
    for it in range(1, maxiter + 1):
        x_new = prox(y - step * grad(y), step)
        _guard(x_new, it)
        gauge = float(np.max(np.abs(x_new - x), initial=0.0))
        if np.sum(w * (y - x_new) * (x_new - x)) > 0:
            t_new, y = 1.0, x_new.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if gauge < tol:
            return x, it, gauge
    raise ConvergenceError(f"proximal gradient did not converge (gauge {gauge:.3g})",
                           gauge=gauge, iterations=maxiter)


def davis_yin(grad, L, prox, proj, x0, w, tol=1e-10, maxiter=200_000):
    """Three-operator splitting for ``smooth + prox-friendly + indicator``."""
    step = 1.0 / L
    z = np.array(x0, dtype=float)
    gauge = np.inf
    for it in range(1, maxiter + 1):
        xc = proj(z)
        xg = prox(2.0 * xc - z - step * grad(xc), step)
        _guard(xg, it)
        diff = xg - xc
        z = z + diff
        gauge = float(np.max(np.abs(diff), initial=0.0))
        if gauge < tol:
            return proj(z), it, gauge
    raise ConvergenceError(f"three-operator splitting did not converge (gauge {gauge:.3g})",
                           gauge=gauge, iterations=maxiter)


def weighted_lmax(H, w):
    """Largest eigenvalue of ``W^{-1/2} H W^{-1/2}`` for symmetric ``H``."""
    if H.size == 0:
        return 0.0
    s = 1.0 / np.sqrt(w)
    return float(np.linalg.eigvalsh(s[:, None] * H * s[None, :])[-1])


def weighted_lmin(H, w):
    if H.size == 0:
        return 0.0
    s = 1.0 / np.sqrt(w)
    return float(np.linalg.eigvalsh(s[:, None] * H * s[None, :])[0])
