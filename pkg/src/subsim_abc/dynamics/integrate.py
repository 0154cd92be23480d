from __future__ import annotations

import numpy as np

from ..model import SimulationDivergence


def integrate_fixed_step(fun, x0, dt: float, n_steps: int, t0: float = 0.0) -> np.ndarray:
    """Classical fourth-order Runge-Kutta with a fixed step.

    Parameters
    ----------
    fun : callable
        ``fun(t, x) -> dx/dt``.
    x0 : array_like
        Initial state.
    dt : float
        Step size, > 0.
    n_steps : int

    Returns
    -------
    ndarray of shape ``(n_steps + 1, len(x0))``; row 0 is ``x0``.

    Raises
    ------
    SimulationDivergence
        If the state becomes non-finite; ``.step`` is the offending step index.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    out = np.empty((n_steps + 1, x.size))
    out[0] = x
    t = t0
    half = 0.5 * dt
    for n in range(1, n_steps + 1):
        k1 = np.asarray(fun(t, x))
        k2 = np.asarray(fun(t + half, x + half * k1))
        k3 = np.asarray(fun(t + half, x + half * k2))
        k4 = np.asarray(fun(t + dt, x + dt * k3))
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise SimulationDivergence(n)
        out[n] = x
        t = t0 + n * dt
    return out
