"""Single-degree-of-freedom bilinear hysteretic oscillator.

The restoring force is written as ``f = k2 z + (k1 - k2) s`` where ``s`` is the
deflection of an elastic-perfectly-plastic element clamped to ``[-z_y, z_y]``.
On the elastic branch ``s = z - p`` with a fixed plastic offset ``p``; on a
yield branch ``s = +-z_y`` and ``p`` travels with ``z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..model import SimulationDivergence
from .motion import GroundMotion

ELASTIC, YIELD_POS, YIELD_NEG = 0, 1, -1


@dataclass(frozen=True)
class BilinearParams:
    k1: float
    k2: float
    z_y: float
    c: float = 0.0
    m: float = 1.0

    def __post_init__(self):
        if not (self.m > 0 and self.k1 > 0 and self.z_y > 0):
            raise ValueError("bilinear oscillator needs m > 0, k1 > 0 and z_y > 0")
        if self.k2 < 0 or self.c < 0:
            raise ValueError("bilinear oscillator needs k2 >= 0 and c >= 0")


@dataclass(frozen=True)
class BilinearHystState:
    plastic_offset: float = 0.0
    branch: int = ELASTIC


def restoring_force_bilinear(state: BilinearHystState, z: float, dz: float, params: BilinearParams):
    """Advance the hysteresis state to displacement ``z`` moving with velocity ``dz``.

    Returns ``(f_h, new_state)``. Increments are assumed small enough that at
    most one branch transition happens between calls.
    """
    k1, k2, zy = params.k1, params.k2, params.z_y
    p, b = state.plastic_offset, state.branch
    if b != ELASTIC and b * dz < 0:
        b = ELASTIC
    if b == ELASTIC:
        s = z - p
        if s > zy:
            b, p, s = YIELD_POS, z - zy, zy
        elif s < -zy:
            b, p, s = YIELD_NEG, z + zy, -zy
    else:
        p = z - b * zy
        s = b * zy
    return k2 * z + (k1 - k2) * s, BilinearHystState(p, b)


@njit(cache=True, nogil=True, error_model="numpy")
def _accel(z, v, u, m, c, k1, k2, zy, p, b):
    if b == 0:
        s = z - p
    else:
        s = b * zy
    return -u - (c * v + k2 * z + (k1 - k2) * s) / m


@njit(cache=True, nogil=True, error_model="numpy")
def _rk4(z, v, h, u0, du, m, c, k1, k2, zy, p, b):
    # ground acceleration u(t) = u0 + du * t inside the step
    hh = 0.5 * h
    a1 = _accel(z, v, u0, m, c, k1, k2, zy, p, b)
    z2 = z + hh * v
    v2 = v + hh * a1
    a2 = _accel(z2, v2, u0 + du * hh, m, c, k1, k2, zy, p, b)
    z3 = z + hh * v2
    v3 = v + hh * a2
    a3 = _accel(z3, v3, u0 + du * hh, m, c, k1, k2, zy, p, b)
    z4 = z + h * v3
    v4 = v + h * a3
    a4 = _accel(z4, v4, u0 + du * h, m, c, k1, k2, zy, p, b)
    zn = z + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
    vn = v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return zn, vn


@njit(cache=True, nogil=True, error_model="numpy")
def _locate(z, v, h, u0, du, m, c, k1, k2, zy, p, b, target, which):
    """Fraction of ``h`` at which ``z - p`` (which=0) or ``v`` (which=1) hits ``target``."""
    if which == 0:
        g0 = z - p - target
    else:
        g0 = v - target
    z1, v1 = _rk4(z, v, h, u0, du, m, c, k1, k2, zy, p, b)
    g1 = (z1 - p - target) if which == 0 else (v1 - target)
    lo, hi = 0.0, 1.0
    glo, ghi = g0, g1
    phi = glo / (glo - ghi)
    for _ in range(30):
        zt, vt = _rk4(z, v, phi * h, u0, du, m, c, k1, k2, zy, p, b)
        gt = (zt - p - target) if which == 0 else (vt - target)
        if abs(gt) <= 1e-15 * (abs(target) + abs(zt) + abs(vt) + 1e-300):
            break
        if (gt > 0) == (glo > 0):
            lo, glo = phi, gt
        else:
            hi, ghi = phi, gt
        # regula falsi with bisection safeguard
        phi_new = lo + glo * (hi - lo) / (glo - ghi)
        if not (lo < phi_new < hi) or hi - lo < 1e-14:
            phi_new = 0.5 * (lo + hi)
        if hi - lo < 1e-14:
            phi = phi_new
            break
        phi = phi_new
    return phi


@njit(cache=True, nogil=True, error_model="numpy")
def _bilinear_kernel(m, c, k1, k2, zy, acc, dt_in, n_sub, out_every, want_energy):
    n_in = acc.size
    n_out = (n_in - 1) // out_every
    z_out = np.zeros(n_out)
    f_out = np.zeros(n_out)
    energy = np.zeros((n_out if want_energy else 0, 5))
    z = 0.0
    v = 0.0
    p = 0.0
    b = 0
    w_in = 0.0
    w_damp = 0.0
    e_diss = 0.0
    h = dt_in / n_sub
    k = 0
    for i in range(n_in - 1):
        du = (acc[i + 1] - acc[i]) / dt_in
        for j in range(n_sub):
            u_start = acc[i] + du * (j * h)
            remaining = h
            t_loc = 0.0
            for _ in range(8):
                if remaining <= 0.0:
                    break
                u0 = u_start + du * t_loc
                z1, v1 = _rk4(z, v, remaining, u0, du, m, c, k1, k2, zy, p, b)
                h_seg = remaining
                switch = 0
                if b == 0:
                    s1 = z1 - p
                    if s1 > zy or s1 < -zy:
                        target = zy if s1 > 0 else -zy
                        phi = _locate(z, v, remaining, u0, du, m, c, k1, k2, zy, p, b, target, 0)
                        h_seg = phi * remaining
                        z1, v1 = _rk4(z, v, h_seg, u0, du, m, c, k1, k2, zy, p, b)
                        switch = 1 if s1 > 0 else -1
                else:
                    if b * v1 < 0.0:
                        phi = _locate(z, v, remaining, u0, du, m, c, k1, k2, zy, p, b, 0.0, 1)
                        h_seg = phi * remaining
                        z1, v1 = _rk4(z, v, h_seg, u0, du, m, c, k1, k2, zy, p, b)
                        switch = 2
                if want_energy:
                    u1 = u0 + du * h_seg
                    w_in += -m * 0.5 * (u0 * v + u1 * v1) * h_seg
                    w_damp += c * 0.5 * (v * v + v1 * v1) * h_seg
                    if b != 0:
                        e_diss += (k1 - k2) * zy * abs(z1 - z)
                z = z1
                v = v1
                if b != 0:
                    p = z - b * zy
                if switch == 2:
                    b = 0
                elif switch != 0:
                    b = switch
                    p = z - b * zy
                t_loc += h_seg
                remaining -= h_seg
                if h_seg <= 0.0 and switch == 0:
                    break
        if not (np.isfinite(z) and np.isfinite(v)):
            return z_out, f_out, energy, i + 1
        if (i + 1) % out_every == 0:
            s = (z - p) if b == 0 else b * zy
            z_out[k] = z
            f_out[k] = k2 * z + (k1 - k2) * s
            if want_energy:
                energy[k, 0] = w_in
                energy[k, 1] = 0.5 * m * v * v
                energy[k, 2] = w_damp
                energy[k, 3] = 0.5 * k2 * z * z + 0.5 * (k1 - k2) * s * s
                energy[k, 4] = e_diss
            k += 1
    return z_out, f_out, energy, -1


def simulate_bilinear(
    params: BilinearParams,
    motion: GroundMotion,
    out_dt: float | None = None,
    n_sub: int = 20,
    return_force: bool = False,
    return_energy: bool = False,
):
    """Displacement response of the bilinear oscillator from rest.

    Parameters
    ----------
    params : BilinearParams
    motion : GroundMotion
    out_dt : float, optional
        Output interval; an integer multiple of ``motion.dt`` (default ``motion.dt``).
    n_sub : int
        RK4 substeps per record interval.
    return_force, return_energy : bool
        Also return the hysteretic force and an energy ledger with columns
        ``(input, kinetic, viscous, elastic, hysteretic dissipation)``.

    Returns
    -------
    z : ndarray
        Displacement at ``t_n = n * out_dt``, ``n = 1..N``.
    """
    every = motion.steps_per_output(out_dt)
    z, f, energy, status = _bilinear_kernel(
        float(params.m), float(params.c), float(params.k1), float(params.k2),
        float(params.z_y), np.ascontiguousarray(motion.accel), float(motion.dt),
        int(n_sub), int(every), bool(return_energy),
    )
    if status >= 0:
        raise SimulationDivergence(status // every)
    out = [z]
    if return_force:
        out.append(f)
    if return_energy:
        out.append(energy)
    return out[0] if len(out) == 1 else tuple(out)
