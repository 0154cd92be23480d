"""Shear building with extended-Masing hysteretic story springs.

Each story force follows the initial loading curve until its first load
reversal. Every later branch starts at the most recent reversal ``(d*, r*)``
and is the initial curve scaled by two about that point. Reversal points are
kept on a per-story stack. A branch that reaches the deflection of an older
reversal point has closed a sub-cycle: the pair is popped and the older branch
takes over (``r*`` restored). A branch that started from the initial curve
rejoins that curve at the mirrored point ``(-d*, -r*)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..model import SimulationDivergence
from .motion import GroundMotion
from .structure import rayleigh_damping, shear_building_matrices

MAX_STACK = 256
SATURATION_MARGIN = 1.0 - 1e-12


@dataclass(frozen=True, eq=False)
class MasingParams:
    masses: np.ndarray
    k: np.ndarray
    r_u: np.ndarray
    alpha: np.ndarray
    c_M: float = 0.0
    c_K: float = 0.0

    def __post_init__(self):
        arrs = {}
        for name in ("masses", "k", "r_u", "alpha"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1)
            if np.any(~np.isfinite(a)) or np.any(a <= 0):
                raise ValueError(f"Masing parameter {name} must be finite and > 0")
            arrs[name] = a
        n = arrs["masses"].size
        if any(a.size != n for a in arrs.values()):
            raise ValueError("per-story arrays must share one length")
        if self.c_M < 0 or self.c_K < 0:
            raise ValueError("Rayleigh coefficients must be >= 0")
        for name, a in arrs.items():
            object.__setattr__(self, name, a)

    @property
    def n_stories(self) -> int:
        return self.masses.size

    def matrices(self):
        M, K = shear_building_matrices(self.masses, self.k)
        return M, K, rayleigh_damping(self.c_M, self.c_K, M, K)


@dataclass
class MasingHystState:
    """Per-story restoring force and reversal stack of ``(deflection, force)`` pairs."""

    r: float = 0.0
    reversal_stack: list = field(default_factory=list)

    @property
    def r_star(self):
        return self.reversal_stack[-1][1] if self.reversal_stack else None


@njit(cache=True, nogil=True, error_model="numpy")
def _rate(r, v_rel, k, r_u, alpha, r_star, on_branch):
    if on_branch:
        x = abs((r - r_star) / (2.0 * r_u))
    else:
        x = abs(r / r_u)
    return k * v_rel * (1.0 - x**alpha)


def masing_rate(r, v_rel, k, r_u, alpha, r_star=None) -> float:
    """Force rate of a Masing spring; initial curve when ``r_star`` is None."""
    if not r_u > 0:
        raise ValueError("r_u must be > 0")
    if r_star is None:
        return float(_rate(float(r), float(v_rel), float(k), float(r_u), float(alpha), 0.0, False))
    return float(_rate(float(r), float(v_rel), float(k), float(r_u), float(alpha), float(r_star), True))


@njit(cache=True, nogil=True, error_model="numpy")
def _update_stack(sd, sr, q, n, d, r, reversal):
    """Apply the Masing rules to the stack of story ``q`` (rows of ``sd``, ``sr``; depth ``n``).

    First pops any sub-cycles closed by the point ``(d, r)``, then records a
    reversal there if flagged. Returns the new depth.
    """
    while n > 0:
        if n >= 2:
            target_d = sd[q, n - 2]
            target_r = sr[q, n - 2]
        else:
            target_d = -sd[q, 0]
            target_r = -sr[q, 0]
        dir_d = target_d - sd[q, n - 1]
        dir_r = target_r - sr[q, n - 1]
        # the branch meets the older curve at (target_d, target_r); test both
        # coordinates so a flat branch near saturation cannot overshoot
        if dir_d == 0.0 or (d - target_d) * dir_d >= 0.0 or (r - target_r) * dir_r >= 0.0:
            n = n - 2 if n >= 2 else 0
        else:
            break
    if reversal:
        if n >= sd.shape[1]:
            # drop the oldest pair; keeps the newest loops intact
            for m in range(2, n):
                sd[q, m - 2] = sd[q, m]
                sr[q, m - 2] = sr[q, m]
            n -= 2
        sd[q, n] = d
        sr[q, n] = r
        n += 1
    return n


def apply_masing_rules(state: MasingHystState, deflection: float, reversal: bool) -> MasingHystState:
    """Return the state after the curve-crossing rule and an optional reversal push."""
    depth = len(state.reversal_stack)
    sd = np.zeros((1, max(MAX_STACK, depth + 1)))
    sr = np.zeros_like(sd)
    for m, (d, r) in enumerate(state.reversal_stack):
        sd[0, m], sr[0, m] = d, r
    n = _update_stack(sd, sr, 0, depth, float(deflection), float(state.r), bool(reversal))
    return MasingHystState(state.r, [(float(sd[0, m]), float(sr[0, m])) for m in range(n)])


@njit(cache=True, nogil=True, error_model="numpy")
def _deriv(z, v, r, u, minv, C, k, r_u, alpha, rstar, onb, dz, dv, dr):
    n = z.size
    for i in range(n):
        vrel = v[i] - (v[i - 1] if i > 0 else 0.0)
        dr[i] = _rate(r[i], vrel, k[i], r_u[i], alpha[i], rstar[i], onb[i])
    for i in range(n):
        fh = r[i] - (r[i + 1] if i + 1 < n else 0.0)
        cv = 0.0
        for j in range(n):
            cv += C[i, j] * v[j]
        dz[i] = v[i]
        dv[i] = -(cv + fh) * minv[i] - u


@njit(cache=True, nogil=True, error_model="numpy")
def _rk4(z, v, r, h, u0, du, minv, C, k, r_u, alpha, rstar, onb, zo, vo, ro, work):
    # ground acceleration u(t) = u0 + du * t inside the step
    k1z = work[0]; k1v = work[1]; k1r = work[2]
    k2z = work[3]; k2v = work[4]; k2r = work[5]
    k3z = work[6]; k3v = work[7]; k3r = work[8]
    k4z = work[9]; k4v = work[10]; k4r = work[11]
    tz = work[12]; tv = work[13]; tr = work[14]
    n = z.size
    hh = 0.5 * h
    _deriv(z, v, r, u0, minv, C, k, r_u, alpha, rstar, onb, k1z, k1v, k1r)
    for q in range(n):
        tz[q] = z[q] + hh * k1z[q]
        tv[q] = v[q] + hh * k1v[q]
        tr[q] = r[q] + hh * k1r[q]
    _deriv(tz, tv, tr, u0 + du * hh, minv, C, k, r_u, alpha, rstar, onb, k2z, k2v, k2r)
    for q in range(n):
        tz[q] = z[q] + hh * k2z[q]
        tv[q] = v[q] + hh * k2v[q]
        tr[q] = r[q] + hh * k2r[q]
    _deriv(tz, tv, tr, u0 + du * hh, minv, C, k, r_u, alpha, rstar, onb, k3z, k3v, k3r)
    for q in range(n):
        tz[q] = z[q] + h * k3z[q]
        tv[q] = v[q] + h * k3v[q]
        tr[q] = r[q] + h * k3r[q]
    _deriv(tz, tv, tr, u0 + du * h, minv, C, k, r_u, alpha, rstar, onb, k4z, k4v, k4r)
    for q in range(n):
        zo[q] = z[q] + h / 6.0 * (k1z[q] + 2.0 * k2z[q] + 2.0 * k3z[q] + k4z[q])
        vo[q] = v[q] + h / 6.0 * (k1v[q] + 2.0 * k2v[q] + 2.0 * k3v[q] + k4v[q])
        ro[q] = r[q] + h / 6.0 * (k1r[q] + 2.0 * k2r[q] + 2.0 * k3r[q] + k4r[q])
        # the exact flow never reaches the asymptotes; RK4 can overshoot them
        # by its truncation error deep in saturation, so project back inside
        lim = r_u[q] * SATURATION_MARGIN
        if onb[q]:
            ro[q] = min(max(ro[q], rstar[q] - 2.0 * lim), rstar[q] + 2.0 * lim)
        ro[q] = min(max(ro[q], -lim), lim)


@njit(cache=True, nogil=True, error_model="numpy")
def _crossing_fraction(sd, sr, q, n, d0, r0, d1, r1):
    """Fraction of a step at which the current branch reaches its closure
    point, or -1 if it does not within the step."""
    if n == 0:
        return -1.0
    if n >= 2:
        target_d = sd[q, n - 2]
        target_r = sr[q, n - 2]
    else:
        target_d = -sd[q, 0]
        target_r = -sr[q, 0]
    dir_d = target_d - sd[q, n - 1]
    dir_r = target_r - sr[q, n - 1]
    best = 2.0
    g0 = (d0 - target_d) * dir_d
    g1 = (d1 - target_d) * dir_d
    if g1 >= 0.0:
        best = g0 / (g0 - g1) if g0 < 0.0 else 0.0
    g0 = (r0 - target_r) * dir_r
    g1 = (r1 - target_r) * dir_r
    if g1 >= 0.0:
        phi = g0 / (g0 - g1) if g0 < 0.0 else 0.0
        best = min(best, phi)
    return best if best <= 1.0 else -1.0


@njit(cache=True, nogil=True, error_model="numpy")
def _masing_kernel(masses, k, r_u, alpha, C, acc, dt_in, n_sub, out_every, want_energy):
    n = masses.size
    n_in = acc.size
    n_out = (n_in - 1) // out_every
    drift_out = np.zeros((n_out, n))
    r_out = np.zeros((n_out, n))
    energy = np.zeros((n_out if want_energy else 0, 4))
    minv = 1.0 / masses
    z = np.zeros(n)
    v = np.zeros(n)
    r = np.zeros(n)
    z1 = np.zeros(n)
    v1 = np.zeros(n)
    r1 = np.zeros(n)
    sd = np.zeros((n, MAX_STACK))
    sr = np.zeros((n, MAX_STACK))
    depth = np.zeros(n, dtype=np.int64)
    rstar = np.zeros(n)
    onb = np.zeros(n, dtype=np.bool_)
    work = np.zeros((15, n))
    w_in = 0.0
    w_damp = 0.0
    w_hyst = 0.0
    h = dt_in / n_sub
    kout = 0
    for i in range(n_in - 1):
        du = (acc[i + 1] - acc[i]) / dt_in
        for j in range(n_sub):
            u_start = acc[i] + du * (j * h)
            remaining = h
            t_loc = 0.0
            for _ in range(4 * n + 2):
                if remaining <= 0.0:
                    break
                u0 = u_start + du * t_loc
                _rk4(z, v, r, remaining, u0, du, minv, C, k, r_u, alpha, rstar, onb,
                     z1, v1, r1, work)
                # earliest branch closure among the stories
                phi = 2.0
                hit = -1
                for q in range(n):
                    d0 = z[q] - (z[q - 1] if q > 0 else 0.0)
                    dn = z1[q] - (z1[q - 1] if q > 0 else 0.0)
                    f = _crossing_fraction(sd, sr, q, depth[q], d0, r[q], dn, r1[q])
                    if f >= 0.0 and f < phi:
                        phi = f
                        hit = q
                h_seg = remaining
                if hit >= 0 and phi < 1.0:
                    h_seg = phi * remaining
                    _rk4(z, v, r, h_seg, u0, du, minv, C, k, r_u, alpha, rstar, onb,
                         z1, v1, r1, work)
                if want_energy:
                    u1 = u0 + du * h_seg
                    p0 = 0.0
                    p1 = 0.0
                    for q in range(n):
                        vr0 = v[q] - (v[q - 1] if q > 0 else 0.0)
                        vr1 = v1[q] - (v1[q - 1] if q > 0 else 0.0)
                        w_in += -masses[q] * 0.5 * (u0 * v[q] + u1 * v1[q]) * h_seg
                        w_hyst += 0.5 * (r[q] * vr0 + r1[q] * vr1) * h_seg
                        for s in range(n):
                            p0 += v[q] * C[q, s] * v[s]
                            p1 += v1[q] * C[q, s] * v1[s]
                    w_damp += 0.5 * (p0 + p1) * h_seg
                for q in range(n):
                    vr0 = v[q] - (v[q - 1] if q > 0 else 0.0)
                    vr1 = v1[q] - (v1[q - 1] if q > 0 else 0.0)
                    d = z1[q] - (z1[q - 1] if q > 0 else 0.0)
                    if q == hit and depth[q] > 0:
                        depth[q] = depth[q] - 2 if depth[q] >= 2 else 0
                    depth[q] = _update_stack(sd, sr, q, depth[q], d, r1[q], vr0 * vr1 < 0.0)
                    if depth[q] > 0:
                        onb[q] = True
                        rstar[q] = sr[q, depth[q] - 1]
                    else:
                        onb[q] = False
                        rstar[q] = 0.0
                for q in range(n):
                    z[q] = z1[q]
                    v[q] = v1[q]
                    r[q] = r1[q]
                t_loc += h_seg
                remaining -= h_seg
        for q in range(n):
            if not (np.isfinite(z[q]) and np.isfinite(v[q]) and np.isfinite(r[q])):
                return drift_out, r_out, energy, i + 1
        if (i + 1) % out_every == 0:
            for q in range(n):
                drift_out[kout, q] = z[q] - (z[q - 1] if q > 0 else 0.0)
                r_out[kout, q] = r[q]
            if want_energy:
                ke = 0.0
                for q in range(n):
                    ke += 0.5 * masses[q] * v[q] * v[q]
                energy[kout, 0] = w_in
                energy[kout, 1] = ke
                energy[kout, 2] = w_damp
                energy[kout, 3] = w_hyst
            kout += 1
    return drift_out, r_out, energy, -1


def simulate_masing(
    params: MasingParams,
    motion: GroundMotion,
    out_dt: float | None = None,
    n_sub: int = 20,
    return_force: bool = False,
    return_energy: bool = False,
):
    """Inter-story drifts of the Masing shear building from rest.

    Returns an ``(N, n_stories)`` array of drifts ``(z1, z2 - z1, ...)`` at the
    output times; optionally also story forces and an energy ledger with
    columns ``(input, kinetic, viscous, hysteretic work)``.
    """
    every = motion.steps_per_output(out_dt)
    _, _, C = params.matrices()
    drift, r, energy, status = _masing_kernel(
        params.masses, params.k, params.r_u, params.alpha, np.ascontiguousarray(C),
        np.ascontiguousarray(motion.accel), float(motion.dt), int(n_sub), int(every),
        bool(return_energy),
    )
    if status >= 0:
        raise SimulationDivergence(status // every)
    out = [drift]
    if return_force:
        out.append(r)
    if return_energy:
        out.append(energy)
    return out[0] if len(out) == 1 else tuple(out)
