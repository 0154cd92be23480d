"""Rare-event probability curves, evidence and posterior model probabilities.

A finished run gives the probability of reaching ``D(eps)`` for every
tolerance it visited. Dividing by the volume of the norm ball of radius
``eps`` in ``N * No`` dimensions approximates the evidence of the model class;
at a tolerance shared by all classes the volume cancels in their posterior
probabilities. Everything is kept in log space because the ball dimension
runs into the thousands.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from ._validation import check_norm

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class EvidenceCurve:
    """Points ``(epsilon, prob, log_evidence)`` sorted by descending ``epsilon``."""

    epsilon: np.ndarray
    prob: np.ndarray
    log_evidence: np.ndarray

    def __len__(self):
        return self.epsilon.size

    def rows(self):
        return list(zip(self.epsilon.tolist(), self.prob.tolist(), self.log_evidence.tolist()))


def log_ball_volume(epsilon: float, dim: int, norm: str = "L2") -> float:
    """Log volume of the radius-``epsilon`` ball in ``dim`` dimensions."""
    check_norm(norm)
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if int(dim) != dim or dim < 1:
        raise ValueError("dim must be a positive integer")
    if norm == "Linf":
        return float(dim * np.log(2.0 * epsilon))
    return float(0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim + 1.0) + dim * np.log(epsilon))


def ball_volume(epsilon: float, dim: int, norm: str = "L2") -> float:
    """Volume of the norm ball (may overflow or underflow for large ``dim``;
    use :func:`log_ball_volume` there)."""
    return float(np.exp(log_ball_volume(epsilon, dim, norm)))


def prob_curve(run, log_volume: bool = True) -> EvidenceCurve:
    """Probability of reaching ``D(eps)`` at every tolerance visited by ``run``.

    Level ``j`` sample ``i`` (1-based, descending discrepancy) maps to
    ``p0**(j-1) * (N_t - i) / N_t``. Intermediate levels contribute the part
    of their range above their own tolerance, so the curve stays monotone;
    the final level contributes all samples. Repeated tolerances keep the
    smaller probability.
    """
    if not run.levels:
        raise ValueError("run has no levels")
    cfg = run.config
    p0, n = cfg.p0, cfg.n_per_level
    keep_upper = int(round(n * (1.0 - p0)))
    eps_parts, logp_parts = [], []
    last = len(run.levels) - 1
    for j, lv in enumerate(run.levels):
        stop = n - 1 if j == last else keep_upper
        i = np.arange(1, stop + 1)
        eps_parts.append(lv.discrepancy[:stop])
        logp_parts.append(j * np.log(p0) + np.log((n - i) / n))
    eps = np.concatenate(eps_parts)
    logp = np.concatenate(logp_parts)
    order = np.lexsort((logp, -eps))
    eps, logp = eps[order], logp[order]
    # collapse duplicated tolerances, keeping the smallest probability (the
    # first of each run after the sort)
    first_of_run = np.r_[True, eps[1:] != eps[:-1]]
    eps, logp = eps[first_of_run], logp[first_of_run]
    logp = np.minimum.accumulate(logp)
    if log_volume and run.data_size > 0:
        with np.errstate(divide="ignore"):
            lv = np.array([log_ball_volume(e, run.data_size, run.norm) if e > 0 else np.inf
                           for e in eps])
        log_ev = logp - lv
    else:
        log_ev = np.full(eps.size, np.nan)
    return EvidenceCurve(eps, np.exp(logp), log_ev)


def log_prob_at(run, epsilon: float) -> float:
    """Log probability of ``D(epsilon)`` from the level bracketing ``epsilon``.

    With level ``i`` the first whose tolerance is at or below ``epsilon``, the
    estimate is ``p0**(i-1) * P_i`` where ``P_i`` is the fraction of level-``i``
    samples inside ``D(epsilon)`` (boundary inclusive).
    """
    if not run.levels:
        raise ValueError("run has no levels")
    i = run.level_for(epsilon)
    lv = run.levels[i]
    frac = np.count_nonzero(lv.discrepancy <= epsilon) / lv.n_samples
    if frac == 0:
        raise ValueError(
            f"epsilon={epsilon:g} lies below the smallest attained discrepancy "
            f"{lv.discrepancy.min():g}; refusing to extrapolate"
        )
    return float(i * np.log(run.config.p0) + np.log(frac))


def evidence_at(run, epsilon: float, norm_dim: Optional[int] = None) -> float:
    """Log evidence ``ln[P(D(eps)) / V(eps)]`` of the run's model class."""
    dim = run.data_size if norm_dim is None else norm_dim
    return log_prob_at(run, epsilon) - log_ball_volume(epsilon, dim, run.norm)


def model_posteriors(log_evidences, log_priors=None) -> np.ndarray:
    """Posterior model probabilities from log evidences and log prior weights."""
    le = np.asarray(log_evidences, dtype=float)
    lp = np.zeros_like(le) if log_priors is None else np.asarray(log_priors, dtype=float)
    if le.shape != lp.shape or le.ndim != 1 or le.size == 0:
        raise ValueError("log_evidences and log_priors must be equal-length 1-D vectors")
    if np.any(np.isnan(le)) or np.any(np.isnan(lp)) or np.any(le == np.inf):
        raise ValueError("log evidences must be finite or -inf")
    s = le + lp
    if np.all(s == -np.inf):
        raise ValueError("every model has zero posterior weight")
    w = np.exp(s - s.max())
    return w / w.sum()


def posterior_vs_eps(runs: Sequence, eps_grid, log_priors=None):
    """Posterior model probabilities at each tolerance of ``eps_grid``.

    Returns ``(eps, probs)`` with ``probs`` of shape ``(len(eps), len(runs))``;
    grid points not covered by every run are dropped with a warning.
    """
    _check_common_norm(runs)
    eps_out, rows = [], []
    for eps in np.asarray(eps_grid, dtype=float):
        try:
            # the ball volume is common to all models and cancels
            le = [log_prob_at(r, eps) for r in runs]
        except ValueError as exc:
            warnings.warn(f"epsilon={eps:g} skipped: {exc}")
            continue
        eps_out.append(eps)
        rows.append(model_posteriors(le, log_priors))
    return np.array(eps_out), np.array(rows).reshape(len(rows), len(runs))


def _check_common_norm(runs):
    norms = {r.norm for r in runs}
    if len(norms) > 1:
        raise ValueError(f"cannot compare runs with different norms: {sorted(norms)}")


@dataclass
class ModelComparisonReport:
    """Per-model summary at each model's final tolerance plus probability curves."""

    names: list
    final_tolerance: np.ndarray
    n_levels: np.ndarray
    log_evidence: np.ndarray
    posterior: np.ndarray
    eps_grid: np.ndarray = field(default_factory=lambda: np.empty(0))
    curve: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @classmethod
    def from_runs(cls, runs: Sequence, log_priors=None, eps_grid=None) -> "ModelComparisonReport":
        if not runs:
            raise ValueError("need at least one run")
        _check_common_norm(runs)
        dims = {r.data_size for r in runs}
        if len(dims) > 1:
            raise ValueError("runs were fitted to data of different sizes")
        le = np.array([evidence_at(r, r.final_tolerance) for r in runs])
        post = model_posteriors(le, log_priors)
        grid = np.empty(0)
        curve = np.empty((0, len(runs)))
        if eps_grid is not None:
            grid, curve = posterior_vs_eps(runs, eps_grid, log_priors)
        return cls(
            names=[r.model for r in runs],
            final_tolerance=np.array([r.final_tolerance for r in runs]),
            n_levels=np.array([r.n_levels for r in runs]),
            log_evidence=le,
            posterior=post,
            eps_grid=grid,
            curve=curve,
        )

    def winner(self) -> str:
        return self.names[int(np.argmax(self.posterior))]


def default_eps_grid(runs: Sequence, n: int = 20) -> np.ndarray:
    """Log-spaced descending grid spanning the range every run covers."""
    hi = min(r.levels[0].discrepancy[0] for r in runs)
    lo = max(r.levels[-1].discrepancy[-2] for r in runs)
    if not hi > lo:
        return np.array([hi])
    return np.geomspace(hi, lo, n)
