"""Laplace elimination of the isotropic output-error variance.

For fixed structural parameters the Gaussian likelihood in the error variance
``s2`` peaks at the mean squared prediction error. Expanding the log-likelihood
to second order there gives an O(1/N) approximation of the marginal likelihood
whose dependence on the variance prior drops out of the structural posterior.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_same_length

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NuisanceReport:
    sigma2_mle: float
    hessian: float
    laplace_log_marginal: float


def sigma2_mle(z_hat, g) -> float:
    """Maximum-likelihood error variance ``||z_hat - g||^2 / (N * No)``."""
    z_hat = np.asarray(z_hat, dtype=float)
    g = np.asarray(g, dtype=float)
    check_same_length(z_hat, g, "observed and predicted outputs")
    if z_hat.size == 0:
        raise ValueError("need at least one observation")
    r = z_hat - g
    return float(np.dot(r, r) / r.size)


def hessian_nuisance(sigma2: float, n_steps: int, n_channels: int = 1) -> float:
    """Negative second derivative of the log-likelihood in ``sigma2`` at the MLE."""
    if not sigma2 > 0:
        raise ValueError("Hessian is undefined for a zero-variance (perfect) fit")
    return 0.5 * n_steps * n_channels / sigma2**2


def gaussian_loglik(z_hat, g, sigma2: float) -> float:
    """Isotropic Gaussian log-likelihood ``ln p(z_hat | g, sigma2)``."""
    r = np.asarray(z_hat, dtype=float) - np.asarray(g, dtype=float)
    n = r.size
    return float(-0.5 * n * (_LOG_2PI + np.log(sigma2)) - 0.5 * np.dot(r, r) / sigma2)


def laplace_log_marginal(z_hat, g, prior_at_mle: float = 1.0) -> float:
    """Log of the Laplace approximation to the variance-marginalized likelihood.

    Parameters
    ----------
    z_hat, g : array_like
        Observed data and deterministic model response, same length.
    prior_at_mle : float
        Prior density of the error variance evaluated at its MLE.
    """
    return nuisance_report(z_hat, g, prior_at_mle).laplace_log_marginal


def nuisance_report(z_hat, g, prior_at_mle: float = 1.0) -> NuisanceReport:
    s2 = sigma2_mle(z_hat, g)
    if s2 == 0:
        raise ValueError("zero MLE variance: Laplace approximation is degenerate")
    n = np.asarray(z_hat).size
    h = hessian_nuisance(s2, n, 1)
    # likelihood at the MLE: residual term equals n/2 exactly
    loglik = -0.5 * n * (_LOG_2PI + np.log(s2)) - 0.5 * n
    val = 0.5 * _LOG_2PI - 0.5 * np.log(h) + np.log(prior_at_mle) + loglik
    return NuisanceReport(sigma2_mle=s2, hessian=h, laplace_log_marginal=float(val))


def augmented_output_draw(g, z_hat, rng: np.random.Generator, latent=None) -> np.ndarray:
    """Sample ``y = g + v`` with ``v ~ N(0, sigma2_mle(z_hat, g) I)``.

    ``latent`` overrides the standard-normal innovations (zeros give ``y = g``).
    A perfect fit yields ``y = g`` exactly.
    """
    g = np.asarray(g, dtype=float)
    if g.size == 0:
        raise ValueError("empty model output")
    s2 = sigma2_mle(z_hat, g)
    if s2 == 0:
        return g.copy()
    if latent is None:
        latent = rng.standard_normal(g.size)
    return g + np.sqrt(s2) * np.asarray(latent, dtype=float)
