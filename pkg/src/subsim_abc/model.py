"""Hierarchical stochastic model classes, priors and the data-approximating region.

A model class couples a deterministic forward simulator ``g(theta)`` with a
prior over ``theta`` and an output prediction-error model. One joint draw
``(theta, x, y)`` from the hierarchical prior is a :class:`HierarchicalSample`;
its distance to the observed data under the chosen norm is cached on it.

All output vectors are stacked channel-major per time step:
``[y_1^1 .. y_1^No, y_2^1 .. y_2^No, ...]``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ._validation import as_finite_vector, check_norm

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class SimulationDivergence(RuntimeError):
    """Raised when a forward simulation produces a non-finite state."""

    def __init__(self, step: int, message: str = ""):
        self.step = int(step)
        super().__init__(message or f"simulation diverged at time index {self.step}")


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


class _Prior:
    """Product of independent one-dimensional marginals."""

    dim: int

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def logpdf_components(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def std(self) -> np.ndarray:
        raise NotImplementedError

    def marginals(self) -> list:
        """Frozen ``scipy.stats`` marginals, used for goodness-of-fit checks."""
        raise NotImplementedError

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(
                f"parameter vector has shape {theta.shape}, prior expects ({self.dim},)"
            )
        return float(np.sum(self.logpdf_components(theta)))


@dataclass(frozen=True, eq=False)
class UniformBox(_Prior):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = as_finite_vector(self.lower, "lower")
        hi = as_finite_vector(self.upper, "upper")
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds must have the same length")
        if np.any(hi <= lo):
            raise ValueError("UniformBox requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def sample(self, rng):
        return rng.uniform(self.lower, self.upper)

    def logpdf_components(self, theta):
        inside = (theta >= self.lower) & (theta <= self.upper)
        return np.where(inside, -np.log(self.upper - self.lower), -np.inf)

    def std(self):
        return (self.upper - self.lower) / np.sqrt(12.0)

    def marginals(self):
        from scipy import stats

        return [stats.uniform(lo, hi - lo) for lo, hi in zip(self.lower, self.upper)]


@dataclass(frozen=True, eq=False)
class LogNormalProduct(_Prior):
    log_mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        mu = as_finite_vector(self.log_mean, "log_mean")
        s = as_finite_vector(self.log_std, "log_std")
        if mu.shape != s.shape:
            raise ValueError("log_mean and log_std must have the same length")
        if np.any(s <= 0):
            raise ValueError("LogNormalProduct requires log_std > 0")
        object.__setattr__(self, "log_mean", mu)
        object.__setattr__(self, "log_std", s)

    @property
    def dim(self) -> int:
        return self.log_mean.size

    def sample(self, rng):
        return np.exp(rng.normal(self.log_mean, self.log_std))

    def logpdf_components(self, theta):
        out = np.full(theta.shape, -np.inf)
        pos = theta > 0
        lx = np.log(theta[pos])
        s = self.log_std[pos]
        out[pos] = -lx - np.log(s) - _LOG_SQRT_2PI - 0.5 * ((lx - self.log_mean[pos]) / s) ** 2
        return out

    def std(self):
        s2 = self.log_std**2
        return np.sqrt(np.expm1(s2) * np.exp(2.0 * self.log_mean + s2))

    def marginals(self):
        from scipy import stats

        return [stats.lognorm(s, scale=np.exp(m)) for m, s in zip(self.log_mean, self.log_std)]


@dataclass(frozen=True, eq=False)
class NormalProduct(_Prior):
    """Independent Gaussian marginals (used by the conjugate toy model)."""

    mean: np.ndarray
    std_dev: np.ndarray

    def __post_init__(self):
        mu = as_finite_vector(self.mean, "mean")
        s = as_finite_vector(self.std_dev, "std_dev")
        if mu.shape != s.shape:
            raise ValueError("mean and std_dev must have the same length")
        if np.any(s <= 0):
            raise ValueError("NormalProduct requires std_dev > 0")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "std_dev", s)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng):
        return rng.normal(self.mean, self.std_dev)

    def logpdf_components(self, theta):
        z = (theta - self.mean) / self.std_dev
        return -np.log(self.std_dev) - _LOG_SQRT_2PI - 0.5 * z * z

    def std(self):
        return self.std_dev.copy()

    def marginals(self):
        from scipy import stats

        return [stats.norm(m, s) for m, s in zip(self.mean, self.std_dev)]


@dataclass(frozen=True, eq=False)
class Composite(_Prior):
    """Concatenation of priors acting on consecutive parameter slices."""

    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("Composite prior needs at least one part")
        for p in parts:
            if not isinstance(p, _Prior):
                raise TypeError(f"not a prior: {p!r}")
        object.__setattr__(self, "parts", parts)
        edges = np.cumsum([0] + [p.dim for p in parts])
        object.__setattr__(self, "_edges", edges)

    @property
    def dim(self) -> int:
        return int(self._edges[-1])

    def _slices(self):
        return [slice(a, b) for a, b in zip(self._edges[:-1], self._edges[1:])]

    def sample(self, rng):
        return np.concatenate([p.sample(rng) for p in self.parts])

    def logpdf_components(self, theta):
        return np.concatenate(
            [p.logpdf_components(theta[s]) for p, s in zip(self.parts, self._slices())]
        )

    def std(self):
        return np.concatenate([p.std() for p in self.parts])

    def marginals(self):
        return [m for p in self.parts for m in p.marginals()]


PriorSpec = Union[UniformBox, LogNormalProduct, NormalProduct, Composite]


def prior_sample(prior: PriorSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw one parameter vector from ``prior``."""
    return prior.sample(rng)


def prior_logpdf(prior: PriorSpec, theta) -> float:
    """Log prior density; ``-inf`` outside the support."""
    return prior.logpdf(theta)


# ---------------------------------------------------------------------------
# data and regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Measured input/output record.

    ``observed`` holds ``N * n_channels`` values stacked channel-major per step.
    ``input`` is the driving :class:`~subsim_abc.dynamics.GroundMotion` or
    ``None`` for models without an external input.
    """

    observed: np.ndarray
    n_channels: int = 1
    input: object = None

    def __post_init__(self):
        z = as_finite_vector(self.observed, "observed")
        if self.n_channels < 1 or z.size % self.n_channels:
            raise ValueError("observed length must be a positive multiple of n_channels")
        if z.size == 0:
            raise ValueError("observed must contain at least one time step")
        object.__setattr__(self, "observed", z)

    @property
    def n_steps(self) -> int:
        return self.observed.size // self.n_channels

    @property
    def size(self) -> int:
        return self.observed.size

    def digest(self) -> str:
        """Content hash over observed values, input values and sampling interval."""
        h = hashlib.sha256()
        h.update(np.int64(self.n_channels).tobytes())
        h.update(np.ascontiguousarray(self.observed, dtype="<f8").tobytes())
        if self.input is not None:
            h.update(np.float64(self.input.dt).tobytes())
            h.update(np.ascontiguousarray(self.input.accel, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class DataRegion:
    norm: str
    epsilon: float

    def __post_init__(self):
        check_norm(self.norm)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


def discrepancy(y, z_hat, norm: str = "L2") -> float:
    """Distance ``||y - z_hat||`` under the L2 or Linf norm."""
    y = np.asarray(y, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    if y.shape != z_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {z_hat.shape}")
    check_norm(norm)
    r = y - z_hat
    if norm == "L2":
        return float(np.sqrt(np.dot(r, r)))
    return float(np.max(np.abs(r))) if r.size else 0.0


def in_region(y, data: Dataset, region: DataRegion) -> bool:
    # inclusive boundary
    return discrepancy(y, data.observed, region.norm) <= region.epsilon


# ---------------------------------------------------------------------------
# model classes and forward sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedSigma:
    """Output prediction error with a known standard deviation."""

    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class LaplaceMarginalized:
    """Output error variance eliminated through its conditional MLE."""


NuisanceMode = Union[FixedSigma, LaplaceMarginalized]


@dataclass(frozen=True)
class StateSpaceForward:
    """Discrete-time state-space simulator ``x_n = f(x_{n-1}, u_{n-1}, theta)``,
    ``g_n = h(x_n, u_n, theta)``.

    Needed only when the model class carries state noise; ``f`` and ``h`` take
    ``(x, u, theta)`` with ``u`` the scalar input sample (0 when absent).
    """

    f: Callable
    h: Callable
    x0: np.ndarray
    n_steps: int

    def deterministic(self, theta, u=None):
        return self.propagate(theta, u, None)[1]

    def propagate(self, theta, u, state_noise):
        x = np.array(self.x0, dtype=float)
        states, outputs = [], []
        for n in range(1, self.n_steps + 1):
            u_prev = 0.0 if u is None else u[n - 1]
            u_n = 0.0 if u is None else u[n]
            x = np.atleast_1d(self.f(x, u_prev, theta)).astype(float)
            if state_noise is not None:
                x = x + state_noise[n - 1]
            if not np.all(np.isfinite(x)):
                raise SimulationDivergence(n)
            states.append(x)
            outputs.append(np.atleast_1d(self.h(x, u_n, theta)))
        return np.concatenate(states), np.concatenate(outputs)


@dataclass(frozen=True, eq=False)
class ModelClassSpec:
    """A forward simulator plus a prior; the unit of model comparison.

    Parameters
    ----------
    name : str
    prior : PriorSpec
    forward : callable or StateSpaceForward
        ``forward(theta, data)`` returns the deterministic response ``g(theta)``
        as a flat channel-major vector of length ``data.size``.
    nuisance : FixedSigma or LaplaceMarginalized
    state_noise : array_like, optional
        Diagonal of a time-invariant state-noise covariance. Requires a
        :class:`StateSpaceForward` and ``FixedSigma`` output noise.
    chain_noise : bool
        When True the standard-normal innovations behind the output noise are
        carried on each sample and moved by the MCMC sampler like parameters;
        otherwise they are redrawn with every forward draw.
    param_names : sequence of str, optional
    """

    name: str
    prior: PriorSpec
    forward: Callable
    nuisance: NuisanceMode = field(default_factory=LaplaceMarginalized)
    state_noise: Optional[np.ndarray] = None
    chain_noise: bool = False
    param_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        if self.state_noise is not None:
            if isinstance(self.nuisance, LaplaceMarginalized):
                raise ValueError(
                    "state noise must be absent when the output error variance is "
                    "Laplace-marginalized"
                )
            if not isinstance(self.forward, StateSpaceForward):
                raise ValueError("state noise requires a StateSpaceForward simulator")
            q = as_finite_vector(self.state_noise, "state_noise")
            if np.any(q < 0):
                raise ValueError("state-noise variances must be >= 0")
            object.__setattr__(self, "state_noise", q)
        if self.chain_noise and self.state_noise is not None:
            raise ValueError("chain_noise is not supported together with state noise")
        names = self.param_names
        if names is None:
            names = [f"theta{k}" for k in range(self.prior.dim)]
        if len(names) != self.prior.dim:
            raise ValueError("param_names length does not match the prior dimension")
        object.__setattr__(self, "param_names", tuple(names))

    @property
    def n_params(self) -> int:
        return self.prior.dim

    def deterministic(self, theta, data: Dataset) -> np.ndarray:
        if isinstance(self.forward, StateSpaceForward):
            u = None if data.input is None else data.input.accel
            g = self.forward.deterministic(theta, u)
        else:
            g = self.forward(np.asarray(theta, dtype=float), data)
        g = np.asarray(g, dtype=float)
        if g.shape != (data.size,):
            raise ValueError(
                f"forward model returned shape {g.shape}, dataset expects ({data.size},)"
            )
        if not np.all(np.isfinite(g)):
            bad = int(np.argmax(~np.isfinite(g)))
            raise SimulationDivergence(bad // data.n_channels + 1)
        return g


@dataclass(eq=False)
class HierarchicalSample:
    """One joint draw ``(theta, x, y)`` with its cached discrepancy.

    ``response`` keeps the deterministic part ``g(theta)`` so a sampler can
    move the noise innovations without re-running the simulator.
    """

    theta: np.ndarray
    output: np.ndarray
    discrepancy: float
    sigma2: float = np.nan
    latent: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None
    response: Optional[np.ndarray] = None


def forward_draw(
    model: ModelClassSpec,
    theta,
    data: Dataset,
    rng: np.random.Generator,
    norm: str = "L2",
    latent=None,
) -> HierarchicalSample:
    """Draw ``(x, y)`` from the hierarchical prior at fixed ``theta``.

    ``latent`` supplies the standard-normal output innovations explicitly
    (zeros force ``v = 0``); when omitted they are drawn from ``rng``.
    """
    theta = np.asarray(theta, dtype=float)
    states = None
    if model.state_noise is not None:
        q = np.sqrt(model.state_noise)
        n_s = q.size
        w = rng.standard_normal((data.n_steps, n_s)) * q
        u = None if data.input is None else data.input.accel
        states, g = model.forward.propagate(theta, u, w)
        g = np.asarray(g, dtype=float)
    else:
        g = model.deterministic(theta, data)
    return draw_from_response(model, theta, g, data, rng, norm, latent, states)


def draw_from_response(model, theta, g, data, rng, norm="L2", latent=None, states=None):
    """Add output prediction error to a known response ``g`` (see :func:`forward_draw`)."""
    from .nuisance import sigma2_mle

    if latent is None:
        latent = rng.standard_normal(data.size)
    else:
        latent = np.asarray(latent, dtype=float)
        if latent.shape != (data.size,):
            raise ValueError("latent innovations must match the data length")

    if isinstance(model.nuisance, FixedSigma):
        s2 = model.nuisance.sigma**2
    else:
        s2 = sigma2_mle(data.observed, g)
    y = g + np.sqrt(s2) * latent if s2 > 0 else g.copy()
    return HierarchicalSample(
        theta=theta,
        output=y,
        discrepancy=discrepancy(y, data.observed, norm),
        sigma2=s2,
        latent=latent if model.chain_noise else None,
        states=states,
        response=g,
    )
