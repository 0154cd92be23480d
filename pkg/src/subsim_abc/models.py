"""Built-in model classes.

* ``toy``: linear-Gaussian map ``y_n = h_n theta + v_n`` with a Gaussian
  prior; posterior and evidence are available in closed form.
* bilinear SDOF oscillator classes (linear, elastoplastic, bilinear).
* three-story Masing shear-building classes (shared or per-story exponent,
  with or without Rayleigh damping).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import BilinearParams, MasingParams, simulate_bilinear, simulate_masing
from .model import (
    Composite,
    Dataset,
    FixedSigma,
    LaplaceMarginalized,
    LogNormalProduct,
    ModelClassSpec,
    NormalProduct,
    UniformBox,
)

# ---------------------------------------------------------------------------
# conjugate toy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _LinearMap:
    h: np.ndarray

    def __call__(self, theta, data):
        if self.h.size != data.size:
            raise ValueError("design vector length does not match the data")
        return self.h * theta[0]


def toy_model(
    prior_mean: float = 0.0,
    prior_sd: float = 1.0,
    noise_sd: float = 1.0,
    h=None,
    n: int = 1,
    name: str = "toy",
) -> ModelClassSpec:
    """1-D linear-Gaussian model class.

    The noise innovations ride along in the MMA chain state (``chain_noise``)
    so small tolerances stay reachable.
    """
    h = np.ones(n) if h is None else np.asarray(h, dtype=float).reshape(-1)
    return ModelClassSpec(
        name=name,
        prior=NormalProduct([prior_mean], [prior_sd]),
        forward=_LinearMap(h),
        nuisance=FixedSigma(noise_sd),
        chain_noise=True,
        param_names=("theta",),
    )


def _toy_moments(model: ModelClassSpec):
    mu0 = float(model.prior.mean[0])
    tau = float(model.prior.std_dev[0])
    sigma = float(model.nuisance.sigma)
    return mu0, tau, sigma, model.forward.h


def toy_posterior(model: ModelClassSpec, z_hat) -> tuple:
    """Exact posterior mean and standard deviation of ``theta``."""
    mu0, tau, sigma, h = _toy_moments(model)
    z = np.asarray(z_hat, dtype=float)
    prec = 1.0 / tau**2 + np.dot(h, h) / sigma**2
    mean = (mu0 / tau**2 + np.dot(h, z) / sigma**2) / prec
    return float(mean), float(np.sqrt(1.0 / prec))


def toy_log_evidence(model: ModelClassSpec, z_hat) -> float:
    """Log marginal likelihood ``ln N(z_hat; h mu0, sigma^2 I + tau^2 h h^T)``."""
    mu0, tau, sigma, h = _toy_moments(model)
    z = np.asarray(z_hat, dtype=float)
    cov = sigma**2 * np.eye(h.size) + tau**2 * np.outer(h, h)
    r = z - h * mu0
    sign, logdet = np.linalg.slogdet(cov)
    return float(-0.5 * (h.size * np.log(2 * np.pi) + logdet + r @ np.linalg.solve(cov, r)))


def toy_data(model: ModelClassSpec, theta: float, seed: int) -> Dataset:
    """Synthetic observation of the toy model at ``theta``."""
    _, _, sigma, h = _toy_moments(model)
    rng = np.random.default_rng(seed)
    return Dataset(h * theta + sigma * rng.standard_normal(h.size))


# ---------------------------------------------------------------------------
# bilinear oscillator classes
# ---------------------------------------------------------------------------

BILINEAR_TRUE = {"k1": 1.0, "k2": 0.1, "c": 0.02, "z_y": 0.02, "m": 1.0}
BILINEAR_PRIOR_UPPER = {"k1": 2.0, "k2": 0.5, "c": 0.5, "z_y": 0.1}
# free parameters per class; the rest are tied as noted in _bilinear_params
BILINEAR_CLASSES = {"M1": ("k1", "c"), "M2": ("k1", "z_y"), "M3": ("k1", "k2", "z_y")}


@dataclass(frozen=True)
class BilinearForward:
    """Displacement response of a bilinear oscillator class.

    ``free`` names the sampled parameters; ``fixed`` supplies the rest.
    A class without ``z_y`` among free or fixed values is linear (``k2 = k1``).
    """

    free: tuple
    fixed: tuple = ()
    out_dt: Optional[float] = None
    n_sub: int = 20

    def params(self, theta) -> BilinearParams:
        v = dict(self.fixed)
        v.update(zip(self.free, (float(t) for t in theta)))
        if "z_y" not in v:
            # linear: the plastic element carries no stiffness
            v["k2"] = v["k1"]
            v["z_y"] = 1.0
        v.setdefault("k2", 0.0)
        v.setdefault("c", 0.0)
        v.setdefault("m", 1.0)
        return BilinearParams(k1=v["k1"], k2=v["k2"], z_y=v["z_y"], c=v["c"], m=v["m"])

    def __call__(self, theta, data):
        try:
            p = self.params(theta)
        except ValueError as exc:
            raise FloatingPointError(str(exc)) from exc
        return simulate_bilinear(p, data.input, self.out_dt, self.n_sub)


def bilinear_model(name: str, free, fixed=None, upper=None, n_sub: int = 20) -> ModelClassSpec:
    """Bilinear oscillator class with independent uniform priors on ``[0, upper]``."""
    upper = dict(BILINEAR_PRIOR_UPPER if upper is None else upper)
    free = tuple(free)
    fixed = tuple(sorted((fixed or {"m": 1.0}).items()))
    prior = UniformBox([0.0] * len(free), [upper[k] for k in free])
    return ModelClassSpec(
        name=name,
        prior=prior,
        forward=BilinearForward(free, fixed, None, n_sub),
        nuisance=LaplaceMarginalized(),
        param_names=free,
    )


def example1_models(n_sub: int = 20) -> dict:
    """Linear (M1), elastoplastic (M2) and bilinear (M3) oscillator classes."""
    return {name: bilinear_model(name, free, n_sub=n_sub) for name, free in BILINEAR_CLASSES.items()}


# ---------------------------------------------------------------------------
# Masing shear-building classes
# ---------------------------------------------------------------------------

N_STORIES = 3
MASING_MASS = 1.25e5
MASING_TRUE = {
    "k": 2.5e8,
    "r_u": 1.75e6,
    "alpha": 4.0,
    "c_M": 0.293,
    "c_K": 2.64e-4,
}
MASING_PRIOR = {
    "k": (np.log(2.5e8), 0.5),
    "r_u": (np.log(2.5e6), 0.5),
    "alpha": (np.log(4.0), 0.5),
    "c_M": 1.5,
    "c_K": 1.5e-3,
}
# (per-story exponent, Rayleigh damping)
MASING_CLASSES = {"M1": (False, False), "M2": (False, True), "M3": (True, False), "M4": (True, True)}


@dataclass(frozen=True)
class MasingForward:
    per_story_alpha: bool
    damped: bool
    masses: tuple = (MASING_MASS,) * N_STORIES
    out_dt: Optional[float] = None
    n_sub: int = 20

    def params(self, theta) -> MasingParams:
        n = len(self.masses)
        theta = np.asarray(theta, dtype=float)
        k = theta[:n]
        r_u = theta[n : 2 * n]
        pos = 2 * n
        if self.per_story_alpha:
            alpha = theta[pos : pos + n]
            pos += n
        else:
            alpha = np.full(n, theta[pos])
            pos += 1
        c_M, c_K = (theta[pos], theta[pos + 1]) if self.damped else (0.0, 0.0)
        return MasingParams(self.masses, k, r_u, alpha, c_M, c_K)

    def __call__(self, theta, data):
        try:
            p = self.params(theta)
        except ValueError as exc:
            raise FloatingPointError(str(exc)) from exc
        return simulate_masing(p, data.input, self.out_dt, self.n_sub).reshape(-1)


def masing_param_names(per_story_alpha: bool, damped: bool, n: int = N_STORIES) -> tuple:
    names = [f"k{i + 1}" for i in range(n)] + [f"r_u{i + 1}" for i in range(n)]
    names += [f"alpha{i + 1}" for i in range(n)] if per_story_alpha else ["alpha"]
    if damped:
        names += ["c_M", "c_K"]
    return tuple(names)


def masing_model(name: str, per_story_alpha: bool, damped: bool, n_sub: int = 20) -> ModelClassSpec:
    n = N_STORIES
    n_alpha = n if per_story_alpha else 1
    mu = [MASING_PRIOR["k"][0]] * n + [MASING_PRIOR["r_u"][0]] * n
    mu += [MASING_PRIOR["alpha"][0]] * n_alpha
    sd = [MASING_PRIOR["k"][1]] * n + [MASING_PRIOR["r_u"][1]] * n
    sd += [MASING_PRIOR["alpha"][1]] * n_alpha
    parts = [LogNormalProduct(mu, sd)]
    if damped:
        parts.append(UniformBox([0.0, 0.0], [MASING_PRIOR["c_M"], MASING_PRIOR["c_K"]]))
    prior = parts[0] if len(parts) == 1 else Composite(tuple(parts))
    return ModelClassSpec(
        name=name,
        prior=prior,
        forward=MasingForward(per_story_alpha, damped, n_sub=n_sub),
        nuisance=LaplaceMarginalized(),
        param_names=masing_param_names(per_story_alpha, damped),
    )


def example2_models(n_sub: int = 20) -> dict:
    return {name: masing_model(name, a, d, n_sub) for name, (a, d) in MASING_CLASSES.items()}


def masing_true_params() -> MasingParams:
    t = MASING_TRUE
    n = N_STORIES
    return MasingParams(
        [MASING_MASS] * n, [t["k"]] * n, [t["r_u"]] * n, [t["alpha"]] * n, t["c_M"], t["c_K"]
    )


def bilinear_true_params() -> BilinearParams:
    return BilinearParams(**BILINEAR_TRUE)
