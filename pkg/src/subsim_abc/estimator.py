"""Estimator-style front end.

:class:`ABCSubSim` fits one model class to a dataset and exposes the
posterior samples and evidence; :class:`ModelSelector` fits several classes
to the same data and ranks them.

>>> import numpy as np
>>> from subsim_abc import ABCSubSim, toy_model
>>> est = ABCSubSim(toy_model(), n_per_level=500, eps_target=0.01, random_state=1)
>>> est.fit(np.array([1.0])).n_levels_ > 1
True
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dynamics import GroundMotion
from .evidence import ModelComparisonReport, default_eps_grid, evidence_at, prob_curve
from .model import Dataset, ModelClassSpec
from .sampler import SubSimConfig, run_abc_subsim

__all__ = ["ABCSubSim", "ModelSelector", "as_dataset"]


def as_dataset(X, motion: Optional[GroundMotion] = None) -> Dataset:
    """Coerce observations to a :class:`Dataset`.

    ``X`` may be a Dataset, a 1-D array (one channel) or a 2-D array of
    shape ``(n_steps, n_channels)``.
    """
    if isinstance(X, Dataset):
        if motion is not None and X.input is not motion:
            raise ValueError("pass the ground motion either inside the Dataset or separately")
        return X
    z = np.asarray(X, dtype=float)
    if z.ndim == 1:
        return Dataset(z, 1, motion)
    if z.ndim == 2:
        if z.shape[0] == 0 or z.shape[1] == 0:
            raise ValueError(f"empty observation array of shape {z.shape}")
        return Dataset(z.reshape(-1), z.shape[1], motion)
    raise ValueError(f"observations must be 1-D or 2-D, got {z.ndim}-D")


def _config(est) -> SubSimConfig:
    seed = est.random_state
    if seed is None:
        seed = 0
    elif not isinstance(seed, (int, np.integer)):
        raise TypeError("random_state must be an int or None")
    return SubSimConfig(
        n_per_level=est.n_per_level,
        p0=est.p0,
        target_accept=est.target_accept,
        adapt_prob=est.adapt_prob,
        max_levels=est.max_levels,
        eps_target=est.eps_target,
        master_seed=int(seed),
        norm=est.norm,
        proposal_spread=est.proposal_spread,
    )


class ABCSubSim(BaseEstimator):
    """Approximate Bayesian posterior and evidence of one model class.

    Parameters
    ----------
    model : ModelClassSpec
    n_per_level : int, default=2000
    p0 : float, default=0.2
    target_accept : float, default=0.5
    adapt_prob : float, default=0.1
    max_levels : int, default=20
    eps_target : float, optional
    norm : {"L2", "Linf"}, default="L2"
    proposal_spread : {"seeds", "prior"}, default="seeds"
        Reference spread of the per-component proposal scales.
    random_state : int, optional
        Master seed; ``None`` means 0 so repeated fits agree.
    n_jobs : int, default=1
        Worker threads. Results do not depend on it.

    Attributes
    ----------
    run_ : SubSimRun
    posterior_samples_ : ndarray of shape (n_samples, n_params)
    tolerance_ : float
        Final level tolerance.
    n_levels_ : int
    log_evidence_ : float
        Log evidence at the final tolerance.
    """

    def __init__(
        self,
        model: Optional[ModelClassSpec] = None,
        n_per_level: int = 2000,
        p0: float = 0.2,
        target_accept: float = 0.5,
        adapt_prob: float = 0.1,
        max_levels: int = 20,
        eps_target: Optional[float] = None,
        norm: str = "L2",
        proposal_spread: str = "seeds",
        random_state: Optional[int] = None,
        n_jobs: int = 1,
    ):
        self.model = model
        self.n_per_level = n_per_level
        self.p0 = p0
        self.target_accept = target_accept
        self.adapt_prob = adapt_prob
        self.max_levels = max_levels
        self.eps_target = eps_target
        self.norm = norm
        self.proposal_spread = proposal_spread
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None, motion: Optional[GroundMotion] = None, callback=None):
        """Run the sampler on observations ``X`` (``y`` is ignored)."""
        if not isinstance(self.model, ModelClassSpec):
            raise TypeError("model must be a ModelClassSpec")
        if int(self.n_jobs) < 1:
            raise ValueError("n_jobs must be >= 1")
        data = as_dataset(X, motion)
        cfg = _config(self)
        self.run_ = run_abc_subsim(self.model, data, cfg, int(self.n_jobs), callback)
        self._set_summary()
        return self

    @classmethod
    def from_run(cls, run, model: Optional[ModelClassSpec] = None) -> "ABCSubSim":
        """Wrap a finished (e.g. reloaded) run."""
        c = run.config
        est = cls(model, c.n_per_level, c.p0, c.target_accept, c.adapt_prob, c.max_levels,
                  c.eps_target, c.norm, c.proposal_spread, c.master_seed)
        est.run_ = run
        est._set_summary()
        return est

    def _set_summary(self):
        run = self.run_
        self.n_levels_ = run.n_levels
        self.tolerance_ = run.final_tolerance
        self.posterior_samples_ = run.posterior()[0]
        self.log_evidence_ = evidence_at(run, run.final_tolerance)
        self.param_names_ = tuple(run.param_names)

    def posterior(self, epsilon: Optional[float] = None) -> np.ndarray:
        """Posterior samples at tolerance ``epsilon`` (default: see ``SubSimRun.posterior``)."""
        check_is_fitted(self, "run_")
        return self.run_.posterior(epsilon)[0]

    def log_evidence(self, epsilon: Optional[float] = None) -> float:
        check_is_fitted(self, "run_")
        eps = self.run_.final_tolerance if epsilon is None else epsilon
        return evidence_at(self.run_, eps)

    def evidence_curve(self):
        check_is_fitted(self, "run_")
        return prob_curve(self.run_)

    def predict(self, X=None) -> np.ndarray:
        """Posterior mean of the parameters (``X`` is ignored)."""
        check_is_fitted(self, "run_")
        return self.posterior_samples_.mean(axis=0)

    def score(self, X, y=None, motion: Optional[GroundMotion] = None) -> float:
        """Log evidence at the final tolerance; ``X`` must be the fitted data."""
        check_is_fitted(self, "run_")
        if as_dataset(X, motion).digest() != self.run_.data_digest:
            raise ValueError("score is only defined on the data the estimator was fitted to")
        return self.log_evidence_


class ModelSelector(BaseEstimator):
    """Fit competing model classes to one dataset and rank them.

    Parameters
    ----------
    models : sequence of ModelClassSpec
    log_priors : sequence of float, optional
        Log prior weights; uniform by default.
    Remaining parameters as in :class:`ABCSubSim`; each class gets the same
    master seed.

    Attributes
    ----------
    estimators_ : list of ABCSubSim
    report_ : ModelComparisonReport
    posterior_ : ndarray
        Model posterior probabilities at each model's final tolerance.
    """

    def __init__(
        self,
        models: Sequence[ModelClassSpec] = (),
        log_priors=None,
        n_per_level: int = 2000,
        p0: float = 0.2,
        target_accept: float = 0.5,
        adapt_prob: float = 0.1,
        max_levels: int = 20,
        eps_target: Optional[float] = None,
        norm: str = "L2",
        proposal_spread: str = "seeds",
        random_state: Optional[int] = None,
        n_jobs: int = 1,
    ):
        self.models = models
        self.log_priors = log_priors
        self.n_per_level = n_per_level
        self.p0 = p0
        self.target_accept = target_accept
        self.adapt_prob = adapt_prob
        self.max_levels = max_levels
        self.eps_target = eps_target
        self.norm = norm
        self.proposal_spread = proposal_spread
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _child(self, model):
        p = self.get_params(deep=False)
        p.pop("models")
        p.pop("log_priors")
        return ABCSubSim(model=model, **p)

    def fit(self, X, y=None, motion: Optional[GroundMotion] = None):
        if len(self.models) < 1:
            raise ValueError("need at least one model class")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError("model class names must be unique")
        data = as_dataset(X, motion)
        self.estimators_ = [self._child(m).fit(data) for m in self.models]
        runs = [e.run_ for e in self.estimators_]
        self.report_ = ModelComparisonReport.from_runs(
            runs, self.log_priors, default_eps_grid(runs)
        )
        self.posterior_ = self.report_.posterior
        self.classes_ = np.array(names)
        return self

    def predict(self, X=None) -> str:
        """Name of the most probable model class."""
        check_is_fitted(self, "report_")
        return self.report_.winner()
