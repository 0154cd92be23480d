"""ABC rejection baselines and the ABC Subset Simulation engine.

ABC-SubSim turns the rare event ``y in D(eps)`` for a small tolerance into a
chain of nested events with shrinking tolerances ``eps_1 > eps_2 > ...``.
Each level holds ``N_t`` joint samples ``(theta, y)``; the ``p0`` fraction
closest to the data seed Markov chains that repopulate the next level,
conditioned on the current tolerance, with the Modified Metropolis Algorithm.

Random streams are derived from ``(master_seed, level, chain)`` so a run is
reproducible bit-for-bit regardless of how many worker threads execute the
chains of a batch.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._validation import check_norm
from .model import (
    DataRegion,
    Dataset,
    HierarchicalSample,
    ModelClassSpec,
    SimulationDivergence,
    discrepancy,
    draw_from_response,
    forward_draw,
)

logger = logging.getLogger(__name__)

EPS_TARGET = "EpsTarget"
ACCEPTANCE_COLLAPSE = "AcceptanceCollapse"
MAX_LEVELS = "MaxLevels"
STOP_REASONS = (EPS_TARGET, ACCEPTANCE_COLLAPSE, MAX_LEVELS)

# scales are kept within these multiples of the prior standard deviation
SCALE_FLOOR, SCALE_CEIL = 1e-8, 1e2
_FAILURES = (SimulationDivergence, FloatingPointError)


class TrialBudgetExceeded(RuntimeError):
    """ABC rejection ran out of trials before collecting the requested samples."""

    def __init__(self, accepted: int, trials: int):
        self.accepted = accepted
        self.trials = trials
        rate = accepted / trials if trials else 0.0
        super().__init__(
            f"trial budget exhausted: {accepted} accepted in {trials} trials "
            f"(acceptance rate ~ {rate:.3g})"
        )


def _is_integer(x: float, tol: float = 1e-9) -> bool:
    return abs(x - round(x)) <= tol * max(1.0, abs(x))


PROPOSAL_SPREADS = ("prior", "seeds")


@dataclass(frozen=True)
class SubSimConfig:
    """Settings of an ABC-SubSim run.

    Parameters
    ----------
    n_per_level : int
        Samples per level, ``N_t``.
    p0 : float
        Conditional probability between consecutive levels. ``p0 * N_t`` and
        ``1 / p0`` must be integers; values in ``[0.1, 0.3]`` are recommended.
    target_accept : float
        Mean MMA acceptance rate the proposal scales are steered toward.
    adapt_prob : float
        Fraction of chains per adaptation batch.
    max_levels : int
    eps_target : float, optional
        Stop once a level tolerance falls to or below this value.
    master_seed : int
    norm : {"L2", "Linf"}
    collapse_factor : float
        A level whose mean acceptance is below ``collapse_factor * target_accept``
        ends the run.
    gain : float
        Feedback gain of the scale adaptation.
    proposal_spread : {"prior", "seeds"}
        Per-component reference spread of the proposal. ``"prior"`` keeps the
        ratios of the initial ``0.1`` prior standard deviations for the whole
        run; ``"seeds"`` re-bases every component on the sample standard
        deviation of the seeds at the start of each level, keeping the adapted
        common multiplier.
    """

    n_per_level: int = 2000
    p0: float = 0.2
    target_accept: float = 0.5
    adapt_prob: float = 0.1
    max_levels: int = 20
    eps_target: Optional[float] = None
    master_seed: int = 0
    norm: str = "L2"
    collapse_factor: float = 0.1
    gain: float = 1.0
    proposal_spread: str = "seeds"

    def __post_init__(self):
        check_norm(self.norm)
        if self.proposal_spread not in PROPOSAL_SPREADS:
            raise ValueError(f"proposal_spread must be one of {PROPOSAL_SPREADS}")
        if int(self.n_per_level) != self.n_per_level or self.n_per_level < 1:
            raise ValueError("n_per_level must be a positive integer")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")
        if not _is_integer(self.p0 * self.n_per_level) or round(self.p0 * self.n_per_level) < 1:
            raise ValueError(
                f"p0 * n_per_level = {self.p0 * self.n_per_level:g} must be a positive integer"
            )
        if not _is_integer(1.0 / self.p0):
            raise ValueError(f"1 / p0 = {1.0 / self.p0:g} must be an integer")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0.0 < self.adapt_prob <= 1.0:
            raise ValueError("adapt_prob must lie in (0, 1]")
        if int(self.max_levels) != self.max_levels or self.max_levels < 1:
            raise ValueError("max_levels must be a positive integer")
        if self.eps_target is not None and not self.eps_target > 0:
            raise ValueError("eps_target must be > 0")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if not self.collapse_factor > 0 or not self.gain > 0:
            raise ValueError("collapse_factor and gain must be > 0")
        if not 0.1 <= self.p0 <= 0.3:
            warnings.warn(f"p0={self.p0} lies outside the recommended range [0.1, 0.3]")

    @property
    def n_seeds(self) -> int:
        return int(round(self.p0 * self.n_per_level))

    @property
    def chain_length(self) -> int:
        return int(round(1.0 / self.p0))

    def to_dict(self) -> dict:
        return {
            "n_per_level": int(self.n_per_level),
            "p0": float(self.p0),
            "target_accept": float(self.target_accept),
            "adapt_prob": float(self.adapt_prob),
            "max_levels": int(self.max_levels),
            "eps_target": None if self.eps_target is None else float(self.eps_target),
            "master_seed": int(self.master_seed),
            "norm": self.norm,
            "collapse_factor": float(self.collapse_factor),
            "gain": float(self.gain),
            "proposal_spread": self.proposal_spread,
        }


@dataclass(eq=False)
class LevelRecord:
    """Samples of one level, sorted by descending discrepancy.

    Sample outputs are not retained; ``latent`` holds the noise innovations
    for models whose noise is part of the chain state.
    """

    index: int
    tolerance: float
    conditioning: float
    theta: np.ndarray
    discrepancy: np.ndarray
    sigma2: np.ndarray
    chain: np.ndarray
    mean_accept: float
    proposal_scales: np.ndarray
    n_simulations: int = 0
    latent: Optional[np.ndarray] = None
    step: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.step is None:
            self.step = np.zeros(self.discrepancy.size, dtype=np.int64)

    @property
    def n_samples(self) -> int:
        return self.discrepancy.size

    @property
    def samples(self) -> list:
        return [
            HierarchicalSample(
                theta=self.theta[i],
                output=None,
                discrepancy=float(self.discrepancy[i]),
                sigma2=float(self.sigma2[i]),
                latent=None if self.latent is None else self.latent[i],
            )
            for i in range(self.n_samples)
        ]


@dataclass(eq=False)
class SubSimRun:
    model: str
    config: SubSimConfig
    levels: list = field(default_factory=list)
    stop_reason: Optional[str] = None
    param_names: tuple = ()
    data_digest: str = ""
    data_size: int = 0

    @property
    def norm(self) -> str:
        return self.config.norm

    @property
    def tolerances(self) -> np.ndarray:
        return np.array([lv.tolerance for lv in self.levels])

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def final_tolerance(self) -> float:
        return self.levels[-1].tolerance

    @property
    def n_simulations(self) -> int:
        return int(sum(lv.n_simulations for lv in self.levels))

    def level_for(self, epsilon: float) -> int:
        """Index ``i`` (0-based) of the level whose samples are conditioned on
        a tolerance above ``epsilon`` and whose own tolerance is at or below it;
        the last level when ``epsilon`` lies below every tolerance."""
        if not self.levels:
            raise ValueError("run has no levels")
        for i, lv in enumerate(self.levels):
            if lv.tolerance <= epsilon:
                return i
        return len(self.levels) - 1

    def posterior(self, epsilon: Optional[float] = None):
        """Parameter samples whose output fell within ``epsilon`` of the data.

        Defaults to ``eps_target`` when the run reached it, else the final
        level tolerance. Returns ``(theta, discrepancy, sigma2)``.
        """
        if epsilon is None:
            eps_t = self.config.eps_target
            if self.stop_reason == EPS_TARGET and eps_t is not None:
                epsilon = eps_t
            else:
                epsilon = self.final_tolerance
        lv = self.levels[self.level_for(epsilon)]
        keep = lv.discrepancy <= epsilon
        if not np.any(keep):
            raise ValueError(f"no samples within epsilon={epsilon:g}")
        return lv.theta[keep], lv.discrepancy[keep], lv.sigma2[keep]


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RejectionResult:
    samples: list
    n_trials: int

    @property
    def acceptance_rate(self) -> float:
        return len(self.samples) / self.n_trials if self.n_trials else float("nan")


def _safe_draw(model, theta, data, rng, norm):
    try:
        return forward_draw(model, theta, data, rng, norm)
    except _FAILURES:
        return None


def abc_rejection(
    model: ModelClassSpec,
    data: Dataset,
    region: DataRegion,
    n_samples: int,
    rng: np.random.Generator,
    max_trials: Optional[int] = None,
) -> RejectionResult:
    """Draw from the hierarchical prior until ``n_samples`` outputs land in ``region``.

    Raises
    ------
    TrialBudgetExceeded
        After ``max_trials`` draws (default ``10**6 + 1000 * n_samples``).
    """
    if max_trials is None:
        max_trials = 10**6 + 1000 * n_samples
    out, trials = [], 0
    while len(out) < n_samples:
        if trials >= max_trials:
            raise TrialBudgetExceeded(len(out), trials)
        trials += 1
        s = _safe_draw(model, model.prior.sample(rng), data, rng, region.norm)
        if s is not None and s.discrepancy <= region.epsilon:
            out.append(s)
    return RejectionResult(out, trials)


@dataclass(eq=False)
class ModelChoiceResult:
    frequencies: np.ndarray
    counts: np.ndarray
    n_trials: int


def abc_model_choice_baseline(
    models: Sequence[ModelClassSpec],
    data: Dataset,
    region: DataRegion,
    n_samples: int,
    rng: np.random.Generator,
    weights=None,
    max_trials: Optional[int] = None,
) -> ModelChoiceResult:
    """Joint rejection sampling over model index and parameters.

    The accepted frequency of each model estimates its posterior probability
    given that the output falls within ``region``.
    """
    L = len(models)
    if L == 0:
        raise ValueError("need at least one model")
    w = np.full(L, 1.0 / L) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (L,) or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("model prior weights must be non-negative with a positive sum")
    w = w / w.sum()
    if max_trials is None:
        max_trials = 10**6 + 1000 * n_samples
    counts = np.zeros(L, dtype=np.int64)
    trials = 0
    while counts.sum() < n_samples:
        if trials >= max_trials:
            raise TrialBudgetExceeded(int(counts.sum()), trials)
        trials += 1
        l = int(rng.choice(L, p=w))
        m = models[l]
        s = _safe_draw(m, m.prior.sample(rng), data, rng, region.norm)
        if s is not None and s.discrepancy <= region.epsilon:
            counts[l] += 1
    return ModelChoiceResult(counts / counts.sum(), counts, trials)


# ---------------------------------------------------------------------------
# ABC-SubSim building blocks
# ---------------------------------------------------------------------------


def stream(master_seed: int, level: int, index: int, tag: int = 0) -> np.random.Generator:
    """Independent generator keyed by ``(master_seed, level, index, tag)``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(level), int(index), int(tag)))
    return np.random.Generator(np.random.PCG64(ss))


def select_tolerance(sorted_discrepancies, p0: float) -> float:
    """Midpoint of the order statistics bracketing the ``100 p0`` percentile.

    ``sorted_discrepancies`` is in descending order; with ``k = N (1 - p0)``
    the result is the mean of its ``k``-th and ``k+1``-th entries (1-based), so
    exactly ``p0 N`` samples lie at or below it when values are distinct.
    """
    d = np.asarray(sorted_discrepancies, dtype=float)
    n = d.size
    k = n * (1.0 - p0)
    if not _is_integer(k) or not 1 <= round(k) < n:
        raise ValueError(f"N (1 - p0) = {k:g} must be an integer in [1, N)")
    k = int(round(k))
    if d[0] == d[k]:
        warnings.warn("tolerance stagnation: discrepancies are tied across the percentile")
    return 0.5 * (d[k - 1] + d[k])


def initial_scales(model: ModelClassSpec) -> np.ndarray:
    """Proposal scales at 0.1 prior standard deviations.

    Chained noise innovations get one extra shared scale, expressed as a
    multiple of the region radius in innovation units (see ``mma_step``).
    """
    s = 0.1 * model.prior.std()
    if model.chain_noise:
        s = np.append(s, 1.0)
    return s


def _scale_bounds(model: ModelClassSpec):
    ref = model.prior.std()
    if model.chain_noise:
        ref = np.append(ref, 1.0)
    return SCALE_FLOOR * ref, SCALE_CEIL * ref


def rebase_scales(scales, seeds: list, model: ModelClassSpec, reference) -> tuple:
    """Re-base parameter scales on the seed spread.

    ``reference`` is the per-component spread the current ``scales`` were
    expressed against. Each parameter scale becomes
    ``scales * sd(seeds) / reference``, so the common adapted multiplier is
    kept while the component ratios follow the population. Components
    without spread among the seeds keep their scale. Returns
    ``(scales, new_reference)``.
    """
    d = model.n_params
    scales = np.array(scales, dtype=float)
    ref = np.asarray(reference, dtype=float)
    sd = np.std(np.array([s.theta for s in seeds]), axis=0, ddof=1) if len(seeds) > 1 else ref
    sd = np.where(np.isfinite(sd) & (sd > 0), sd, ref)
    scales[:d] *= sd / ref
    return scales, sd


def self_regulate(scales, mean_accept: float, config: SubSimConfig, bounds=None) -> np.ndarray:
    """Multiplicative feedback ``scales * exp(gain * (mean_accept - target))``.

    ``bounds`` is an optional ``(lower, upper)`` pair of clamps.
    """
    if not 0.0 <= mean_accept <= 1.0:
        raise ValueError("mean_accept must lie in [0, 1]")
    out = np.asarray(scales, dtype=float) * math.exp(
        config.gain * (mean_accept - config.target_accept)
    )
    if bounds is not None:
        out = np.clip(out, bounds[0], bounds[1])
    return out


def should_stop(run: SubSimRun, config: SubSimConfig) -> Optional[str]:
    if not run.levels:
        raise ValueError("should_stop needs at least one completed level")
    last = run.levels[-1]
    if config.eps_target is not None and last.tolerance <= config.eps_target:
        return EPS_TARGET
    if last.index > 1 and last.mean_accept < config.collapse_factor * config.target_accept:
        return ACCEPTANCE_COLLAPSE
    if len(run.levels) >= config.max_levels:
        return MAX_LEVELS
    return None


def mma_step(
    current: HierarchicalSample,
    model: ModelClassSpec,
    data: Dataset,
    epsilon: float,
    scales,
    rng: np.random.Generator,
    norm: str = "L2",
):
    """One Modified Metropolis move restricted to ``D(epsilon)``.

    Each parameter component gets a Gaussian candidate accepted on its prior
    ratio; if any moved, the simulator runs once at the candidate and the
    move is kept only if the new output lies in ``D(epsilon)``.

    For models with chained noise innovations the parameter move instead keeps
    the output fixed (innovations absorb the change in ``g``) and is accepted on
    the innovation density ratio; the innovations then take their own
    component-wise move with the region check. Their proposal standard
    deviation is the last entry of ``scales`` times the per-component radius
    of ``D(epsilon)`` in innovation units (capped at one).

    Returns ``(next_sample, accepted, n_simulations)``; for chained noise
    ``accepted`` refers to the region-checked innovation move.
    """
    nxt, accepted, _, n_sim = _mma(current, model, data, epsilon, scales, rng, norm)
    return nxt, accepted, n_sim


def _mma(current, model, data, epsilon, scales, rng, norm):
    # returns (next, region-checked move accepted, parameter move accepted, sims)
    scales = np.asarray(scales, dtype=float)
    d = model.n_params
    theta = current.theta
    cand = theta + scales[:d] * rng.standard_normal(d)
    log_ratio = model.prior.logpdf_components(cand) - model.prior.logpdf_components(theta)
    u = rng.random(d)
    with np.errstate(over="ignore", invalid="ignore"):
        keep = np.log(u) < log_ratio
    new_theta = np.where(keep, cand, theta)
    theta_moved = bool(np.any(keep))

    if model.chain_noise:
        return _chained_noise_step(current, model, data, epsilon, scales, rng, norm,
                                   new_theta, theta_moved)

    if not theta_moved:
        return current, False, False, 0
    try:
        cand_s = forward_draw(model, new_theta, data, rng, norm)
    except _FAILURES:
        return current, False, False, 1
    if cand_s.discrepancy <= epsilon:
        return cand_s, True, True, 1
    return current, False, False, 1


def _latent_radius(epsilon, s2, n, norm):
    """Per-component half-width of ``D(epsilon)`` in innovation units, capped at 1.

    The innovation scale is adapted relative to this radius so that the
    controlled quantity stays put while the tolerance shrinks level by level.
    """
    if not s2 > 0 or not math.isfinite(epsilon):
        return 1.0
    r = epsilon / math.sqrt(s2)
    if norm == "L2":
        r /= math.sqrt(n)
    return min(r, 1.0)


def _chained_noise_step(current, model, data, epsilon, scales, rng, norm, new_theta, theta_moved):
    d = model.n_params
    cur = current
    n_sim = 0
    theta_accepted = False
    if theta_moved:
        n_sim = 1
        try:
            g = model.deterministic(new_theta, data)
        except _FAILURES:
            g = None
        s2 = cur.sigma2
        if g is not None and s2 > 0:
            xi = cur.latent
            xi_new = xi + (cur.response - g) / math.sqrt(s2)
            log_a = 0.5 * (np.dot(xi, xi) - np.dot(xi_new, xi_new))
            if math.log(rng.random()) < log_a:
                cur = HierarchicalSample(
                    theta=new_theta,
                    output=cur.output,
                    discrepancy=cur.discrepancy,
                    sigma2=s2,
                    latent=xi_new,
                    response=g,
                )
                theta_accepted = True
    accepted = False
    xi = cur.latent
    step = scales[d] * _latent_radius(epsilon, cur.sigma2, xi.size, norm)
    cx = xi + step * rng.standard_normal(xi.size)
    kx = np.log(rng.random(xi.size)) < 0.5 * (xi * xi - cx * cx)
    if np.any(kx):
        latent = np.where(kx, cx, xi)
        cand_s = draw_from_response(model, cur.theta, cur.response, data, rng, norm, latent)
        if cand_s.discrepancy <= epsilon:
            cur = cand_s
            accepted = True
    return cur, accepted, theta_accepted, n_sim


def _draw_prior_sample(model, data, rng, norm, budget):
    """Prior draw with retry on simulator failure; ``budget`` is a one-item
    list holding the remaining failure allowance."""
    while True:
        theta = model.prior.sample(rng)
        try:
            return forward_draw(model, theta, data, rng, norm)
        except _FAILURES:
            budget[0] -= 1
            if budget[0] < 0:
                raise RuntimeError("simulator failures exceeded 10 * N_t draws at level 1")


def _sort_level(samples, chains, steps):
    disc = np.array([s.discrepancy for s in samples])
    order = np.argsort(-disc, kind="stable")
    return (
        [samples[i] for i in order],
        np.asarray(chains)[order],
        np.asarray(steps)[order],
        disc[order],
    )


def _record(index, tol, cond, samples, chains, steps, disc, mean_accept, scales, n_sim, model):
    return LevelRecord(
        index=index,
        tolerance=float(tol),
        conditioning=float(cond),
        theta=np.array([s.theta for s in samples]),
        discrepancy=disc,
        sigma2=np.array([s.sigma2 for s in samples]),
        chain=np.asarray(chains, dtype=np.int64),
        mean_accept=float(mean_accept),
        proposal_scales=np.array(scales, dtype=float),
        n_simulations=int(n_sim),
        latent=np.array([s.latent for s in samples]) if model.chain_noise else None,
        step=np.asarray(steps, dtype=np.int64),
    )


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def init_level(model, data, config: SubSimConfig, threads: int = 1):
    """Level 1: ``N_t`` i.i.d. draws from the hierarchical prior.

    Returns ``(record, samples)`` where ``samples`` are the live sorted
    samples (with outputs) used to seed the next level.
    """
    n = config.n_per_level
    allowance = 9 * n
    budget = [allowance]

    def one(i):
        return _draw_prior_sample(model, data, stream(config.master_seed, 1, i), config.norm, budget)

    samples = _map(one, list(range(n)), threads)
    samples, chains, steps, disc = _sort_level(samples, np.arange(n), np.zeros(n, dtype=int))
    tol = select_tolerance(disc, config.p0)
    n_sim = n + allowance - budget[0]
    rec = _record(1, tol, np.inf, samples, chains, steps, disc, np.nan, initial_scales(model),
                  n_sim, model)
    return rec, samples


def _run_chain(seed, model, data, epsilon, scales, rng, length, norm):
    out = [seed]
    acc = 0
    acc_theta = 0
    sims = 0
    cur = seed
    for _ in range(length - 1):
        cur, a, at, k = _mma(cur, model, data, epsilon, scales, rng, norm)
        acc += a
        acc_theta += at
        sims += k
        out.append(cur)
    return out, acc, acc_theta, sims


def _regulate(scales, rate, rate_theta, model, config, bounds):
    if not model.chain_noise:
        return self_regulate(scales, rate, config, bounds)
    # parameters and innovations are steered by their own move rates
    d = model.n_params
    th = self_regulate(scales[:d], rate_theta, config, (bounds[0][:d], bounds[1][:d]))
    xi = self_regulate(scales[d:], rate, config, (bounds[0][d:], bounds[1][d:]))
    return np.concatenate([th, xi])


def run_level(
    seeds: list,
    model: ModelClassSpec,
    data: Dataset,
    config: SubSimConfig,
    scales,
    level: int,
    epsilon: float,
    threads: int = 1,
):
    """Grow each seed into a chain of ``1/p0`` samples conditioned on ``D(epsilon)``.

    Chains run in batches of ``ceil(adapt_prob * n_seeds)``; the proposal
    scales are regulated after every batch. Returns ``(record, samples, scales)``
    with the scales as adapted at the end of the level.
    """
    n_seeds = len(seeds)
    for s in seeds:
        if not s.discrepancy <= epsilon:
            raise ValueError("every seed must lie inside the conditioning region")
    length = config.chain_length
    bounds = _scale_bounds(model)
    scales = np.asarray(scales, dtype=float)
    start_scales = scales.copy()
    perm = stream(config.master_seed, level, 0, 1).permutation(n_seeds)
    batch = max(1, int(math.ceil(config.adapt_prob * n_seeds)))
    results = [None] * n_seeds
    total_acc = total_acc_theta = 0
    total_sims = 0
    steps_per_chain = length - 1
    for b0 in range(0, n_seeds, batch):
        idx = list(range(b0, min(n_seeds, b0 + batch)))
        sc = scales.copy()

        def one(c, sc=sc):
            rng = stream(config.master_seed, level, c)
            return _run_chain(seeds[perm[c]], model, data, epsilon, sc, rng, length, config.norm)

        out = _map(one, idx, threads)
        acc = acc_theta = 0
        for c, (chain, a, at, k) in zip(idx, out):
            results[c] = chain
            acc += a
            acc_theta += at
            total_sims += k
        total_acc += acc
        total_acc_theta += acc_theta
        if steps_per_chain > 0:
            n_steps = len(idx) * steps_per_chain
            scales = _regulate(scales, acc / n_steps, acc_theta / n_steps, model, config, bounds)
    if steps_per_chain > 0:
        # between-level update on the level-wide rates
        n_steps = n_seeds * steps_per_chain
        scales = _regulate(
            scales, total_acc / n_steps, total_acc_theta / n_steps, model, config, bounds
        )
    samples, chains, steps = [], [], []
    for c, chain in enumerate(results):
        samples.extend(chain)
        chains.extend([c] * len(chain))
        steps.extend(range(len(chain)))
    mean_accept = total_acc / (n_seeds * steps_per_chain) if steps_per_chain else np.nan
    samples, chains, steps, disc = _sort_level(samples, chains, steps)
    tol = select_tolerance(disc, config.p0)
    rec = _record(level, tol, epsilon, samples, chains, steps, disc, mean_accept, start_scales,
                  total_sims, model)
    return rec, samples, scales


def run_abc_subsim(
    model: ModelClassSpec,
    data: Dataset,
    config: SubSimConfig,
    threads: int = 1,
    callback: Optional[Callable] = None,
) -> SubSimRun:
    """Run ABC-SubSim until a stopping rule fires.

    ``callback(run)`` is invoked after every completed level, e.g. to flush
    partial results. ``threads`` only affects speed, never the result.
    """
    run = SubSimRun(
        model=model.name,
        config=config,
        param_names=tuple(model.param_names),
        data_digest=data.digest(),
        data_size=data.size,
    )
    rec, live = init_level(model, data, config, threads)
    run.levels.append(rec)
    logger.info("%s level 1: eps=%.4g", model.name, rec.tolerance)
    if callback is not None:
        callback(run)
    scales = initial_scales(model)
    bounds = _scale_bounds(model)
    spread = model.prior.std()
    n_seeds = config.n_seeds
    while True:
        reason = should_stop(run, config)
        if reason is not None:
            run.stop_reason = reason
            break
        prev = run.levels[-1]
        seeds = live[-n_seeds:]
        j = prev.index + 1
        if config.proposal_spread == "seeds":
            scales, spread = rebase_scales(scales, seeds, model, spread)
            scales = np.clip(scales, bounds[0], bounds[1])
        rec, live_new, scales = run_level(
            seeds, model, data, config, scales, j, prev.tolerance, threads
        )
        if not rec.tolerance < prev.tolerance:
            warnings.warn(f"tolerance did not decrease at level {j}; stopping")
            run.stop_reason = ACCEPTANCE_COLLAPSE
            break
        live = live_new
        run.levels.append(rec)
        logger.info(
            "%s level %d: eps=%.4g accept=%.3f", model.name, j, rec.tolerance, rec.mean_accept
        )
        if callback is not None:
            callback(run)
    return run


def au_beck_cov(run: SubSimRun) -> np.ndarray:
    """Approximate coefficient of variation of the probability estimate at each
    level tolerance, accounting for correlation within chains."""
    p0 = run.config.p0
    n = run.config.n_per_level
    out = []
    acc2 = 0.0
    for lv in run.levels:
        if lv.index == 1:
            d2 = (1 - p0) / (p0 * n)
        else:
            ind = (lv.discrepancy <= lv.tolerance).astype(float)
            gamma = _chain_correlation_factor(ind, lv.chain, lv.step, p0)
            d2 = (1 - p0) / (p0 * n) * (1 + gamma)
        acc2 += d2
        out.append(math.sqrt(acc2))
    return np.array(out)


def _chain_correlation_factor(ind, chain, step, p):
    """``gamma`` from the lag correlations of indicator values along chains."""
    order = np.lexsort((step, chain))
    chains = {}
    for i in order:
        chains.setdefault(int(chain[i]), []).append(ind[i])
    mats = [np.array(v) for v in chains.values()]
    L = min(len(m) for m in mats)
    if L < 2:
        return 0.0
    var = p * (1 - p)
    if var <= 0:
        return 0.0
    gamma = 0.0
    for k in range(1, L):
        r = np.mean([np.mean(m[: L - k] * m[k:L]) for m in mats]) - p * p
        gamma += 2.0 * (1 - k / L) * r / var
    return max(gamma, 0.0)
