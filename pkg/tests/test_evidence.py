import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subsim_abc.evidence import (
    ModelComparisonReport,
    ball_volume,
    default_eps_grid,
    evidence_at,
    log_ball_volume,
    log_prob_at,
    model_posteriors,
    posterior_vs_eps,
    prob_curve,
)
from subsim_abc.models import toy_data, toy_model
from subsim_abc.sampler import LevelRecord, SubSimConfig, SubSimRun, run_abc_subsim


def synthetic_run(levels, p0, n, norm="L2", data_size=1, name="m"):
    """Run record from per-level descending discrepancy arrays."""
    cfg = SubSimConfig(n_per_level=n, p0=p0, norm=norm)
    recs = []
    prev = np.inf
    for j, d in enumerate(levels, start=1):
        d = np.sort(np.asarray(d, dtype=float))[::-1]
        k = int(round(n * (1 - p0)))
        tol = 0.5 * (d[k - 1] + d[k])
        recs.append(
            LevelRecord(
                index=j, tolerance=tol, conditioning=prev, theta=np.zeros((n, 1)),
                discrepancy=d, sigma2=np.ones(n), chain=np.arange(n), mean_accept=0.5,
                proposal_scales=np.ones(1),
            )
        )
        prev = tol
    return SubSimRun(name, cfg, recs, data_size=data_size)


def test_prob_curve_level_one_arithmetic():
    run = synthetic_run([np.arange(10, 0, -1.0)], 0.2, 10)
    c = prob_curve(run, log_volume=False)
    # i = 7 has discrepancy 4
    assert c.prob[c.epsilon == 4.0][0] == pytest.approx(0.3)
    assert np.all(np.diff(c.epsilon) < 0)


def test_prob_curve_level_three_arithmetic():
    lv1 = np.arange(100.0, 90.0, -1.0)
    lv2 = np.arange(90.0, 80.0, -1.0) - 0.25  # all below the first tolerance
    lv3 = np.arange(10.0, 0.0, -1.0)
    run = synthetic_run([lv1, lv2, lv3], 0.1, 10)
    c = prob_curve(run, log_volume=False)
    # level 3, i = 8 has discrepancy 3
    assert c.prob[c.epsilon == 3.0][0] == pytest.approx(0.1**2 * 0.2)


def test_prob_curve_duplicates_keep_smaller():
    run = synthetic_run([[5.0, 4.0, 3.0, 3.0, 1.0]], 0.2, 5)
    c = prob_curve(run, log_volume=False)
    assert c.prob[c.epsilon == 3.0][0] == pytest.approx(1 / 5)


@given(st.lists(st.floats(0.01, 100.0), min_size=10, max_size=10), st.integers(1, 3))
def test_prob_curve_monotone(vals, levels):
    rng = np.random.default_rng(len(vals))
    lv = [np.array(vals)]
    for _ in range(levels - 1):
        top = np.sort(lv[-1])[::-1]
        tol = 0.5 * (top[7] + top[8])
        lv.append(rng.uniform(0.0, tol, 10))
    run = synthetic_run(lv, 0.2, 10)
    c = prob_curve(run, log_volume=False)
    assert np.all(np.diff(c.prob) <= 0)


def test_ball_volume_examples():
    assert ball_volume(0.5, 1, "Linf") == pytest.approx(1.0)
    assert ball_volume(1.0, 2) == pytest.approx(math.pi)
    assert ball_volume(2.0, 3) == pytest.approx(32 * math.pi / 3)
    assert log_ball_volume(1e-3, 2400) < -1e4  # finite in log space
    with pytest.raises(ValueError):
        ball_volume(0.0, 1)
    with pytest.raises(ValueError):
        ball_volume(1.0, 0)


@given(st.floats(1e-3, 10.0), st.integers(1, 50))
def test_linf_volume_identity(eps, d):
    assert log_ball_volume(eps, d, "Linf") == d * math.log(2 * eps)


@pytest.mark.parametrize("eps", [0.3, 1.0, 2.5])
def test_l2_volume_recursion(eps):
    v = {0: 1.0, 1: 2 * eps}
    for d in range(2, 21):
        v[d] = v[d - 2] * 2 * math.pi * eps**2 / d
    for d in range(1, 21):
        assert ball_volume(eps, d) == pytest.approx(v[d], rel=1e-12)


def test_evidence_at_first_tolerance():
    rng = np.random.default_rng(0)
    run = synthetic_run([rng.uniform(0, 10, 100)], 0.2, 100, data_size=3)
    e1 = run.levels[0].tolerance
    assert evidence_at(run, e1) == pytest.approx(math.log(0.2) - log_ball_volume(e1, 3))


def test_evidence_at_second_level_fraction():
    lv1 = np.linspace(10, 1, 10)
    lv2 = np.array([2.0, 1.9, 1.8, 1.7, 1.6, 0.5, 0.4, 0.3, 0.2, 0.1])
    run = synthetic_run([lv1, lv2], 0.2, 10, data_size=2)
    eps = 1.2
    assert run.level_for(eps) == 1
    assert log_prob_at(run, eps) == pytest.approx(math.log(0.2 * 0.5))
    assert evidence_at(run, eps) == pytest.approx(math.log(0.1) - log_ball_volume(eps, 2))


def test_evidence_refuses_extrapolation():
    run = synthetic_run([np.linspace(10, 1, 10)], 0.2, 10)
    with pytest.raises(ValueError, match="extrapolate"):
        evidence_at(run, 0.5)


def test_model_posteriors_examples():
    assert model_posteriors([0.0, 0.0, 0.0]) == pytest.approx([1 / 3] * 3)
    assert model_posteriors(np.log([2.0, 1.0, 1.0])) == pytest.approx([0.5, 0.25, 0.25])
    assert model_posteriors([-1e5, 0.0]) == pytest.approx([0.0, 1.0])
    with pytest.raises(ValueError):
        model_posteriors([-np.inf, -np.inf])
    with pytest.raises(ValueError):
        model_posteriors([0.0, np.nan])


@given(
    st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=6),
    st.floats(-1e4, 1e4),
)
def test_model_posteriors_properties(le, shift):
    p = model_posteriors(le)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    assert model_posteriors(np.array(le) + shift) == pytest.approx(p, abs=1e-9)


def test_common_volume_cancels():
    rng = np.random.default_rng(1)
    runs = [synthetic_run([rng.uniform(0, 10, 50)], 0.2, 50, data_size=4, name=n) for n in "ab"]
    eps = 5.0
    with_v = model_posteriors([evidence_at(r, eps) for r in runs])
    without = model_posteriors([log_prob_at(r, eps) for r in runs])
    assert with_v == pytest.approx(without, abs=1e-12)


def test_norm_mixing_refused():
    a = synthetic_run([np.linspace(10, 1, 10)], 0.2, 10, norm="L2")
    b = synthetic_run([np.linspace(10, 1, 10)], 0.2, 10, norm="Linf")
    with pytest.raises(ValueError, match="norm"):
        posterior_vs_eps([a, b], [5.0])
    with pytest.raises(ValueError, match="norm"):
        ModelComparisonReport.from_runs([a, b])


@pytest.fixture(scope="module")
def toy_pair():
    m = toy_model()
    data = toy_data(m, 0.5, 0)
    cfg = SubSimConfig(n_per_level=500, p0=0.2, eps_target=1e-2, master_seed=3)
    a = run_abc_subsim(m, data, cfg)
    b = run_abc_subsim(toy_model(name="twin"), data, cfg)
    return a, b


def test_identical_runs_split_evenly(toy_pair):
    a, b = toy_pair
    grid = default_eps_grid([a, b])
    eps, probs = posterior_vs_eps([a, b], grid)
    assert len(eps) == len(grid)
    assert np.all(probs == 0.5)


def test_top_of_range_returns_priors(toy_pair):
    a, b = toy_pair
    top = a.levels[0].discrepancy[0]
    _, probs = posterior_vs_eps([a, b], [top], np.log([0.2, 0.8]))
    assert probs[0] == pytest.approx([0.2, 0.8], abs=0.01)


def test_uncovered_grid_point_dropped(toy_pair):
    a, b = toy_pair
    with pytest.warns(UserWarning, match="skipped"):
        eps, _ = posterior_vs_eps([a, b], [1.0, 1e-9])
    assert list(eps) == [1.0]


def test_report_fields(toy_pair):
    a, b = toy_pair
    rep = ModelComparisonReport.from_runs([a, b], eps_grid=default_eps_grid([a, b]))
    assert rep.names == ["toy", "twin"]
    assert abs(rep.posterior.sum() - 1) < 1e-12
    assert rep.curve.shape == (len(rep.eps_grid), 2)
    assert list(rep.n_levels) == [a.n_levels, b.n_levels]
    assert rep.winner() in ("toy", "twin")
