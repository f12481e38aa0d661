import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import two_type_params
from parahost.core import build_generator, reference_params, limiting_ratio, mean_matrix, ratio_trajectories, spectrum
from parahost.errors import AllExtinct, InvalidInit, NotSupercritical
from parahost.simulator import (
    CAP,
    EventKind,
    LambdaSchedule,
    PopulationState,
    empirical_limiting_ratio,
    ensemble,
    ensemble_states,
    simulate,
    summarize,
)

STEP = {
    EventKind.DEATH_1: (-1, 0),
    EventKind.DEATH_2: (0, -1),
    EventKind.NO_TRANSMISSION: (0, 0),
    EventKind.BIRTH_1_1: (1, 0),
    EventKind.BIRTH_1_2: (0, 1),
    EventKind.BIRTH_2_1: (1, 0),
    EventKind.BIRTH_2_2: (0, 1),
}


def within_se(est, se, target, k=3.0):
    return abs(est - target) <= k * se


# --- contracts ----------------------------------------------------------------

@pytest.mark.parametrize("init", [(0, 0), (-1, 2)])
def test_invalid_init(init):
    with pytest.raises(InvalidInit):
        simulate(reference_params(2.0), init, 1.0)


def test_cap_must_exceed_initial_size():
    with pytest.raises(InvalidInit):
        simulate(reference_params(2.0), (3, 2), 1.0, cap=5)


def test_population_state_rejects_negative():
    with pytest.raises(InvalidInit):
        PopulationState(1, -1)


# --- single trajectories --------------------------------------------------------

def test_no_encounters_single_death():
    p = reference_params(0.0)
    n = 100_000
    life = np.empty(n)
    for s in range(n):
        tr = simulate(p, (1, 0), horizon=1e6, seed=s)
        assert tr.extinct and len(tr.times) == 1 and tr.kinds[0] == EventKind.DEATH_1
        life[s] = tr.times[0]
    se = life.std(ddof=1) / math.sqrt(n)
    assert within_se(life.mean(), se, 1 / p.alpha1)


def test_no_mutation_keeps_type_two_empty():
    p = reference_params(6.0).replace(mu1=0.0, mu2=0.0)
    for s in range(20):
        tr = simulate(p, (1, 0), horizon=3.0, cap=10_000, seed=s)
        assert np.all(tr.states[:, 1] == 0)


def test_fixed_seed_is_reproducible():
    a = simulate(reference_params(6.0), (1, 0), horizon=3.0, seed=42)
    b = simulate(reference_params(6.0), (1, 0), horizon=3.0, seed=42)
    assert a.times.tobytes() == b.times.tobytes()
    assert a.states.tobytes() == b.states.tobytes()
    assert a.kinds.tobytes() == b.kinds.tobytes()
    assert a.status == b.status


@settings(max_examples=30)
@given(two_type_params(), st.integers(0, 2**64 - 1), st.booleans())
def test_trajectory_invariants(p, seed, verbose):
    tr = simulate(p, (2, 1), horizon=2.0, cap=2_000, seed=seed, verbose=verbose)
    assert np.all(np.diff(tr.times) > 0)
    assert np.all(tr.times < 2.0)
    prev = np.array([2, 1])
    for t, z, kind in tr.events():
        assert tuple(np.array(z) - prev) == STEP[kind]
        assert min(z) >= 0
        prev = np.array(z)
    if not verbose:
        assert not np.any(tr.kinds == EventKind.NO_TRANSMISSION)
    if tr.extinct:
        assert tuple(prev) == (0, 0)
    if tr.hit_cap:
        assert prev.sum() >= 2_000


def test_verbose_mode_records_no_transmission():
    tr = simulate(reference_params(6.0), (5, 5), horizon=1.0, seed=3, verbose=True)
    assert np.any(tr.kinds == EventKind.NO_TRANSMISSION)


def test_cap_flag():
    tr = simulate(reference_params(14.0), (10, 10), horizon=100.0, cap=500, seed=1)
    assert tr.hit_cap and tr.final_state.total >= 500


def test_simulate_matches_replicate_zero():
    p = reference_params(6.0)
    for seed in (0, 7, 2**63 + 5):
        tr = simulate(p, (1, 1), horizon=1.5, cap=10**6, seed=seed)
        run = ensemble_states(p, (1, 1), [1.5], 1, seed)
        assert tuple(run.states[0, 0]) == tr.final_state.as_tuple()


# --- ensembles ------------------------------------------------------------------

def test_ensemble_time_zero_is_exact():
    st_ = ensemble(reference_params(2.0), (3, 2), [0.0, 1.0], 50, 1)
    assert np.array_equal(st_.mean[0], [3.0, 2.0])
    assert np.array_equal(st_.se[0], [0.0, 0.0])
    assert st_.extinct_frac[0] == 0.0


def test_ensemble_matches_mean_matrix():
    p = reference_params(2.0)
    st_ = ensemble(p, (1, 0), [3.0], 10_000, 2024)
    m = mean_matrix(p, 3.0)[0]
    assert within_se(st_.mean[0, 0], st_.se[0, 0], m[0])
    assert within_se(st_.mean[0, 1], st_.se[0, 1], m[1])


def test_no_encounters_extinction():
    p = reference_params(0.0)
    t = 10 / min(p.alpha1, p.alpha2)
    st_ = ensemble(p, (1, 1), [t], 10_000, 5)
    assert st_.extinct_frac[0] >= 0.99


def test_ensemble_invariants():
    st_ = ensemble(reference_params(6.0), (1, 0), np.linspace(0, 3, 7), 500, 9)
    assert np.all(st_.se >= 0)
    assert np.all((st_.extinct_frac >= 0) & (st_.extinct_frac <= 1))
    assert st_.replicates == 500 and st_.base_seed == 9


def test_thread_count_does_not_change_output():
    p = reference_params(6.0)
    grid = np.linspace(0, 2, 5)
    a = ensemble_states(p, (1, 0), grid, 2000, 11, workers=1)
    b = ensemble_states(p, (1, 0), grid, 2000, 11, workers=3)
    assert a.states.tobytes() == b.states.tobytes()
    assert a.status.tobytes() == b.status.tobytes()


def test_capped_replicates_are_excluded_after_the_cap():
    run = ensemble_states(reference_params(14.0), (1, 0), [0.5, 5.0], 200, 3, cap=100)
    capped = run.status == CAP
    assert capped.any()
    assert np.all(run.states[capped, 1] == -1)
    s = summarize(run)
    assert s.n[1] == (~capped).sum()


def test_branching_property():
    # Z from (2, 0) is the sum of two independent copies started at (1, 0)
    p = reference_params(6.0)
    n = 20_000
    two = ensemble_states(p, (2, 0), [1.0], n, 100).states[:, 0, :].astype(float)
    one = ensemble_states(p, (1, 0), [1.0], 2 * n, 200).states[:, 0, :].astype(float)
    pair = one[:n] + one[n:]
    for k in range(2):
        a, b = two[:, k], pair[:, k]
        se = math.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
        assert within_se(a.mean(), se, b.mean())
        # second moments
        a2, b2 = a**2, b**2
        se2 = math.sqrt(a2.var(ddof=1) / n + b2.var(ddof=1) / n)
        assert within_se(a2.mean(), se2, b2.mean())


def test_mean_growth_rate():
    # lambda = 3 keeps means on [5, 15] well below the population cap
    p = reference_params(3.0)
    grid = np.linspace(5, 15, 11)
    st_ = ensemble(p, (1, 0), grid, 10_000, 77)
    assert np.all(st_.n == 10_000)
    slope = np.polyfit(grid, np.log(st_.mean.sum(axis=1)), 1)[0]
    sigma = spectrum(build_generator(p)).sigma_plus
    assert slope == pytest.approx(sigma, rel=0.10)


def test_verbose_mode_has_same_means():
    p = reference_params(6.0)
    run = ensemble_states(p, (1, 0), [1.0], 10_000, 8, verbose=True)
    s = summarize(run)
    m = mean_matrix(p, 1.0)[0]
    assert within_se(s.mean[0, 0], s.se[0, 0], m[0])
    assert within_se(s.mean[0, 1], s.se[0, 1], m[1])


def test_lambda_schedule_means():
    p = reference_params(6.0)
    sched = LambdaSchedule((0.0, 1.0), (0.0, 6.0))
    st_ = ensemble(p, (5, 5), [2.0], 10_000, 12, schedule=sched)
    m = np.array([5.0, 5.0]) @ mean_matrix(p.replace(lam=0.0), 1.0) @ mean_matrix(p, 1.0)
    assert within_se(st_.mean[0, 0], st_.se[0, 0], m[0])
    assert within_se(st_.mean[0, 1], st_.se[0, 1], m[1])


def test_lambda_schedule_validation():
    with pytest.raises(ValueError):
        LambdaSchedule((0.5,), (1.0,))
    with pytest.raises(ValueError):
        LambdaSchedule((0.0, 1.0, 1.0), (1.0, 2.0, 3.0))


# --- limiting ratio -------------------------------------------------------------

def test_limiting_ratio_refuses_subcritical():
    with pytest.raises(NotSupercritical):
        empirical_limiting_ratio(reference_params(0.5), (1, 0), 100.0, 100, 1)


def test_limiting_ratio_refuses_short_horizon():
    p = reference_params(10.0)
    D = spectrum(build_generator(p)).Delta
    with pytest.raises(ValueError):
        empirical_limiting_ratio(p, (1, 0), 1.0 / D, 100, 1)


def test_limiting_ratio_zero_without_mutation():
    p = reference_params(6.0).replace(mu1=0.0, mu2=0.0)
    est = empirical_limiting_ratio(p, (1, 0), 4.0, 500, 1)
    assert est.estimate == 0.0 and est.ci_low == est.ci_high == 0.0


def test_limiting_ratio_all_extinct():
    # near-critical: a single replicate dies out for this seed
    p = reference_params(2.0)
    with pytest.raises(AllExtinct):
        empirical_limiting_ratio(p, (1, 0), 10.0, 1, 0)


def test_limiting_ratio_reference_lambda10():
    # horizon with exp(-Delta h) = e^-5 < 0.05, about 2000 survivors
    p = reference_params(10.0)
    D = spectrum(build_generator(p)).Delta
    est = empirical_limiting_ratio(p, (1, 0), 5.0 / D, 2500, 10)
    assert est.n_survivors >= 2000
    assert est.covers(limiting_ratio(p)), est


@pytest.mark.parametrize("lam", [6.0, 10.0])
@pytest.mark.parametrize("init", [(1, 0), (0, 1)])
def test_pooled_ratio_tracks_mean_ratio_transient(lam, init):
    # sum(Z2)/sum(Z1) estimates (init M(h))_2 / (init M(h))_1, not yet R
    p = reference_params(lam)
    h = 5.0 / spectrum(build_generator(p)).Delta
    m = np.asarray(init, dtype=float) @ mean_matrix(p, h)
    est = empirical_limiting_ratio(p, init, h, 5000, 31, estimator="pooled")
    assert est.estimator == "pooled"
    assert est.covers(m[1] / m[0]), est
    r1, r2 = ratio_trajectories(p, h)
    assert m[1] / m[0] == pytest.approx(r1 if init == (1, 0) else r2, rel=1e-12)


def test_ratio_estimator_name_checked():
    with pytest.raises(ValueError):
        empirical_limiting_ratio(reference_params(6.0), (1, 0), 5.0, 10, 1, estimator="median")
