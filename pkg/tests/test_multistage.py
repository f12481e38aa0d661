import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from parahost.core import build_generator, limiting_ratio, spectrum
from parahost.errors import AlreadySubcritical, DegenerateMutation, InvalidParameter, NeverSubcritical
from parahost.multistage import (
    DEFAULT_LADDER,
    LadderParams,
    absorption_pgf,
    absorption_pgf_derivative,
    absorption_pmf,
    build_chain,
    chain_from_rho,
    expected_absorption,
    find_kstar,
    level_params,
    level_sigma,
    rho_sequence,
    sigma_plus_common,
    simulate_chain,
    three_type_drift,
)


def critical_lethality(lp: LadderParams) -> float:
    """Largest root of r x^2 - c (1 + r) x + (c^2 - m^2): sigma_plus(x, r x) < 0 beyond it."""
    c = (1 - lp.mu) * lp.beta * lp.lam
    m = lp.mu * lp.beta * lp.lam
    r = lp.r
    disc = c * c * (1 + r) ** 2 - 4 * r * (c * c - m * m)
    return (c * (1 + r) + math.sqrt(disc)) / (2 * r)


ladders = st.builds(
    LadderParams,
    alpha0=st.floats(0.01, 5.0),
    r=st.floats(1.05, 5.0),
    beta=st.floats(0.05, 1.0),
    mu=st.floats(0.01, 0.9),
    lam=st.floats(0.1, 20.0),
)


def first_step_expectation(chain):
    e = np.zeros(chain.kstar + 1)
    for j in range(chain.kstar - 1, -1, -1):
        e[j] = 1 / chain.up[j] + e[j + 1]
    return e[:-1]


# --- parameters and levels ----------------------------------------------------

@pytest.mark.parametrize("field,value", [("r", 1.0), ("alpha0", 0.0), ("beta", 1.5), ("lam", -1.0)])
def test_ladder_validation(field, value):
    d = dict(alpha0=0.5, r=2.0, beta=0.5, mu=0.2, lam=6.0)
    d[field] = value
    with pytest.raises(InvalidParameter):
        LadderParams(**d)


def test_sigma_at_zero_lethality():
    assert sigma_plus_common(0.0, 0.0, 0.4, 0.3, 5.0) == pytest.approx(0.4 * 5.0)


def test_sigma_diverges_along_ladder():
    vals = [sigma_plus_common(a, 2 * a, 0.5, 0.2, 6.0) for a in (1e2, 1e4, 1e6)]
    # sigma_plus tends to -alpha1 plus a bounded term
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] == pytest.approx(-1e6, rel=1e-4)


@given(
    st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 20)
)
def test_sigma_matches_core(a1, a2, beta, mu, lam):
    from parahost.core import TwoTypeParams

    p = TwoTypeParams(a1, a2, beta, beta, mu, mu, lam)
    assert sigma_plus_common(a1, a2, beta, mu, lam) == pytest.approx(
        spectrum(build_generator(p)).sigma_plus, rel=1e-12, abs=1e-12
    )


def test_rho_near_unit_ratio():
    lp = LadderParams(0.5, 1.0001, 0.5, 0.2, 6.0)
    assert np.allclose(rho_sequence(lp, 5), 1.0, atol=1e-3)


def test_rho_default_decreasing_and_consistent():
    rho = rho_sequence(DEFAULT_LADDER, 3)
    assert np.all(np.diff(rho) < 0)
    direct = [limiting_ratio(level_params(DEFAULT_LADDER, k)) for k in range(4)]
    assert np.allclose(rho, direct, rtol=1e-12, atol=0)


def test_rho_degenerate():
    with pytest.raises(DegenerateMutation):
        rho_sequence(LadderParams(0.5, 2.0, 0.5, 0.0, 6.0), 3)


@given(ladders)
def test_rho_and_sigma_decrease_along_ladder(lp):
    rho = rho_sequence(lp, 6)
    assert np.all(rho > 0) and np.all(np.diff(rho) < 0)
    sig = [level_sigma(lp, k) for k in range(7)]
    assert all(b < a for a, b in zip(sig, sig[1:]))
    direct = [limiting_ratio(level_params(lp, k)) for k in range(7)]
    assert np.allclose(rho, direct, rtol=1e-12, atol=0)


# --- k* -------------------------------------------------------------------------

def test_kstar_zero_for_huge_lethality():
    lp = LadderParams(100.0, 2.0, 0.5, 0.2, 6.0)
    assert find_kstar(lp) == 0
    with pytest.raises(AlreadySubcritical):
        build_chain(lp)


def test_kstar_default_two_methods():
    k = find_kstar(DEFAULT_LADDER)
    assert k == find_kstar(DEFAULT_LADDER, method="scan") == 3
    assert level_sigma(DEFAULT_LADDER, k - 1) >= 0 > level_sigma(DEFAULT_LADDER, k)


def test_kstar_cap():
    lp = LadderParams(1e-6, 1.05, 1.0, 0.1, 20.0)
    with pytest.raises(NeverSubcritical):
        find_kstar(lp, k_cap=10)


@given(ladders)
def test_kstar_matches_threshold_oracle(lp):
    x_star = critical_lethality(lp)
    k_oracle = 0
    while lp.alpha0 * lp.r**k_oracle <= x_star:
        k_oracle += 1
    # stay clear of levels sitting on the threshold to rounding precision
    assume(abs(lp.alpha0 * lp.r**k_oracle - x_star) > 1e-9 * x_star)
    assume(k_oracle == 0 or abs(lp.alpha0 * lp.r ** (k_oracle - 1) - x_star) > 1e-9 * x_star)
    assert find_kstar(lp) == k_oracle
    assert find_kstar(lp, method="scan") == k_oracle
    for k in range(k_oracle, k_oracle + 5):
        assert level_sigma(lp, k) < 0


# --- chain ----------------------------------------------------------------------

def test_single_level_chain():
    c = chain_from_rho([0.8])
    assert np.allclose(c.T, [[1 / 1.8]])
    assert np.allclose(c.exit, [0.8 / 1.8])
    f = absorption_pmf(c, 10)
    n = np.arange(1, 11)
    assert np.allclose(f, (1 / 1.8) ** (n - 1) * 0.8 / 1.8, rtol=1e-14)
    for z in (0.0, 0.3, 0.9, 1.0):
        assert absorption_pgf(c, z) == pytest.approx(z * 0.8 / (1.8 - z), rel=1e-14, abs=1e-300)
    assert expected_absorption(c)[0] == pytest.approx(1.8 / 0.8, rel=1e-14)


def test_default_chain_structure():
    c = build_chain(DEFAULT_LADDER)
    assert c.kstar == 3
    T = c.T
    assert np.count_nonzero(np.triu(T, 2)) == 0 and np.count_nonzero(np.tril(T, -1)) == 0
    Q = c.Q
    assert np.allclose(Q.sum(axis=1), 1.0, atol=1e-15)
    assert np.all(Q >= 0)


@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=12))
def test_chain_invariants(rho):
    c = chain_from_rho(rho)
    rows = c.T.sum(axis=1)
    assert np.allclose(rows[:-1], 1.0, atol=1e-15)
    assert rows[-1] + c.exit[-1] == pytest.approx(1.0, abs=1e-15)
    f = absorption_pmf(c)
    assert np.all(f >= 0) and np.all(np.cumsum(f) <= 1 + 1e-12)
    assert 1 - f.sum() < 1e-10
    assert absorption_pgf(c, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert absorption_pgf(c, 0.0) == 0.0
    # minimum absorption step is k*, reached by climbing every time
    assert np.all(f[: c.kstar - 1] == 0)
    assert f[c.kstar - 1] == pytest.approx(np.prod(c.up), rel=1e-12)
    e = expected_absorption(c)
    assert np.allclose(e, first_step_expectation(c), rtol=1e-12, atol=0)
    assert np.all(np.diff(e) < 0)
    n = np.arange(1, len(f) + 1)
    assert (n * f).sum() == pytest.approx(e[0], rel=1e-6)
    assert absorption_pgf_derivative(c, 1.0) == pytest.approx(e[0], rel=1e-9)


def test_pmf_sums_to_one_default():
    f = absorption_pmf(build_chain(DEFAULT_LADDER))
    assert abs(f.sum() - 1) < 1e-8


def test_pmf_tail_below_rounding_terminates():
    c = build_chain(DEFAULT_LADDER)
    f = absorption_pmf(c, tail=1e-30)
    assert abs(f.sum() - 1) < 1e-15
    with pytest.raises(ValueError):
        absorption_pmf(c, tail=0.0)


def test_pmf_vs_pgf_derivative():
    c = build_chain(DEFAULT_LADDER)
    f = absorption_pmf(c, tail=1e-14)
    n = np.arange(1, len(f) + 1)
    assert (n * f).sum() == pytest.approx(absorption_pgf_derivative(c, 1.0), abs=1e-8)


def test_pgf_series_at_interior_point():
    c = chain_from_rho([2.0, 1.0, 0.5])
    f = absorption_pmf(c, 400)
    z = 0.7
    assert absorption_pgf(c, z) == pytest.approx((z ** np.arange(1, 401) * f).sum(), rel=1e-13)


# --- Monte Carlo ------------------------------------------------------------------

def test_simulated_geometric_mean():
    s = simulate_chain(chain_from_rho([1.0]), 100_000, 5)
    assert abs(s.mean - 2.0) <= 3 * s.se


def test_simulated_default_chain():
    c = build_chain(DEFAULT_LADDER)
    s = simulate_chain(c, 100_000, 6)
    assert abs(s.mean - expected_absorption(c)[0]) <= 3 * s.se
    assert s.steps.min() >= c.kstar


def test_simulate_chain_deterministic():
    c = chain_from_rho([2.0, 1.0, 0.5])
    a = simulate_chain(c, 1000, 1)
    b = simulate_chain(c, 1000, 1)
    assert a.steps.tobytes() == b.steps.tobytes()


# --- two-sided ladder -------------------------------------------------------------

def test_three_type_drift_is_shares_difference():
    d = three_type_drift(DEFAULT_LADDER, 3)
    assert d.shape == (4,)
    assert np.all(np.abs(d) < 1)
    # more lethal neighbourhoods push the mean step further down
    assert np.all(np.diff(d) < 0)
