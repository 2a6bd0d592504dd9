import math

import numpy as np
import pytest

from tabhash.bounds import (BoundConstants, DEFAULT_CONSTANTS, bennett_exponent,
                            bennett_tail, bennett_tail_branches, bound_fully_random,
                            bound_mixed, bound_simple, bound_table_rows, envelope,
                            envelope_case, envelope_report, envelope_sup,
                            envelope_sup_golden, inflation_mixed, inflation_simple,
                            markov_tail, markov_tail_detail, mixed_tail,
                            poisson_central_pnorm)
from tabhash.tabulation import SchemeParams
from tabhash.values import ValueStats

E = math.e


def grid_points(n_p=20, n_r=25):
    ps = np.linspace(2, 64, n_p)
    ratios = np.logspace(-8, 8, n_r)
    return [(float(p), 1.0, float(r)) for p in ps for r in ratios]


# -- the envelope's three cases --------------------------------------------------


def test_envelope_hand_values():
    # moderate p with unit parameters sits in the sqrt(p) sigma case
    assert envelope_case(2, 1, 1) == 2
    assert envelope(2, 1, 1) == pytest.approx(0.5 * math.sqrt(2), abs=1e-12)
    # large p relative to the variance hits the p / log case
    assert envelope_case(20, 1, 1) == 3
    assert envelope(20, 1, 1) == pytest.approx(20 / (E * math.log(20)), rel=1e-12)
    assert envelope(20, 1, 1) == pytest.approx(2.456, abs=1e-3)
    # a tiny variance puts the mass on the fractional-power case
    assert envelope_case(20, 1, 1e-12) == 1
    assert envelope(20, 1, 1e-12) == pytest.approx((1e-12 / 20) ** (1 / 20), rel=1e-12)
    assert envelope(20, 1, 1e-12) == pytest.approx(0.216, abs=1e-3)


def test_case_partition_exhaustive():
    for p, m, var in grid_points():
        r = math.log(p * m * m / var)
        fires = [p < r, p < E * E * var / (m * m), max(r, E * E * var / (m * m)) <= p]
        assert sum(fires) == 1
        assert envelope_case(p, m, var) == fires.index(True) + 1


def test_envelope_domain_errors():
    for bad in [(1.5, 1, 1), (2, 0, 1), (2, 1, 0), (2, -1, 1)]:
        with pytest.raises(ValueError):
            envelope_case(*bad)
    assert envelope(4, 0.0, 1.0) == 0.0  # degenerate -> almost surely constant
    assert envelope(4, 1.0, 0.0) == 0.0


def test_sup_form_matches_cases():
    for p, m, var in grid_points():
        val = envelope(p, m, var)
        assert envelope_sup(p, m, var) == pytest.approx(val, rel=1e-9)


def test_sup_golden_section_agrees():
    for p in (2.0, 4.0, 8.0, 16.0, 32.0):
        for var in np.logspace(-6, 6, 13):
            val = envelope(p, 1.0, float(var))
            assert envelope_sup_golden(p, 1.0, float(var)) == pytest.approx(val, rel=1e-9)


def test_sup_at_p_two_is_a_point():
    for var in (0.5, 1.0, 7.0):
        assert envelope_sup(2, 1, var) == pytest.approx(envelope(2, 1, var), rel=1e-12)


def test_sandwich_bounds():
    for p, m, var in grid_points():
        val = envelope(p, m, var)
        assert 0.5 * math.sqrt(p * var) <= val * (1 + 1e-12)
        assert val <= max(0.5 * math.sqrt(p * var), p * m / (2 * E)) * (1 + 1e-12)


def test_exact_scaling_identity():
    for p, m, var in grid_points(8, 9):
        for lam in (1.0, 3.0, 11.5):
            lhs = envelope(p, lam * m, lam * lam * var)
            assert lhs == pytest.approx(lam * envelope(p, m, var), rel=1e-12)


def test_envelope_report_properties():
    for p, m, var in grid_points(8, 9):
        for lam in (1.0, 2.0, 10.0):
            rep = envelope_report(p, m, var, lam)
            for name, entry in rep.items():
                assert entry["holds"], (name, p, var, lam)


def test_report_far_out_skips_when_inapplicable():
    rep = envelope_report(2, 1, 1, 2)  # e^2 sigma^2/M^2 = 7.39 > 2
    assert not rep["large_p_upper"]["applicable"]


def test_growth_at_unit_scale_is_equality():
    rep = envelope_report(6, 1, 2, 1.0)
    assert rep["scale_up_bounded"]["slack"] == pytest.approx(0, abs=1e-12)


def test_envelope_monotone_in_p():
    for var in np.logspace(-6, 6, 7):
        vals = [envelope(p, 1.0, float(var)) for p in np.linspace(2, 64, 80)]
        assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))


# -- inflation factors ------------------------------------------------------------


def test_inflation_simple_small_regime():
    m = 256
    val = inflation_simple(2.0, m, 4, 1.0, 1.0)
    assert val == pytest.approx(math.log(m) / (2 + math.log(m)))
    assert val < 1


def test_inflation_simple_threshold_shape():
    m, ell, c, n = 256, 32, 3, 64
    spread = 4 * ell * (1 - ell / m)
    p = 40.0
    val = inflation_simple(p, m, c, spread, n)
    want = max(math.log(m) + math.log(n) / c, p) / math.log(E * E * m / spread)
    assert val == pytest.approx(want, rel=1e-12)


def test_inflation_simple_linear_in_large_p():
    base = inflation_simple(50.0, 256, 2, 4.0, 1.0)
    assert inflation_simple(100.0, 256, 2, 4.0, 1.0) == pytest.approx(2 * base)


def test_inflation_simple_domain():
    with pytest.raises(ValueError):
        inflation_simple(4.0, 16, 2, E * E * 16 * 1.5, 1.0)  # denominator goes negative
    with pytest.raises(ValueError):
        inflation_simple(4.0, 16, 2, 0.5, 1.0)


def test_inflation_mixed_values():
    A = 256
    assert inflation_mixed(2.0, A, A) == 1.0
    assert inflation_mixed(2.0, A * A, A) == 2.0
    assert inflation_mixed(3 * math.log(A), A**3, A) == pytest.approx(3.0)


# -- moment bounds ----------------------------------------------------------------


def unit_stats():
    return ValueStats(m_max=1.0, sigma2=1.0, spread_max=1.0, weight_ratio=1.0,
                      total_l2_sq=1.0)


def test_fully_random_bound_value():
    val = bound_fully_random(2.0, unit_stats())
    assert val == pytest.approx(16 * E * 0.5 * math.sqrt(2), rel=1e-12)
    assert val == pytest.approx(30.75, abs=0.01)


def test_degenerate_stats_bound_zero():
    zero = ValueStats(0.0, 0.0, 1.0, 1.0, 0.0)
    params = SchemeParams(4, 2, 4, 1)
    assert bound_fully_random(4.0, zero) == 0.0
    assert bound_simple(4.0, zero, params) == 0.0
    assert bound_mixed(4.0, zero, params) == 0.0


def test_simple_bound_single_char_reduction():
    st = ValueStats(0.5, 3.0, 2.0, 5.0, 6.0)
    params = SchemeParams(4, 1, 4)
    want = DEFAULT_CONSTANTS.leading * envelope(4.0, 0.5, 3.0)
    assert bound_simple(4.0, st, params) == pytest.approx(want, rel=1e-12)


def test_simple_bound_monotone_in_spread():
    params = SchemeParams(8, 3, 8)
    prev = 0.0
    for spread in np.linspace(1, 200, 40):
        st = ValueStats(1.0, 64.0, float(spread), 64.0, 64.0 * 256)
        val = bound_simple(8.0, st, params)
        assert val >= prev * (1 - 1e-12)
        prev = val


def test_mixed_bound_uses_char_exponent():
    st = unit_stats()
    constants = DEFAULT_CONSTANTS
    p, params = 6.0, SchemeParams(8, 3, 8, 1)
    gamma = inflation_mixed(p, params.range_size, params.alphabet_size)
    scale = constants.leading * (constants.per_char_base * 3) ** 3 * gamma**3
    assert bound_mixed(p, st, params) == pytest.approx(envelope(p, scale, scale), rel=1e-12)
    with pytest.raises(ValueError):
        bound_mixed(p, st, SchemeParams(8, 3, 8, 0))


def test_constants_validation():
    with pytest.raises(ValueError):
        BoundConstants(envelope_scale=0.5)


# -- tail bounds -------------------------------------------------------------------


def test_bennett_at_zero_and_identity():
    assert bennett_tail(0, 1, 1) == 1.0
    # growth function at e-1 equals one: the tail is 2 exp(-sigma^2/M^2)
    for var in (0.5, 1.0, 4.0):
        t = var * (E - 1)
        assert bennett_tail(t, 1.0, var) == pytest.approx(
            min(1.0, 2 * math.exp(-var)), rel=1e-12)


def test_bennett_branches_agree_at_crossover():
    for var in (1.0, 9.0, 100.0):
        t = var  # crossover point t = sigma^2 / M
        exact = bennett_exponent(t, 1.0, var)
        low = t * t / (3 * var)
        high = t / 2 * math.log1p(t / var)
        assert 0.5 <= exact / low <= 2.0
        assert 0.5 <= exact / high <= 2.0
        assert bennett_tail_branches(t, 1.0, var) <= 1.0


def test_markov_small_t_branch():
    L = DEFAULT_CONSTANTS.markov_scale
    var = 4.0
    t = 0.5 * L * max(1.0, E * 2 / math.sqrt(2))
    prob, p, branch = markov_tail_detail(t, 1.0, var)
    assert branch == 1 and p == 2.0
    assert prob == pytest.approx(min(1.0, L * L * var / (2 * t * t)))


def test_markov_middle_branch_boundary_continuity():
    # the middle and far branches share their exponent at the crossover
    L, var = 16 * E, 100.0
    t = L * E * E * var / 2
    p_mid = 4 * t * t / (E * E * L * L * var)
    p_far = t / L * math.log(2 * t / (L * var))
    assert p_mid == pytest.approx(p_far, rel=1e-12)
    assert math.exp(-p_mid) <= math.exp(-p_far) * E  # within a factor e


def test_markov_clamped_and_monotone():
    L = DEFAULT_CONSTANTS.markov_scale
    var = 2.0
    first_branch_end = L * max(1.0, E * math.sqrt(var) / math.sqrt(2))
    ts = np.linspace(first_branch_end, first_branch_end * 50, 200)
    vals = [markov_tail(float(t), 1.0, var) for t in ts]
    assert all(v <= 1.0 for v in vals)
    assert all(b <= a * (1 + 1e-9) for a, b in zip(vals, vals[1:]))


def test_markov_requires_positive_t():
    with pytest.raises(ValueError):
        markov_tail(0.0, 1.0, 1.0)


def test_mixed_tail_values():
    params = SchemeParams(8, 4, 16, 1)
    st = unit_stats()
    assert mixed_tail(0.0, st, params, 1.0) == 1.0
    # the additive term for a 32-bit universe
    big_t = 1e9
    assert mixed_tail(big_t, st, params, 1.0) == pytest.approx(2.0**-32, rel=1e-6)
    with pytest.raises(ValueError):
        mixed_tail(1.0, st, SchemeParams(2, 2, 16, 1), 1.0)  # range above universe^gamma


def test_mixed_tail_exponent_tracks_bennett():
    params = SchemeParams(8, 4, 16, 1)
    st = ValueStats(1.0, 50.0, 4.0, 10.0, 500.0)
    c, gamma = 4, 1.0
    kf = DEFAULT_CONSTANTS.leading * (DEFAULT_CONSTANTS.per_char_base * c * c * gamma) ** c
    for t in (5.0, 50.0, 500.0):
        expo_mixed = -math.log(mixed_tail(t, st, params, gamma) - 2.0**-32)
        expo_bennett = bennett_exponent(t, st.m_max, st.sigma2)
        assert expo_mixed * kf == pytest.approx(expo_bennett, rel=1e-9)


# -- Poisson central norms -----------------------------------------------------------


def test_poisson_variance_identity():
    assert poisson_central_pnorm(1.0, 2.0) == pytest.approx(1.0, abs=1e-9)
    assert poisson_central_pnorm(4.0, 2.0) == pytest.approx(2.0, abs=1e-9)


def test_poisson_fourth_moment():
    # E (X - lam)^4 = 3 lam^2 + lam, so the 4-norm at lam=1 is 4^(1/4)
    assert poisson_central_pnorm(1.0, 4.0) == pytest.approx(4.0**0.25, rel=1e-12)
    lam = 2.5
    want = (3 * lam**2 + lam) ** 0.25
    assert poisson_central_pnorm(lam, 4.0) == pytest.approx(want, rel=1e-12)


def test_poisson_third_central_moment_via_skewness():
    # odd moments need the absolute value; compare against a direct summation
    lam, p = 3.0, 2.0
    import scipy.stats as ss

    n = np.arange(0, 200)
    direct = (ss.poisson.pmf(n, lam) * np.abs(n - lam) ** p).sum() ** (1 / p)
    assert poisson_central_pnorm(lam, p) == pytest.approx(direct, rel=1e-10)


def test_poisson_domain():
    with pytest.raises(ValueError):
        poisson_central_pnorm(0.0, 2.0)
    with pytest.raises(ValueError):
        poisson_central_pnorm(1.0, 1.0)


# -- bound table CSV rows -------------------------------------------------------------


def test_bound_table_rows_columns():
    st = unit_stats()
    rows = bound_table_rows((2.0, 8.0), st, SchemeParams(4, 2, 4), "simple")
    assert [r["p"] for r in rows] == [2.0, 8.0]
    for row in rows:
        assert set(row) == {"p", "M", "sigma2", "case_id", "psi", "bound", "gamma_p"}
        assert row["case_id"] in (1, 2, 3)


def test_threshold_bound_matches_corollary_shape():
    # the threshold corollary evaluates the envelope at
    # (K gamma^(c-1) max|w|, K gamma^(c-1) (sum w^2)(l/m)(1 - l/m)); the
    # implementation uses the exact per-instance stats, whose variance part
    # agrees and whose max part is smaller by max(1 - l/m, l/m)
    from tabhash.values import make_threshold

    m, ell, c = 256, 32, 3
    w = np.array([1.0, -2.0, 0.5, 3.0])
    vf = make_threshold(w, ell, m, np.arange(4, dtype=np.uint64))
    st = vf.stats()
    assert st.sigma2 == pytest.approx((w**2).sum() * (ell / m) * (1 - ell / m))
    assert st.m_max == pytest.approx(3.0 * max(1 - ell / m, ell / m))
    params = SchemeParams(8, c, 8)
    p = 12.0
    gamma = inflation_simple(p, m, c, st.spread_max, st.weight_ratio)
    scale = (DEFAULT_CONSTANTS.per_char_base * c) ** (c - 1) * gamma ** (c - 1)
    corollary = envelope(p, scale * 3.0, scale * st.sigma2)
    mine = bound_simple(p, st, params)
    assert mine <= corollary * (1 + 1e-12)
    assert mine == pytest.approx(envelope(p, scale * st.m_max, scale * st.sigma2))
