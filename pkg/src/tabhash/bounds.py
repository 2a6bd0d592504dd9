"""Moment and tail bound formulas for mean-zero hash-based sums.

The central object is a three-case envelope in (p, max contribution M,
variance proxy sigma^2) that tracks the central p-norms of a Poisson
variable up to universal constants.  The per-scheme moment bounds inflate
(M, sigma^2) by an instance-dependent factor before applying the envelope.

The universal constants in the underlying theorems are not pinned to
numeric values; they live in BoundConstants so experiments can report
empirically observed ratios against any fixed choice.  All logarithms are
natural.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .values import ValueStats

E = math.e


@dataclass(frozen=True)
class BoundConstants:
    """Configurable stand-ins for the universal constants of the moment bounds."""

    envelope_scale: float = 16 * E  # multiplier on the envelope under fully random hashing
    leading: float = 1.0            # leading multiplier in the per-scheme bounds
    per_char_base: float = 2.0      # base of the per-character growth factor
    markov_scale: float = 16 * E    # norm scale assumed by the tail conversion

    def __post_init__(self):
        for name in ("envelope_scale", "leading", "per_char_base", "markov_scale"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


DEFAULT_CONSTANTS = BoundConstants()


def _check_envelope_args(p, m_max, variance):
    if p < 2:
        raise ValueError("moment order must be >= 2")
    if not (m_max > 0 and variance > 0):
        raise ValueError("need positive max contribution and variance")
    if not (math.isfinite(p) and math.isfinite(m_max) and math.isfinite(variance)):
        raise ValueError("arguments must be finite")


def _log_ratio(p, m_max, variance):
    # log(p * M^2 / sigma^2) without forming the possibly overflowing ratio
    return math.log(p) + 2.0 * math.log(m_max) - math.log(variance)


def envelope_case(p, m_max, variance) -> int:
    """Which of the three envelope cases fires: 1, 2, or 3.

    In terms of r = log(p M^2 / sigma^2): case 1 iff r > p, case 2 iff r < 2,
    case 3 iff 2 <= r <= p.  The cases are disjoint and cover everything.
    """
    _check_envelope_args(p, m_max, variance)
    r = _log_ratio(p, m_max, variance)
    if p < r:
        return 1
    if r < 2:
        return 2
    return 3


def envelope(p, m_max, variance) -> float:
    """The three-case p-norm envelope at (M, sigma^2).

    Zero when either parameter is zero: the sum is then almost surely constant.
    """
    if m_max == 0 or variance == 0:
        return 0.0
    case = envelope_case(p, m_max, variance)
    r = _log_ratio(p, m_max, variance)
    if case == 1:
        return m_max * math.exp(-r / p)
    if case == 2:
        return 0.5 * math.sqrt(p * variance)
    return p / (E * r) * m_max


def envelope_sup(p, m_max, variance) -> float:
    """Envelope via its supremum form sup over s in [2, p] of (p/s)(sigma^2/(p M^2))^(1/s) M.

    Evaluated at the closed-form maximizer s* = clip(log(p M^2/sigma^2), 2, p);
    agrees with the case form to floating-point accuracy.
    """
    if m_max == 0 or variance == 0:
        return 0.0
    _check_envelope_args(p, m_max, variance)
    r = _log_ratio(p, m_max, variance)
    s_star = min(max(2.0, r), p)
    return m_max * (p / s_star) * math.exp(-r / s_star)


def envelope_sup_golden(p, m_max, variance, iters=120) -> float:
    """Supremum form evaluated by golden-section search, as an independent check."""
    if m_max == 0 or variance == 0:
        return 0.0
    _check_envelope_args(p, m_max, variance)
    r = _log_ratio(p, m_max, variance)

    def logval(s):
        return math.log(p / s) - r / s

    lo, hi = 2.0, float(p)
    if hi <= lo:
        return m_max * (p / 2.0) * math.exp(-r / 2.0)
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = logval(c), logval(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = logval(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = logval(d)
    best = max(fc, fd, logval(lo), logval(hi))
    return m_max * math.exp(best)


def envelope_report(p, m_max, variance, lam=2.0) -> dict:
    """Pass/fail report for the envelope's algebraic properties at one point.

    Each entry carries (holds, slack, applicable); slack is the margin by
    which the inequality holds, nonnegative when it does.
    """
    if lam < 1:
        raise ValueError("scale factor must be >= 1")
    val = envelope(p, m_max, variance)
    sup = envelope_sup(p, m_max, variance)
    rtol = 1e-9
    eq_tol = 1e-12
    sigma = math.sqrt(variance)
    report = {}

    rel = abs(val - sup) / val if val else 0.0
    report["sup_matches_cases"] = dict(holds=rel <= rtol, slack=rtol - rel, applicable=True)

    upper = max(0.5 * math.sqrt(p) * sigma, p * m_max / (2 * E))
    report["bernstein_upper"] = dict(
        holds=val <= upper * (1 + eq_tol), slack=upper - val, applicable=True)

    lower = 0.5 * math.sqrt(p) * sigma
    report["sqrt_p_sigma_lower"] = dict(
        holds=lower <= val * (1 + eq_tol), slack=val - lower, applicable=True)

    far_out = E * E * variance / (m_max * m_max) <= p
    if far_out:
        r = _log_ratio(p, m_max, variance)
        cap = p / (E * r) * m_max
        report["large_p_upper"] = dict(
            holds=val <= cap * (1 + eq_tol), slack=cap - val, applicable=True)
    else:
        report["large_p_upper"] = dict(holds=True, slack=0.0, applicable=False)

    grown = envelope(p, lam * m_max, lam * variance)
    report["scale_up_bounded"] = dict(
        holds=grown <= lam * val * (1 + eq_tol), slack=lam * val - grown, applicable=True)

    reverse = envelope(p, lam * lam * m_max, lam * lam * variance)
    report["scale_reverse"] = dict(
        holds=lam * val <= reverse * (1 + eq_tol), slack=reverse - lam * val, applicable=True)

    exact = envelope(p, lam * m_max, lam * lam * variance)
    rel = abs(exact - lam * val) / (lam * val) if val else 0.0
    report["exact_scaling"] = dict(holds=rel <= 1e-12, slack=1e-12 - rel, applicable=True)
    return report


# ---------------------------------------------------------------------------
# instance-dependent inflation factors


def inflation_simple(p, m, c, spread, weight_ratio) -> float:
    """Inflation factor of the simple-tabulation moment bound.

    max(log m + log(weight_ratio)/c, p) over log(e^2 m / spread); requires
    spread < e^2 m so the denominator is positive.
    """
    if p < 2 or m < 2 or c < 1:
        raise ValueError("need p >= 2, m >= 2, c >= 1")
    if spread < 1 or weight_ratio < 1:
        raise ValueError("spread and weight_ratio are at least 1")
    denom = 2.0 + math.log(m) - math.log(spread)
    if denom <= 0:
        raise ValueError("spread must stay below e^2 * m")
    num = max(math.log(m) + math.log(weight_ratio) / c, p)
    return num / denom


def inflation_mixed(p, m, alphabet) -> float:
    """Inflation factor of the mixed-tabulation moment bound."""
    if p < 2 or m < 2 or alphabet < 2:
        raise ValueError("need p >= 2, m >= 2, alphabet >= 2")
    la = math.log(alphabet)
    return max(1.0, math.log(m) / la, p / la)


# ---------------------------------------------------------------------------
# theorem-shaped moment bounds


def bound_fully_random(p, stats: ValueStats, constants=DEFAULT_CONSTANTS) -> float:
    """p-norm bound for a uniformly random hash function."""
    if stats.m_max == 0 or stats.sigma2 == 0:
        return 0.0
    return constants.envelope_scale * envelope(p, stats.m_max, stats.sigma2)


def bound_simple(p, stats: ValueStats, params, constants=DEFAULT_CONSTANTS) -> float:
    """p-norm bound for simple tabulation with c characters."""
    if stats.m_max == 0 or stats.sigma2 == 0:
        return 0.0
    c = params.num_chars
    gamma = inflation_simple(p, params.range_size, c, stats.spread_max, stats.weight_ratio)
    scale = (constants.per_char_base * c) ** (c - 1) * gamma ** (c - 1)
    return constants.leading * envelope(p, scale * stats.m_max, scale * stats.sigma2)


def bound_mixed(p, stats: ValueStats, params, constants=DEFAULT_CONSTANTS) -> float:
    """p-norm bound for mixed tabulation with c characters and d >= 1 derived ones."""
    if stats.m_max == 0 or stats.sigma2 == 0:
        return 0.0
    if params.derived_chars < 1:
        raise ValueError("mixed bound needs at least one derived character")
    c = params.num_chars
    gamma = inflation_mixed(p, params.range_size, params.alphabet_size)
    scale = constants.leading * (constants.per_char_base * c) ** c * gamma**c
    return envelope(p, scale * stats.m_max, scale * stats.sigma2)


# ---------------------------------------------------------------------------
# tail bounds


def bennett_growth(x) -> float:
    """(1 + x) log(1 + x) - x, the exponent shape in Bennett's inequality."""
    if x < 0:
        raise ValueError("nonnegative arguments only")
    return (1.0 + x) * math.log1p(x) - x


def bennett_exponent(t, m_max, variance) -> float:
    """The exponent (sigma^2/M^2) C(t M / sigma^2) of Bennett's bound.

    Exposed separately because the probability itself underflows to zero for
    large deviations while exponent comparisons stay meaningful.
    """
    if t < 0:
        raise ValueError("deviation must be nonnegative")
    if m_max == 0 or variance == 0:
        return math.inf if t > 0 else 0.0
    return variance / m_max**2 * bennett_growth(t * m_max / variance)


def bennett_tail(t, m_max, variance) -> float:
    """Bennett's inequality: two-sided tail bound at deviation t, clamped to 1."""
    if m_max == 0 or variance == 0:
        return 1.0 if t == 0 else 0.0
    return min(1.0, 2.0 * math.exp(-bennett_exponent(t, m_max, variance)))


def bennett_tail_branches(t, m_max, variance) -> float:
    """The two-branch simplification of Bennett's bound."""
    if t < 0:
        raise ValueError("deviation must be nonnegative")
    if m_max == 0 or variance == 0:
        return 1.0 if t == 0 else 0.0
    if t <= variance / m_max:
        return min(1.0, 2.0 * math.exp(-t * t / (3.0 * variance)))
    return min(1.0, 2.0 * math.exp(-t / (2.0 * m_max) * math.log1p(t * m_max / variance)))


def markov_tail_detail(t, m_max, variance, scale=None):
    """(probability, moment order used, branch) of the norm-to-tail conversion.

    Assumes central p-norms bounded by scale times the envelope and applies
    Markov's inequality with the branch-specific choice of p.  Overlapping
    branch conditions resolve to the smallest applicable bound.
    """
    if scale is None:
        scale = DEFAULT_CONSTANTS.markov_scale
    if t <= 0:
        raise ValueError("deviation must be positive")
    if m_max == 0 or variance == 0:
        return 0.0, 2.0, 0
    L = scale
    sigma = math.sqrt(variance)
    candidates = []
    if t <= L * max(m_max, E * sigma / math.sqrt(2.0)):
        candidates.append((L * L * variance / (2.0 * t * t), 2.0, 1))
    if L * E * sigma / math.sqrt(2.0) <= t <= L * E * E * variance / (2.0 * m_max):
        p = 4.0 * t * t / (E * E * L * L * variance)
        candidates.append((math.exp(-p), p, 2))
    if L * max(E * E * variance / (2.0 * m_max), m_max) <= t:
        p = t / (L * m_max) * math.log(2.0 * t * m_max / (L * variance))
        candidates.append((math.exp(-p), p, 3))
    prob, p, branch = min(candidates)
    return min(1.0, prob), p, branch


def markov_tail(t, m_max, variance, scale=None) -> float:
    """Tail bound from the envelope moment bound via Markov's inequality."""
    return markov_tail_detail(t, m_max, variance, scale)[0]


def mixed_tail(t, stats: ValueStats, params, gamma, constants=DEFAULT_CONSTANTS) -> float:
    """Bennett-shaped tail for mixed tabulation plus a polynomially small additive term.

    Requires the range to be at most the gamma-th power of the universe.
    """
    if t < 0:
        raise ValueError("deviation must be nonnegative")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    key_bits = params.char_bits * params.num_chars
    if params.range_bits > gamma * key_bits:
        raise ValueError("range exceeds the stated power of the universe")
    extra = 2.0 ** (-gamma * key_bits)
    if stats.m_max == 0 or stats.sigma2 == 0:
        return min(1.0, (1.0 if t == 0 else 0.0) + extra)
    c = params.num_chars
    k_factor = constants.leading * (constants.per_char_base * c * c * gamma) ** c
    expo = stats.sigma2 / stats.m_max**2 * bennett_growth(t * stats.m_max / stats.sigma2)
    return min(1.0, math.exp(-expo / k_factor) + extra)


# ---------------------------------------------------------------------------
# Poisson central p-norms


def poisson_central_pnorm(lam, p) -> float:
    """E[|X - lam|^p]^(1/p) for X Poisson with mean lam, by direct summation.

    The series is cut at lam + 50 sqrt(lam) + 50 p and the cut is validated by
    doubling; the two values must agree to 1e-12 relative.
    """
    if lam <= 0:
        raise ValueError("mean must be positive")
    if p < 2:
        raise ValueError("moment order must be >= 2")

    def log_moment(cut):
        n = np.arange(0, cut + 1, dtype=np.float64)
        logpmf = n * math.log(lam) - lam - gammaln(n + 1.0)
        diff = np.abs(n - lam)
        mask = diff > 0
        return float(logsumexp(logpmf[mask] + p * np.log(diff[mask])))

    cut = int(math.ceil(lam + 50.0 * math.sqrt(lam) + 50.0 * p))
    base = math.exp(log_moment(cut) / p)
    doubled = math.exp(log_moment(2 * cut) / p)
    if abs(base - doubled) > 1e-12 * doubled:
        raise ArithmeticError("series cut too aggressive for the requested accuracy")
    return base


def bound_table_rows(p_list, stats: ValueStats, params, kind, constants=DEFAULT_CONSTANTS):
    """Rows for the CSV bound table: p, M, sigma2, case_id, psi, bound, gamma_p."""
    rows = []
    for p in p_list:
        degenerate = stats.m_max == 0 or stats.sigma2 == 0
        case = 0 if degenerate else envelope_case(p, stats.m_max, stats.sigma2)
        env = envelope(p, stats.m_max, stats.sigma2)
        if kind == "simple":
            gamma = inflation_simple(p, params.range_size, params.num_chars,
                                     stats.spread_max, stats.weight_ratio)
            bound = bound_simple(p, stats, params, constants)
        elif kind == "mixed":
            gamma = inflation_mixed(p, params.range_size, params.alphabet_size)
            bound = bound_mixed(p, stats, params, constants)
        else:
            gamma = 1.0
            bound = bound_fully_random(p, stats, constants)
        rows.append(dict(p=p, M=stats.m_max, sigma2=stats.sigma2, case_id=case,
                         psi=env, bound=bound, gamma_p=gamma))
    return rows
