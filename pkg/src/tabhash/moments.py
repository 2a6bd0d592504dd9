"""Exact and Monte Carlo central-moment estimation for hash-based sums.

Exact mode enumerates every fill of the scheme's tables with equal weight,
which is the reference oracle for everything else.  Monte Carlo mode draws
independent table fills from counter-indexed streams, so a request is
reproducible bit for bit regardless of batch size or thread count.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .bounds import DEFAULT_CONSTANTS, bound_fully_random, bound_mixed, bound_simple
from .tabulation import (ENUM_BUDGET_BITS, TAG_FUSED, TAG_H2, TAG_H3, TAG_HASH,
                         TAG_RANDOM_HASH, TAG_RANDOM_SIGN, TAG_SIGN, TAG_SIGN1, TAG_SIGN3,
                         EnumerationBudgetError, SchemeSpec, blocks_per_sample, key_chars,
                         parse_scheme, raw_words)
from .values import QueryValueFunction, ValueFunction

EXACT_SUPPORT_LIMIT = 256
MIN_SAMPLES = 100
JACKKNIFE_BLOCK = 100


def _as_spec(scheme) -> SchemeSpec:
    return scheme if isinstance(scheme, SchemeSpec) else parse_scheme(scheme)


@dataclass(frozen=True)
class MomentRequest:
    """One moment-estimation job; identical requests produce identical reports."""

    scheme: str
    values: ValueFunction
    p_list: tuple
    mode: str = "exact"  # "exact" | "monte_carlo"
    samples: int = 0
    base_seed: int = 0
    sign_mode: str = "none"  # "none" | "simple" | "mixed"
    query: int | None = None
    threads: int = 1

    def spec(self) -> SchemeSpec:
        return _as_spec(self.scheme)


@dataclass(frozen=True)
class MomentEntry:
    p: float
    estimate: float
    std_error: float
    bound: float
    ratio: float


@dataclass
class MomentReport:
    scheme: str
    mode: str
    sign_mode: str
    samples: int
    base_seed: int
    mean: float
    entries: list = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_json(self, include_timing=False) -> str:
        doc = dict(scheme=self.scheme, mode=self.mode, sign_mode=self.sign_mode,
                   samples=self.samples, base_seed=self.base_seed, mean=self.mean,
                   entries=[dict(p=e.p, estimate=e.estimate, std_error=e.std_error,
                                 bound=e.bound, ratio=e.ratio) for e in self.entries])
        if include_timing:
            doc["wall_time_s"] = self.wall_time_s
        return json.dumps(doc)

    def csv_rows(self):
        return [dict(scheme=self.scheme, mode=self.mode, sign_mode=self.sign_mode,
                     samples=self.samples, base_seed=self.base_seed, p=e.p,
                     estimate=e.estimate, std_error=e.std_error, bound=e.bound,
                     ratio=e.ratio) for e in self.entries]


# ---------------------------------------------------------------------------
# p-norms of sample arrays


def pnorm(x, p) -> float:
    """(mean |x_i|^p)^(1/p) in log space, safe for large p."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    mask = ax > 0
    if not np.any(mask):
        return 0.0
    lse = float(logsumexp(p * np.log(ax[mask])))
    return math.exp((lse - math.log(x.size)) / p)


def pnorm_with_jackknife(x, p, block=JACKKNIFE_BLOCK):
    """(estimate, standard error) with delete-one-block jackknife over sample blocks."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    est = pnorm(x, p)
    if est == 0.0:
        return 0.0, 0.0
    n_blocks = max(2, n // block)
    pieces = np.array_split(np.arange(n), n_blocks)
    logs = np.full(n, -np.inf)
    ax = np.abs(x)
    mask = ax > 0
    logs[mask] = p * np.log(ax[mask])
    block_lse = np.array([logsumexp(logs[idx]) for idx in pieces])
    block_n = np.array([len(idx) for idx in pieces], dtype=np.float64)
    total = logsumexp(block_lse)
    leave_out = np.empty(n_blocks)
    for b in range(n_blocks):
        delta = block_lse[b] - total
        if delta >= 0:
            rest = -np.inf
        else:
            rest = total + math.log1p(-math.exp(delta))
        if np.isneginf(rest):
            leave_out[b] = 0.0
        else:
            leave_out[b] = math.exp((rest - math.log(n - block_n[b])) / p)
    se = math.sqrt((n_blocks - 1) / n_blocks * np.sum((leave_out - leave_out.mean()) ** 2))
    return est, se


# ---------------------------------------------------------------------------
# exact enumeration


def _enum_plan_simple(spec, with_sign):
    p = spec.params
    size = p.alphabet_size
    n_slots = p.num_chars * size
    bits = n_slots * p.range_bits + (n_slots if with_sign else 0)
    if bits > ENUM_BUDGET_BITS:
        raise EnumerationBudgetError(
            f"{bits} bits of table entropy exceeds the {ENUM_BUDGET_BITS}-bit budget")
    sign_base = n_slots * p.range_bits if with_sign else -1
    return bits, sign_base


def _enum_plan_mixed(spec, with_sign):
    p = spec.params
    size = p.alphabet_size
    fused_width = p.range_bits + p.derived_chars * p.char_bits
    fused_bits = p.num_chars * size * fused_width
    h3_bits = p.derived_chars * size * p.range_bits
    bits = fused_bits + h3_bits
    sign1_base = sign3_base = -1
    if with_sign:
        sign1_base = bits
        sign3_base = bits + p.num_chars * size
        bits += p.num_chars * size + p.derived_chars * size
    if bits > ENUM_BUDGET_BITS:
        raise EnumerationBudgetError(
            f"{bits} bits of table entropy exceeds the {ENUM_BUDGET_BITS}-bit budget")
    return bits, fused_width, fused_bits, sign1_base, sign3_base


def _key_slots(keys, params):
    chars = key_chars(keys, params)
    slots = np.empty((len(keys), params.num_chars), dtype=np.int64)
    for i in range(params.num_chars):
        slots[:, i] = i * params.alphabet_size + chars[i]
    return slots


def exact_values(spec, vf: ValueFunction, sign_mode="none"):
    """The hash-based sum under every table fill, equally weighted.

    Returns a float array of length 2^(table entropy bits).
    """
    spec = _as_spec(spec)
    params = spec.params
    if params.range_size != vf.m:
        raise ValueError("value function range does not match scheme")
    if vf.n_keys > EXACT_SUPPORT_LIMIT:
        raise EnumerationBudgetError(
            f"support of {vf.n_keys} keys exceeds the exact-mode limit of {EXACT_SUPPORT_LIMIT}")
    with_sign = sign_mode != "none"
    slots = _key_slots(vf.support_keys, params)
    vmat = vf.rows_matrix()
    if spec.kind == "simple":
        if sign_mode not in ("none", "simple"):
            raise ValueError("simple schemes pair with the simple sign")
        bits, sign_base = _enum_plan_simple(spec, with_sign)
        out = np.empty(1 << bits, dtype=np.float64)
        _kernels.enum_simple(1 << bits, slots, params.range_bits, sign_base, vmat, out)
        return out
    if spec.kind == "mixed":
        if sign_mode not in ("none", "mixed"):
            raise ValueError("mixed schemes pair with the mixed sign")
        bits, fused_width, fused_bits, s1, s3 = _enum_plan_mixed(spec, with_sign)
        out = np.empty(1 << bits, dtype=np.float64)
        _kernels.enum_mixed(1 << bits, slots, params.char_bits, params.range_bits,
                            params.derived_chars, fused_width, fused_bits, s1, s3, vmat, out)
        return out
    raise ValueError("exact mode needs a tabulation scheme")


def exact_query_values(spec, qvf: QueryValueFunction):
    """(sum, query bin) pairs across every table fill of a simple scheme."""
    spec = _as_spec(spec)
    params = spec.params
    if spec.kind != "simple":
        raise ValueError("exact query conditioning is implemented for simple schemes")
    if params.range_size != qvf.m:
        raise ValueError("value function range does not match scheme")
    if qvf.n_keys + 1 > EXACT_SUPPORT_LIMIT:
        raise EnumerationBudgetError("support too large for exact mode")
    bits, _ = _enum_plan_simple(spec, False)
    n_fill = 1 << bits
    q_slots = _key_slots(np.array([qvf.query], dtype=np.uint64), params)[0]
    hq = _kernels.enum_hash_of_key(n_fill, q_slots, params.range_bits)
    slots = _key_slots(qvf.support_keys, params)
    x = np.zeros(n_fill, dtype=np.float64)
    if qvf.kind == "collision":
        for i in range(qvf.n_keys):
            h = _kernels.enum_hash_of_key(n_fill, slots[i], params.range_bits)
            x += qvf.weights[i] * ((h == hq) - 1.0 / params.range_size)
    else:
        for i in range(qvf.n_keys):
            h = _kernels.enum_hash_of_key(n_fill, slots[i], params.range_bits)
            x += qvf.mat3[i][h, hq]
    return x, hq


# ---------------------------------------------------------------------------
# Monte Carlo sampling of table fills


def _stream_slice(seed, tag, words_per_sample, first, count):
    """Words for samples [first, first+count) of the (seed, tag) stream."""
    bps = blocks_per_sample(words_per_sample)
    words = raw_words(seed, tag, first * bps, count * bps * 4)
    return words.reshape(count, bps * 4)[:, :words_per_sample]


def _gather_rows(tables, idx):
    # tables (B, rows, size), idx (B, n) per-sample char indices for one row set
    return np.take_along_axis(tables, idx, axis=2)


def _mc_hash_batch(spec, chars, seed, first, count):
    """Hash matrix (count, n_keys) plus derived characters for mixed schemes."""
    p = spec.params
    size = p.alphabet_size
    n = chars.shape[1]
    m_mask = np.uint64(p.range_size - 1)
    if spec.kind == "simple":
        words = _stream_slice(seed, TAG_HASH, p.num_chars * size, first, count)
        tables = (words & m_mask).reshape(count, p.num_chars, size)
        return _kernels.hash_batch(tables, chars), None
    if spec.kind == "mixed":
        fused_width = p.range_bits + p.derived_chars * p.char_bits
        f_mask = np.uint64((1 << fused_width) - 1)
        words = _stream_slice(seed, TAG_FUSED, p.num_chars * size, first, count)
        fused = (words & f_mask).reshape(count, p.num_chars, size)
        fx = _kernels.hash_batch(fused, chars)
        h = fx & m_mask
        deriv = fx >> np.uint64(p.range_bits)
        words3 = _stream_slice(seed, TAG_H3, p.derived_chars * size, first, count)
        h3 = (words3 & m_mask).reshape(count, p.derived_chars, size)
        cmask = size - 1
        for j in range(p.derived_chars):
            idx = ((deriv >> (j * p.char_bits)) & cmask).astype(np.int64)
            h ^= np.take_along_axis(h3[:, j, :], idx, axis=1)
        return h, deriv
    words = _stream_slice(seed, TAG_RANDOM_HASH, n, first, count)
    return words & m_mask, None


def _mc_sign_batch(spec, sign_mode, chars, deriv, seed, first, count):
    """Sign matrix (count, n_keys) as +-1 int8, or None."""
    if sign_mode == "none":
        return None
    p = spec.params
    size = p.alphabet_size
    n = chars.shape[1]
    if spec.kind == "random":
        words = _stream_slice(seed, TAG_RANDOM_SIGN, n, first, count)
        bits = (words & np.uint64(1)).astype(np.int64)
        return (1 - 2 * bits).astype(np.int8)
    if sign_mode == "simple":
        if spec.kind != "simple":
            raise ValueError("the simple sign pairs with the simple scheme")
        words = _stream_slice(seed, TAG_SIGN, p.num_chars * size, first, count)
        tables = (words & np.uint64(1)).reshape(count, p.num_chars, size)
        bits = _kernels.hash_batch(tables, chars).astype(np.int64)
        return (1 - 2 * bits).astype(np.int8)
    if sign_mode != "mixed" or spec.kind != "mixed":
        raise ValueError("the mixed sign pairs with the mixed scheme")
    words1 = _stream_slice(seed, TAG_SIGN1, p.num_chars * size, first, count)
    eps1 = (words1 & np.uint64(1)).reshape(count, p.num_chars, size)
    bits = _kernels.hash_batch(eps1, chars)
    words3 = _stream_slice(seed, TAG_SIGN3, p.derived_chars * size, first, count)
    eps3 = (words3 & np.uint64(1)).reshape(count, p.derived_chars, size)
    cmask = size - 1
    for j in range(p.derived_chars):
        idx = ((deriv >> (j * p.char_bits)) & cmask).astype(np.int64)
        bits = bits ^ np.take_along_axis(eps3[:, j, :], idx, axis=1)
    return (1 - 2 * bits.astype(np.int64)).astype(np.int8)


def _batch_size(n_keys):
    return max(1, min(4096, (1 << 22) // max(1, n_keys)))


def monte_carlo_values(spec, vf, samples, base_seed, sign_mode="none", threads=1,
                       query=None):
    """Hash-based sums for `samples` independent table fills.

    With a query key, returns (sums, query bins) and `vf` must be a
    QueryValueFunction.
    """
    spec = _as_spec(spec)
    params = spec.params
    if params.range_size != vf.m:
        raise ValueError("value function range does not match scheme")
    keys = vf.support_keys
    if query is not None:
        if sign_mode != "none":
            raise ValueError("query conditioning does not combine with signs")
        keys = np.append(keys, np.uint64(int(query)))
    chars = key_chars(keys, params)
    x = np.empty(samples, dtype=np.float64)
    qbins = np.empty(samples, dtype=np.int64) if query is not None else None

    def run_batch(first, count):
        h, deriv = _mc_hash_batch(spec, chars, base_seed, first, count)
        h = h.astype(np.int64)
        if query is not None:
            qb = h[:, -1]
            x[first:first + count] = vf.evaluate_batch(h[:, :-1], qb)
            qbins[first:first + count] = qb
            return
        signs = _mc_sign_batch(spec, sign_mode, chars, deriv, base_seed, first, count)
        x[first:first + count] = vf.hash_sum_batch(h, signs)

    bsize = _batch_size(chars.shape[1])
    starts = list(range(0, samples, bsize))
    jobs = [(s, min(bsize, samples - s)) for s in starts]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda job: run_batch(*job), jobs))
    else:
        for job in jobs:
            run_batch(*job)
    if query is not None:
        return x, qbins
    return x


# ---------------------------------------------------------------------------
# report assembly


def _matching_bound(spec, p, stats, constants):
    if spec.kind == "simple":
        return bound_simple(p, stats, spec.params, constants)
    if spec.kind == "mixed":
        return bound_mixed(p, stats, spec.params, constants)
    return bound_fully_random(p, stats, constants)


def _query_bound(spec, qvf, p, constants):
    # a bound on the aggregated norm: the worst per-bucket conditional bound
    if qvf.kind == "collision":
        return _matching_bound(spec, p, qvf.bucket_stats(0), constants)
    return max(_matching_bound(spec, p, qvf.bucket_stats(b), constants)
               for b in range(qvf.m))


def _build_report(req, x, exact, constants):
    spec = req.spec()
    stats = req.values.stats()
    mean = float(math.fsum(x) / x.size) if x.size <= (1 << 20) else float(x.mean())
    centered = x - mean
    entries = []
    for p in req.p_list:
        if p < 2:
            raise ValueError("moment orders must be >= 2")
        if exact:
            est, se = pnorm(centered, p), 0.0
        else:
            est, se = pnorm_with_jackknife(centered, p)
        bound = _matching_bound(spec, p, stats, constants)
        ratio = est / bound if bound > 0 else math.nan
        entries.append(MomentEntry(p=float(p), estimate=est, std_error=se,
                                   bound=bound, ratio=ratio))
    return MomentReport(scheme=spec.describe(), mode=req.mode, sign_mode=req.sign_mode,
                        samples=x.size, base_seed=req.base_seed, mean=mean, entries=entries)


def exact_moments(req: MomentRequest, constants=DEFAULT_CONSTANTS) -> MomentReport:
    """Exact mean and central p-norms by total enumeration of table fills.

    With a query key the report aggregates over the query's bin and pairs the
    estimates with the worst per-bucket conditional bound.
    """
    start = time.perf_counter()
    if req.query is not None:
        report = _query_report(req, exact=True, constants=constants)
    else:
        x = exact_values(req.spec(), req.values, req.sign_mode)
        report = _build_report(req, x, exact=True, constants=constants)
    report.mode = "exact"
    report.wall_time_s = time.perf_counter() - start
    return report


def _query_report(req, exact, constants):
    spec = req.spec()
    qvf = req.values
    if not isinstance(qvf, QueryValueFunction) or qvf.query != req.query:
        raise ValueError("query requests need the matching QueryValueFunction")
    if exact:
        x, _ = exact_query_values(spec, qvf)
    else:
        x, _ = monte_carlo_values(spec, qvf, req.samples, req.base_seed,
                                  threads=req.threads, query=req.query)
    entries = []
    for p in req.p_list:
        est, se = (pnorm(x, p), 0.0) if exact else pnorm_with_jackknife(x, p)
        bound = _query_bound(spec, qvf, p, constants)
        ratio = est / bound if bound > 0 else math.nan
        entries.append(MomentEntry(p=float(p), estimate=est, std_error=se,
                                   bound=bound, ratio=ratio))
    return MomentReport(scheme=spec.describe(), mode=req.mode, sign_mode=req.sign_mode,
                        samples=x.size, base_seed=req.base_seed,
                        mean=float(x.mean()), entries=entries)


def monte_carlo_moments(req: MomentRequest, constants=DEFAULT_CONSTANTS) -> MomentReport:
    """Estimated central p-norms over sampled table fills, with jackknife errors.

    Centering uses the analytic mean zero of the value function rather than
    the sample mean, which would bias small-sample p-norms.
    """
    if req.samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples")
    start = time.perf_counter()
    if req.query is not None:
        report = _query_report(req, exact=False, constants=constants)
        report.mode = "monte_carlo"
        report.wall_time_s = time.perf_counter() - start
        return report
    x = monte_carlo_values(req.spec(), req.values, req.samples, req.base_seed,
                           req.sign_mode, req.threads)
    spec = req.spec()
    stats = req.values.stats()
    entries = []
    for p in req.p_list:
        if p < 2:
            raise ValueError("moment orders must be >= 2")
        est, se = pnorm_with_jackknife(x, p)
        bound = _matching_bound(spec, p, stats, constants)
        ratio = est / bound if bound > 0 else math.nan
        entries.append(MomentEntry(p=float(p), estimate=est, std_error=se,
                                   bound=bound, ratio=ratio))
    report = MomentReport(scheme=spec.describe(), mode="monte_carlo",
                          sign_mode=req.sign_mode, samples=req.samples,
                          base_seed=req.base_seed, mean=float(x.mean()), entries=entries)
    report.wall_time_s = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# bin-profile sum of squares


def _norm_sums(vf: ValueFunction):
    """(sum of squared l1 norms, sum of squared l2 norms) over support keys."""
    if vf.kind in ("single_bin", "threshold"):
        w, base = vf.proportional_base()
        b1 = float(np.abs(base).sum())
        b2 = float((base**2).sum())
        w2 = float((w**2).sum())
        return w2 * b1 * b1, w2 * b2
    mat = vf.rows_matrix()
    return float((np.abs(mat).sum(axis=1) ** 2).sum()), float((mat**2).sum())


def sum_of_squares_statistic(vf: ValueFunction, hash_fn, sign_fn) -> float:
    """Sum over shifts j of the squared signed bin profile.

    The profile at shift j is the signed sum of contributions evaluated at
    each key's hash XOR j; the statistic adds the squared profile over all j.
    """
    h = hash_fn.hash_array(vf.support_keys).astype(np.int64)
    eps = sign_fn.sign_array(vf.support_keys).astype(np.float64)
    m = vf.m
    prop = vf.proportional_base()
    if prop is not None:
        w, base = prop
        bucket = np.bincount(h, weights=eps * w, minlength=m).astype(np.float64)
        tb = _kernels.fwht(bucket.reshape(1, m).copy())[0]
        tbase = _kernels.fwht(base.reshape(1, m).copy())[0]
        return float(((tb * tbase) ** 2).sum() / m)
    profile = np.zeros(m, dtype=np.float64)
    if vf.kind == "sparse":
        for i in range(vf.n_keys):
            bins = vf.bins_list[i]
            if len(bins):
                np.add.at(profile, bins ^ h[i], eps[i] * vf.vals_list[i])
    else:
        shifts = np.arange(m, dtype=np.int64)
        for i in range(vf.n_keys):
            profile += eps[i] * vf.mat[i][h[i] ^ shifts]
    return float((profile**2).sum())


def sum_of_squares_pnorms(vf: ValueFunction, spec, p_list, samples, base_seed,
                          threads=1):
    """Monte Carlo (p/2)-norms of the bin-profile statistic with reference scales.

    p_list holds moment orders of the underlying signed sum; the squared
    statistic is measured at p/2 and compared against the scale
    max(1, (p / (2 log(e^2 m L2/L1)))^c) * L2, where L1 and L2 are the summed
    squared l1/l2 row norms.  Reported ratios are estimate over scale.
    """
    spec = _as_spec(spec)
    params = spec.params
    if spec.kind != "simple":
        raise ValueError("the bin-profile statistic is defined for simple schemes")
    prop = vf.proportional_base()
    if prop is None:
        raise ValueError("Monte Carlo mode supports proportional value functions")
    w, base = prop
    m = vf.m
    if m > (1 << 20):
        raise ValueError("range too large for the bin-profile accumulator")
    chars = key_chars(vf.support_keys, params)
    tbase = _kernels.fwht(base.reshape(1, m).copy())[0]
    stat = np.empty(samples, dtype=np.float64)

    def run_batch(first, count):
        h, _ = _mc_hash_batch(spec, chars, base_seed, first, count)
        signs = _mc_sign_batch(spec, "simple", chars, None, base_seed, first, count)
        sw = signs * w
        flat = (np.arange(count)[:, None] * m + h.astype(np.int64)).ravel()
        buckets = np.bincount(flat, weights=sw.ravel(), minlength=count * m)
        buckets = buckets.reshape(count, m)
        _kernels.fwht(buckets)
        stat[first:first + count] = ((buckets * tbase) ** 2).sum(axis=1) / m

    bsize = _batch_size(vf.n_keys + m)
    jobs = [(s, min(bsize, samples - s)) for s in range(0, samples, bsize)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda job: run_batch(*job), jobs))
    else:
        for job in jobs:
            run_batch(*job)

    l1_sq, l2_sq = _norm_sums(vf)
    denom = 2.0 + math.log(m) + math.log(l2_sq) - math.log(l1_sq)
    rows = []
    for p in p_list:
        if p < 2:
            raise ValueError("moment orders must be >= 2")
        est, se = pnorm_with_jackknife(stat, p / 2.0)
        scale = max(1.0, (p / (2.0 * denom)) ** params.num_chars) * l2_sq
        rows.append(dict(p=float(p), estimate=est, std_error=se, scale=scale,
                         ratio=est / scale))
    return rows


# ---------------------------------------------------------------------------
# symmetrization and sign-sum checks


def symmetrization_check(vf: ValueFunction, spec, p_list):
    """Exact two-sided comparison of the plain and sign-randomized sums.

    The plain p-norm must lie within a factor 2^c of the signed p-norm.
    """
    spec = _as_spec(spec)
    if spec.kind != "simple":
        raise ValueError("the symmetrization comparison is for simple schemes")
    c = spec.params.num_chars
    plain = exact_values(spec, vf, "none")
    signed = exact_values(spec, vf, "simple")
    rows = []
    factor = 2.0**c
    tol = 1e-12
    for p in p_list:
        np_plain = pnorm(plain, p)
        np_signed = pnorm(signed, p)
        lo = np_signed / factor
        hi = np_signed * factor
        holds = (lo <= np_plain * (1 + tol)) and (np_plain <= hi * (1 + tol))
        rows.append(dict(p=float(p), plain=np_plain, signed=np_signed, lower=lo,
                         upper=hi, holds=bool(holds)))
    return rows


def _mixed_sign_batch_standalone(params, chars, seed, first, count):
    size = params.alphabet_size
    words1 = _stream_slice(seed, TAG_SIGN1, params.num_chars * size, first, count)
    eps1 = (words1 & np.uint64(1)).reshape(count, params.num_chars, size)
    bits = _kernels.hash_batch(eps1, chars)
    h2_width = params.derived_chars * params.char_bits
    words2 = _stream_slice(seed, TAG_H2, params.num_chars * size, first, count)
    h2 = (words2 & np.uint64((1 << h2_width) - 1)).reshape(count, params.num_chars, size)
    deriv = _kernels.hash_batch(h2, chars)
    words3 = _stream_slice(seed, TAG_SIGN3, params.derived_chars * size, first, count)
    eps3 = (words3 & np.uint64(1)).reshape(count, params.derived_chars, size)
    cmask = size - 1
    for j in range(params.derived_chars):
        idx = ((deriv >> (j * params.char_bits)) & cmask).astype(np.int64)
        bits = bits ^ np.take_along_axis(eps3[:, j, :], idx, axis=1)
    return (1 - 2 * bits.astype(np.int64)).astype(np.int8)


def khintchine_check(weights, params, p, trials, base_seed, threads=1):
    """Monte Carlo p-norm of a weighted mixed-tabulation sign sum.

    Reports the ratio against sqrt(p) * sqrt(sum w^2) * gamma^(c/2) with
    gamma = max(1, p / log alphabet), plus an i.i.d. sign baseline against
    the classical sqrt(p e sum w^2) bound.
    """
    if params.derived_chars < 1:
        raise ValueError("mixed signs need at least one derived character")
    w = np.asarray(weights, dtype=np.float64)
    keys = np.arange(len(w), dtype=np.uint64)
    chars = key_chars(keys, params)
    x = np.empty(trials, dtype=np.float64)
    base = np.empty(trials, dtype=np.float64)

    def run_batch(first, count):
        signs = _mixed_sign_batch_standalone(params, chars, base_seed, first, count)
        x[first:first + count] = signs @ w
        words = _stream_slice(base_seed, TAG_RANDOM_SIGN, len(w), first, count)
        iid = 1 - 2 * (words & np.uint64(1)).astype(np.int64)
        base[first:first + count] = iid @ w

    bsize = _batch_size(len(w))
    for first in range(0, trials, bsize):
        run_batch(first, min(bsize, trials - first))

    sum_w2 = float((w**2).sum())
    gamma = max(1.0, p / math.log(params.alphabet_size))
    shape = math.sqrt(p * sum_w2) * gamma ** (params.num_chars / 2.0)
    est, se = pnorm_with_jackknife(x, p)
    est_iid, se_iid = pnorm_with_jackknife(base, p)
    classic = math.sqrt(p * math.e * sum_w2)
    return dict(p=float(p), estimate=est, std_error=se, scale=shape, ratio=est / shape,
                iid_estimate=est_iid, iid_std_error=se_iid, iid_scale=classic,
                iid_ratio=est_iid / classic)
