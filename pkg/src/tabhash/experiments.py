"""Packaged experiments: bound sweeps, adversarial instances, independence
checks, the k-partition MinHash study, and throughput benchmarks.

Every experiment is deterministic given its base seed and emits plain rows
(lists of dicts) that the CLI serializes to CSV and JSON.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bounds import (DEFAULT_CONSTANTS, bound_fully_random, bound_mixed, bound_simple,
                     envelope, inflation_mixed, inflation_simple)
from .moments import (_mc_hash_batch, monte_carlo_values, pnorm, pnorm_with_jackknife)
from .tabulation import (MixedTabHash, SchemeParams, SchemeSpec, SimpleTabHash,
                         key_chars, parse_scheme)
from .values import ValueFunction, make_collision_query, make_single_bin, \
    make_threshold


# ---------------------------------------------------------------------------
# adversarial instance with a provably large p-norm


def lower_bound_inflation(p, m) -> float:
    """Inflation factor of the adversarial instance: max(1, p / log(e^2 m / (4(1-1/m))))."""
    if p < 2 or m < 2:
        raise ValueError("need p >= 2 and m >= 2")
    denom = 2.0 + math.log(m) - math.log(4.0 * (1.0 - 1.0 / m))
    return max(1.0, p / denom)


@dataclass(frozen=True)
class LowerBoundInstance:
    """Single-bin instance on a slab of keys whose first characters can collide."""

    params: SchemeParams
    p: float
    gamma: float
    width: int            # 1 + floor(gamma): characters per restricted position
    values: ValueFunction
    m_max: float          # closed form (1 - 1/m)
    sigma2: float         # closed form |alphabet| * width^(c-1) * (1/m)(1 - 1/m)


def build_lower_bound_instance(params: SchemeParams, p,
                               constants=DEFAULT_CONSTANTS) -> LowerBoundInstance:
    """Support [width]^(c-1) x alphabet with unit weights aimed at bin zero."""
    m = params.range_size
    alphabet = params.alphabet_size
    if p > constants.leading * alphabet * math.log(m):
        raise ValueError("moment order outside the instance's valid range")
    gamma = lower_bound_inflation(p, m)
    # at gamma == 1 the instance degenerates to a single restricted character
    width = 1 + math.floor(gamma) if gamma > 1 else 1
    if width > alphabet:
        raise ValueError("inflation factor too large for the alphabet")
    c, k = params.num_chars, params.char_bits
    total = width ** (c - 1) * alphabet
    idx = np.arange(total, dtype=np.uint64)
    keys = np.zeros(total, dtype=np.uint64)
    rem = idx.copy()
    for i in range(c - 1):
        keys |= (rem % np.uint64(width)) << np.uint64(i * k)
        rem //= np.uint64(width)
    keys |= rem << np.uint64((c - 1) * k)
    vf = make_single_bin(np.ones(total), 0, m, keys)
    sigma2 = alphabet * width ** (c - 1) * (1.0 / m) * (1.0 - 1.0 / m)
    return LowerBoundInstance(params=params, p=float(p), gamma=gamma, width=width,
                              values=vf, m_max=1.0 - 1.0 / m, sigma2=sigma2)


def lower_bound_reference(inst: LowerBoundInstance) -> float:
    """Envelope at the instance-inflated parameters, with no leading constant."""
    scale = inst.gamma ** (inst.params.num_chars - 1)
    return envelope(inst.p, scale * inst.m_max, scale * inst.sigma2)


def run_lower_bound_sweep(params: SchemeParams, p_list, samples, base_seed,
                          threads=1, constants=DEFAULT_CONSTANTS):
    """Empirical p-norm of the adversarial instance against its envelope reference."""
    rows = []
    for p in p_list:
        inst = build_lower_bound_instance(params, p, constants)
        spec = SchemeSpec("simple", params)
        x = monte_carlo_values(spec, inst.values, samples, base_seed, threads=threads)
        est, se = pnorm_with_jackknife(x, p)
        ref = lower_bound_reference(inst)
        rows.append(dict(c=params.num_chars, k=params.char_bits, l=params.range_bits,
                         p=float(p), gamma=inst.gamma, width=inst.width,
                         n_support=inst.values.n_keys, estimate=est, std_error=se,
                         reference=ref, ratio=est / ref, samples=samples,
                         base_seed=base_seed))
    return rows


# ---------------------------------------------------------------------------
# bound-versus-empirical sweeps


def standard_corpus(cs=(2, 3, 4), char_bits=8, range_bits=(8, 16), n_support=2048):
    """The default sweep grid: single-bin and mid-threshold value functions."""
    grid = []
    for c, l in itertools.product(cs, range_bits):
        params = SchemeParams(char_bits, c, l)
        m = params.range_size
        keys = np.arange(n_support, dtype=np.uint64)
        w = np.ones(n_support)
        grid.append(dict(params=params, label="bin",
                         values=make_single_bin(w, 0, m, keys)))
        grid.append(dict(params=params, label="threshold",
                         values=make_threshold(w, m // 2, m, keys)))
    return grid


def small_corpus():
    return standard_corpus(cs=(2,), range_bits=(8,), n_support=512)


def _spec_for_theorem(theorem, params: SchemeParams) -> SchemeSpec:
    if theorem == "fully_random":
        return SchemeSpec("random", params)
    if theorem == "simple":
        return SchemeSpec("simple", params)
    if theorem == "mixed":
        mixed = SchemeParams(params.char_bits, params.num_chars, params.range_bits, 1)
        return SchemeSpec("mixed", mixed)
    raise ValueError(f"unknown theorem family {theorem!r}")


def run_bound_sweep(theorem, grid=None, p_list=None, samples=3000, base_seed=0,
                    threads=1, constants=DEFAULT_CONSTANTS):
    """Empirical p-norms against the matching theorem bound over a corpus.

    Emits one row per (instance, p) with the estimate, the bound, and their
    ratio; the ratio column is the quantity the acceptance gate monitors.
    """
    if grid is None:
        grid = standard_corpus()
    rows = []
    for item in grid:
        params = item["params"]
        vf = item["values"]
        spec = _spec_for_theorem(theorem, params)
        stats = vf.stats()
        ps = p_list or (2, 4, 8, 16, math.log(vf.n_keys))
        x = monte_carlo_values(spec, vf, samples, base_seed, threads=threads)
        for p in ps:
            est, se = pnorm_with_jackknife(x, p)
            if theorem == "simple":
                bound = bound_simple(p, stats, spec.params, constants)
                gamma = inflation_simple(p, params.range_size, params.num_chars,
                                         stats.spread_max, stats.weight_ratio)
                scale = gamma ** (params.num_chars - 1)
            elif theorem == "mixed":
                bound = bound_mixed(p, stats, spec.params, constants)
                gamma = inflation_mixed(p, params.range_size, params.alphabet_size)
                scale = gamma**params.num_chars
            else:
                bound = bound_fully_random(p, stats, constants)
                gamma = 1.0
                scale = 1.0
            # constant-free envelope at the inflated parameters: the quantity
            # the acceptance gate compares against a pilot-frozen ceiling
            reference = envelope(p, scale * stats.m_max, scale * stats.sigma2)
            rows.append(dict(theorem=theorem, c=params.num_chars, k=params.char_bits,
                             l=params.range_bits, value=item["label"],
                             n_support=vf.n_keys, p=float(p), estimate=est,
                             std_error=se, bound=bound, ratio=est / bound,
                             reference=reference, ratio_ref=est / reference,
                             gamma_p=gamma, samples=samples, base_seed=base_seed))
    return rows


def run_query_sweep(grid=None, p_list=(2, 4, 8), samples=20000, base_seed=0,
                    threads=1, constants=DEFAULT_CONSTANTS):
    """Conditional p-norms bucketed by the query's bin, against per-bucket bounds.

    Rows with query_bin >= 0 condition on that bin; the query_bin = -1 row
    aggregates over all samples.  Grid items may set kind to "mixed" to run the
    two-layer scheme.
    """
    if grid is None:
        params = SchemeParams(4, 2, 4)
        qvf = make_collision_query(np.ones(256), 0, params.range_size,
                                   np.arange(1, 257, dtype=np.uint64))
        grid = [dict(params=params, label="collision", values=qvf, kind="simple"),
                dict(params=SchemeParams(4, 2, 4, 1), label="collision", values=qvf,
                     kind="mixed")]
    rows = []
    for item in grid:
        params = item["params"]
        qvf = item["values"]
        kind = item.get("kind", "simple")
        spec = SchemeSpec(kind, params)
        x, qb = monte_carlo_values(spec, qvf, samples, base_seed, threads=threads,
                                   query=qvf.query)
        for p in p_list:
            for b in [-1] + sorted(int(v) for v in np.unique(qb)):
                sel = x if b < 0 else x[qb == b]
                if sel.size == 0:
                    continue
                stats = qvf.bucket_stats(max(b, 0))
                if kind == "mixed":
                    bound = bound_mixed(p, stats, params, constants)
                else:
                    bound = bound_simple(p, stats, params, constants)
                est = pnorm(sel, p)
                rows.append(dict(scheme=kind, c=params.num_chars, k=params.char_bits,
                                 l=params.range_bits, value=item["label"],
                                 query_bin=b, count=int(sel.size), p=float(p),
                                 estimate=est, bound=bound,
                                 ratio=est / bound if bound > 0 else math.nan,
                                 samples=samples, base_seed=base_seed))
    return rows


# ---------------------------------------------------------------------------
# independence structure


def three_wise_uniformity(char_bits=2, num_chars=2, range_bits=2) -> dict:
    """Exhaustive check that all distinct key triples hash jointly uniformly."""
    params = SchemeParams(char_bits, num_chars, range_bits)
    size = params.alphabet_size
    m = params.range_size
    n_fill = 1 << (num_chars * size * range_bits)
    fills = np.arange(n_fill, dtype=np.int64)
    universe = np.arange(params.universe_size, dtype=np.uint64)
    chars = key_chars(universe, params)
    hashes = np.zeros((len(universe), n_fill), dtype=np.int64)
    for i, key_row in enumerate(chars.T):
        for pos, ch in enumerate(key_row):
            slot = pos * size + int(ch)
            hashes[i] ^= (fills >> (slot * range_bits)) & (m - 1)
    expected = n_fill // m**3
    triples = 0
    for a, b, c in itertools.combinations(range(len(universe)), 3):
        codes = (hashes[a] * m + hashes[b]) * m + hashes[c]
        counts = np.bincount(codes, minlength=m**3)
        if not np.all(counts == expected):
            return dict(uniform=False, triples_checked=triples, failing=(a, b, c))
        triples += 1
    return dict(uniform=True, triples_checked=triples, expected_per_cell=expected)


def xor4_identity_test(char_bits=8, range_bits=16, seeds=10000, base_seed=0) -> dict:
    """Fraction of seeds under which the four subcube keys have XOR-zero hashes.

    The keys (0,0), (0,1), (1,0), (1,1) form an empty symmetric difference, so
    one-layer tabulation cancels exactly; the second layer of a mixed scheme
    breaks the identity for most seeds.
    """
    keys = np.array([0, 1 << char_bits, 1, 1 | (1 << char_bits)], dtype=np.uint64)
    out = {}
    for kind, d in (("simple", 0), ("mixed", 1)):
        params = SchemeParams(char_bits, 2, range_bits, d)
        spec = SchemeSpec(kind, params)
        chars = key_chars(keys, params)
        zero = 0
        batch = 1024
        for first in range(0, seeds, batch):
            count = min(batch, seeds - first)
            h, _ = _mc_hash_batch(spec, chars, base_seed, first, count)
            xor = h[:, 0] ^ h[:, 1] ^ h[:, 2] ^ h[:, 3]
            zero += int(np.count_nonzero(xor == 0))
        out[kind] = zero / seeds
    return out


def independence_test(seeds=10000, base_seed=0) -> dict:
    """3-wise uniformity plus the 4-key XOR identity and its mixed-scheme breakdown."""
    report = dict(three_wise=three_wise_uniformity())
    report.update(xor4_fraction=xor4_identity_test(seeds=seeds, base_seed=base_seed))
    return report


# ---------------------------------------------------------------------------
# k-partition MinHash


@dataclass(frozen=True)
class KPartitionConfig:
    """Balls, colors, bins, and the hashing scheme of one MinHash experiment."""

    n_balls: int
    red_fraction: float
    k_bins: int
    scheme: str = "mixed:k=8,c=2,d=1,l=32"
    trials: int = 100
    base_seed: int = 0

    def __post_init__(self):
        if self.n_balls < 1:
            raise ValueError("need at least one ball")
        if not 0.0 < self.red_fraction < 1.0:
            raise ValueError("red fraction must be strictly between 0 and 1")
        if self.k_bins < 1 or self.k_bins & (self.k_bins - 1):
            raise ValueError("bin count must be a power of two")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        spec = parse_scheme(self.scheme)
        if self.n_balls > spec.params.universe_size:
            raise ValueError("more balls than keys in the universe")
        if self.k_bins > spec.params.range_size:
            raise ValueError("more bins than hash values")

    def spec(self) -> SchemeSpec:
        return parse_scheme(self.scheme)

    def bins_within_regime(self) -> bool:
        """Whether the bin count satisfies the analysed regime (soft constraint)."""
        p = self.spec().params
        d = max(1, p.derived_chars)
        return self.k_bins <= p.alphabet_size / (4.0 * d * math.log(p.alphabet_size))


def _minhash_trials(config: KPartitionConfig, red_mask):
    spec = config.spec()
    params = spec.params
    n = config.n_balls
    bin_bits = config.k_bins.bit_length() - 1
    local_bits = params.range_bits - bin_bits
    if local_bits < 1:
        raise ValueError("no local bits left after bin selection")
    keys = np.arange(n, dtype=np.uint64)
    chars = key_chars(keys, params)
    q = max(0, math.ceil(math.log2(3.0 * n / (2.0 * params.alphabet_size))))
    estimates = np.empty(config.trials)
    mask_counts = np.empty(config.trials, dtype=np.int64)
    batch = max(1, (1 << 21) // n)
    for first in range(0, config.trials, batch):
        count = min(batch, config.trials - first)
        h, _ = _mc_hash_batch(spec, chars, config.base_seed, first, count)
        bins_all = (h >> np.uint64(local_bits)).astype(np.int64)
        local_all = h & np.uint64((1 << local_bits) - 1)
        for t in range(count):
            minima = _kernels.bin_minima(bins_all[t], local_all[t], config.k_bins)
            chosen = minima[minima >= 0]
            estimates[first + t] = float(red_mask[chosen].mean())
            mask_counts[first + t] = int(
                np.count_nonzero(local_all[t] >> np.uint64(local_bits - q) == 0))
    return estimates, mask_counts, q


def minhash_kpartition(config: KPartitionConfig) -> dict:
    """MinHash-per-bin estimates of the red fraction plus the masked-set sizes.

    Per trial, the top bin-index bits of each ball's hash pick its bin and the
    remaining bits order the bin; the estimator averages the color of each
    non-empty bin's minimum.  The masked set collects balls whose local value
    starts with q zero bits, q chosen so its expected size is a constant
    fraction of the alphabet.
    """
    n = config.n_balls
    n_red = round(config.red_fraction * n)
    red_mask = np.zeros(n, dtype=bool)
    red_mask[:n_red] = True
    estimates, mask_counts, q = _minhash_trials(config, red_mask)
    actual_f = n_red / n
    params = config.spec().params
    expected_mask = n * 2.0 ** (-q)
    rel_band = 8.0 * math.sqrt(math.log(params.alphabet_size) / params.alphabet_size)
    return dict(
        scheme=config.scheme, n_balls=n, k_bins=config.k_bins, trials=config.trials,
        base_seed=config.base_seed, red_fraction=config.red_fraction,
        actual_red_fraction=actual_f,
        estimates=estimates, errors=np.abs(estimates - actual_f),
        mask_zero_bits=q, mask_counts=mask_counts, expected_mask_count=expected_mask,
        mask_rel_band=rel_band,
        mask_within_band=np.abs(mask_counts - expected_mask) <= rel_band * expected_mask,
        bins_within_regime=config.bins_within_regime(),
    )


def minhash_permutation_check(config: KPartitionConfig, perm_seed=1) -> dict:
    """Relabel balls by a fixed permutation and compare the error distributions.

    The estimator only sees colors through the hashed identities, so the two
    runs agree in law; the check compares paired means within Monte Carlo noise.
    """
    n = config.n_balls
    n_red = round(config.red_fraction * n)
    base_mask = np.zeros(n, dtype=bool)
    base_mask[:n_red] = True
    rng = np.random.default_rng(perm_seed)
    perm = rng.permutation(n)
    perm_mask = np.zeros(n, dtype=bool)
    perm_mask[perm[:n_red]] = True
    est_a, _, _ = _minhash_trials(config, base_mask)
    est_b, _, _ = _minhash_trials(config, perm_mask)
    f = n_red / n
    err_a, err_b = np.abs(est_a - f), np.abs(est_b - f)
    diff = err_a.mean() - err_b.mean()
    se = math.sqrt((err_a.var() + err_b.var()) / config.trials)
    return dict(mean_error=err_a.mean(), mean_error_permuted=err_b.mean(),
                diff=diff, se=se, consistent=abs(diff) <= 5 * max(se, 1e-12))


# ---------------------------------------------------------------------------
# throughput


def throughput_bench(char_bits=8, num_chars=4, range_bits=16, n_keys=1 << 20,
                     repeats=5, seed=0) -> dict:
    """ns/key for simple versus mixed hashing over a fixed key stream."""
    simple_params = SchemeParams(char_bits, num_chars, range_bits)
    mixed_params = SchemeParams(char_bits, num_chars, range_bits, 1)
    simple = SimpleTabHash.from_seed(simple_params, seed)
    mixed = MixedTabHash.from_seed(mixed_params, seed)
    keys = np.arange(n_keys, dtype=np.uint64)

    def best_ns(fn):
        fn(keys)  # warm-up (and JIT compile under the numba backend)
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(keys)
            best = min(best, time.perf_counter() - t0)
        return best / n_keys * 1e9

    simple_ns = best_ns(simple.hash_array)
    mixed_ns = best_ns(mixed.hash_array)
    return dict(backend=_kernels.active_backend(), n_keys=n_keys,
                simple_ns_per_key=simple_ns, mixed_ns_per_key=mixed_ns,
                mixed_over_simple=mixed_ns / simple_ns,
                table_bytes=num_chars * (1 << char_bits) * 8)


def backend_bench(n_keys=1 << 20, repeats=5, seed=0) -> list:
    """Time the numba and numpy kernel paths on the same workloads."""
    rows = []
    current = _kernels.active_backend()
    backends = ["numpy"] + (["numba"] if _kernels._HAS_NUMBA else [])
    try:
        for backend in backends:
            _kernels.set_backend(backend)
            res = throughput_bench(n_keys=n_keys, repeats=repeats, seed=seed)
            rows.append(dict(backend=backend, workload="hash_stream",
                             ns_per_key=res["simple_ns_per_key"]))
            spec = parse_scheme("simple:k=2,c=2,l=2")
            vf = make_single_bin(np.ones(16), 0, 4, np.arange(16, dtype=np.uint64))
            from .moments import exact_values

            t0 = time.perf_counter()
            exact_values(spec, vf, "simple")
            rows.append(dict(backend=backend, workload="enumerate_24bit",
                             seconds=time.perf_counter() - t0))
    finally:
        _kernels.set_backend(current)
    return rows
