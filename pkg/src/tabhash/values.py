"""Value functions assigning a real contribution to every (key, bin) pair.

Every constructor enforces the per-key mean-zero property: the sum of a
key's contributions over all bins is zero.  Support is an explicit key
list, so experiments never have to enumerate the key universe.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .tabulation import DescriptorError, SchemeParams

MEAN_ZERO_RTOL = 1e-9

# dense row materialization is refused above this many cells
DENSE_CELL_LIMIT = 1 << 26


@dataclass(frozen=True)
class ValueStats:
    """Summary statistics of a value function used by the bound formulas."""

    m_max: float          # largest absolute contribution
    sigma2: float         # sum of squared contributions divided by the range size
    spread_max: float     # max over keys of (l1 norm)^2 / (l2 norm)^2 of the key's row
    weight_ratio: float   # total squared l2 mass over the heaviest key's squared l2 mass
    total_l2_sq: float    # sum over keys of the squared l2 norm of the row


class ValueFunction:
    """A mean-zero map (key, bin) -> real over an explicit support key list."""

    def __init__(self, kind, m, support_keys, weights=None, target=None, thresh=None,
                 mat=None, bins_list=None, vals_list=None):
        if m < 2 or m & (m - 1):
            raise ValueError("range size must be a power of two >= 2")
        self.kind = kind
        self.m = int(m)
        self.support_keys = np.asarray(support_keys, dtype=np.uint64)
        if len(np.unique(self.support_keys)) != len(self.support_keys):
            raise ValueError("support keys must be distinct")
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)
        self.target = target
        self.thresh = thresh
        self.mat = None if mat is None else np.asarray(mat, dtype=np.float64)
        self.bins_list = bins_list
        self.vals_list = vals_list
        self._stats = None
        self._validate()

    # -- construction checks

    def _validate(self):
        n = len(self.support_keys)
        if self.kind in ("single_bin", "threshold"):
            if self.weights is None or len(self.weights) != n:
                raise ValueError("need one weight per support key")
            if not np.all(np.isfinite(self.weights)):
                raise ValueError("weights must be finite")
            if self.kind == "single_bin" and not 0 <= self.target < self.m:
                raise ValueError("target bin out of range")
            if self.kind == "threshold" and not 0 <= self.thresh <= self.m:
                raise ValueError("threshold out of range")
        elif self.kind == "dense":
            if self.mat is None or self.mat.shape != (n, self.m):
                raise ValueError("dense value functions need an (n, m) matrix")
            if not np.all(np.isfinite(self.mat)):
                raise ValueError("values must be finite")
            scale = float(np.max(np.abs(self.mat))) if self.mat.size else 0.0
            tol = MEAN_ZERO_RTOL * max(scale, 1e-300)
            sums = self.mat.sum(axis=1)
            if np.any(np.abs(sums) > tol):
                raise ValueError("per-key bin sums must vanish")
        elif self.kind == "sparse":
            if self.bins_list is None or len(self.bins_list) != n:
                raise ValueError("need one sparse row per support key")
            scale = 0.0
            for vals in self.vals_list:
                if len(vals) and not np.all(np.isfinite(vals)):
                    raise ValueError("values must be finite")
                if len(vals):
                    scale = max(scale, float(np.max(np.abs(vals))))
            tol = MEAN_ZERO_RTOL * max(scale, 1e-300)
            for bins, vals in zip(self.bins_list, self.vals_list):
                if len(bins) != len(vals):
                    raise ValueError("sparse row shape mismatch")
                if len(bins) and (bins[-1] >= self.m or bins[0] < 0):
                    raise ValueError("sparse bin out of range")
                if abs(math.fsum(vals)) > tol:
                    raise ValueError("per-key bin sums must vanish")
        else:
            raise ValueError(f"unknown value function kind {self.kind!r}")

    @property
    def n_keys(self):
        return len(self.support_keys)

    # -- pointwise evaluation

    def row(self, i):
        """Dense contribution vector of support key i over all bins."""
        out = np.zeros(self.m, dtype=np.float64)
        if self.kind == "single_bin":
            w = self.weights[i]
            out[:] = -w / self.m
            out[self.target] += w
        elif self.kind == "threshold":
            w = self.weights[i]
            out[:] = -w * self.thresh / self.m
            out[: self.thresh] += w
        elif self.kind == "dense":
            out[:] = self.mat[i]
        else:
            out[self.bins_list[i]] = self.vals_list[i]
        return out

    def rows_matrix(self):
        if self.n_keys * self.m > DENSE_CELL_LIMIT:
            raise ValueError("instance too large to densify")
        return np.stack([self.row(i) for i in range(self.n_keys)])

    def evaluate(self, key_idx, bins):
        """Contributions for (support index, bin) pairs."""
        key_idx = np.asarray(key_idx, dtype=np.int64)
        bins = np.asarray(bins, dtype=np.int64)
        if self.kind == "single_bin":
            w = self.weights[key_idx]
            return w * ((bins == self.target) - 1.0 / self.m)
        if self.kind == "threshold":
            w = self.weights[key_idx]
            return w * ((bins < self.thresh) - self.thresh / self.m)
        if self.kind == "dense":
            return self.mat[key_idx, bins]
        out = np.zeros(key_idx.shape, dtype=np.float64)
        for j, (ki, b) in enumerate(zip(key_idx, bins)):
            row_bins = self.bins_list[ki]
            pos = np.searchsorted(row_bins, b)
            if pos < len(row_bins) and row_bins[pos] == b:
                out[j] = self.vals_list[ki][pos]
        return out

    # -- batched hash sums (the Monte Carlo hot path)

    def hash_sum_batch(self, hashes, signs=None):
        """Sum of (signed) contributions per row of an (n_samples, n_keys) hash matrix."""
        h = hashes
        if self.kind in ("single_bin", "threshold"):
            w = self.weights
            hits = (h == self.target) if self.kind == "single_bin" else (h < self.thresh)
            frac = (1.0 / self.m) if self.kind == "single_bin" else (self.thresh / self.m)
            if signs is None:
                return hits @ w - frac * math.fsum(w)
            sw = signs * w
            return np.einsum("bn,bn->b", hits, sw) - frac * sw.sum(axis=1)
        if self.kind == "dense":
            idx = np.arange(self.n_keys)
            vals = self.mat[idx[None, :], h]
            if signs is not None:
                vals = vals * signs
            return vals.sum(axis=1)
        out = np.zeros(h.shape[0], dtype=np.float64)
        for i in range(self.n_keys):
            row_bins = self.bins_list[i]
            if len(row_bins) == 0:
                continue
            pos = np.searchsorted(row_bins, h[:, i])
            pos = np.minimum(pos, len(row_bins) - 1)
            vals = self.vals_list[i][pos] * (row_bins[pos] == h[:, i])
            if signs is not None:
                vals = vals * signs[:, i]
            out += vals
        return out

    def proportional_base(self):
        """(weights, base_row) when every row is weight * base_row, else None."""
        base = np.zeros(self.m, dtype=np.float64)
        if self.kind == "single_bin":
            base[:] = -1.0 / self.m
            base[self.target] += 1.0
            return self.weights, base
        if self.kind == "threshold":
            base[:] = -self.thresh / self.m
            base[: self.thresh] += 1.0
            return self.weights, base
        return None

    # -- statistics

    def stats(self) -> ValueStats:
        if self._stats is None:
            self._stats = compute_stats(self)
        return self._stats


def _stats_from_norms(m, l1, l2_sq, row_max):
    """Assemble ValueStats from per-key row norms, with zero-function conventions."""
    nz = l2_sq > 0
    if not np.any(nz):
        return ValueStats(0.0, 0.0, 1.0, 1.0, 0.0)
    total_l2 = math.fsum(l2_sq)
    spread = float(np.max(l1[nz] ** 2 / l2_sq[nz]))
    return ValueStats(
        m_max=float(np.max(row_max)),
        sigma2=total_l2 / m,
        spread_max=spread,
        weight_ratio=total_l2 / float(np.max(l2_sq)),
        total_l2_sq=total_l2,
    )


def compute_stats(v: ValueFunction) -> ValueStats:
    """Exact summary statistics, closed-form for the standard constructions."""
    m = v.m
    if v.kind == "single_bin":
        w2 = v.weights**2
        l2_sq = w2 * (1.0 - 1.0 / m)
        l1 = np.abs(v.weights) * 2.0 * (1.0 - 1.0 / m)
        row_max = np.abs(v.weights) * (1.0 - 1.0 / m)
        return _stats_from_norms(m, l1, l2_sq, row_max)
    if v.kind == "threshold":
        ell = v.thresh
        if ell in (0, m):
            return ValueStats(0.0, 0.0, 1.0, 1.0, 0.0)
        w2 = v.weights**2
        l2_sq = w2 * ell * (1.0 - ell / m)
        l1 = np.abs(v.weights) * 2.0 * ell * (1.0 - ell / m)
        row_max = np.abs(v.weights) * max(1.0 - ell / m, ell / m)
        return _stats_from_norms(m, l1, l2_sq, row_max)
    if v.kind == "dense":
        ab = np.abs(v.mat)
        return _stats_from_norms(m, ab.sum(axis=1), (v.mat**2).sum(axis=1), ab.max(axis=1))
    l1 = np.array([math.fsum(np.abs(vals)) for vals in v.vals_list])
    l2_sq = np.array([math.fsum(np.asarray(vals) ** 2) for vals in v.vals_list])
    row_max = np.array([float(np.max(np.abs(vals))) if len(vals) else 0.0
                        for vals in v.vals_list])
    return _stats_from_norms(m, l1, l2_sq, row_max)


# ---------------------------------------------------------------------------
# constructors


def _weights_and_keys(weights, support_keys):
    if isinstance(weights, dict):
        keys = np.array(sorted(weights), dtype=np.uint64)
        w = np.array([weights[int(k)] for k in keys], dtype=np.float64)
        return w, keys
    if support_keys is None:
        raise ValueError("need support keys alongside a weight array")
    return np.asarray(weights, dtype=np.float64), np.asarray(support_keys, dtype=np.uint64)


def make_single_bin(weights, target_bin, m, support_keys=None) -> ValueFunction:
    """Centered single-bin indicator: weight * ([bin == target] - 1/m)."""
    w, keys = _weights_and_keys(weights, support_keys)
    return ValueFunction("single_bin", m, keys, weights=w, target=int(target_bin))


def make_threshold(weights, thresh, m, support_keys=None) -> ValueFunction:
    """Centered below-threshold indicator: weight * ([bin < thresh] - thresh/m)."""
    w, keys = _weights_and_keys(weights, support_keys)
    return ValueFunction("threshold", m, keys, weights=w, thresh=int(thresh))


def make_dense(support_keys, mat, m) -> ValueFunction:
    return ValueFunction("dense", m, support_keys, mat=mat)


def make_sparse(support_keys, bins_list, vals_list, m) -> ValueFunction:
    bins_sorted, vals_sorted = [], []
    for bins, vals in zip(bins_list, vals_list):
        bins = np.asarray(bins, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.argsort(bins, kind="stable")
        bins_sorted.append(bins[order])
        vals_sorted.append(vals[order])
    return ValueFunction("sparse", m, support_keys, bins_list=bins_sorted,
                         vals_list=vals_sorted)


def load_value_csv(path, m) -> ValueFunction:
    """Custom sparse value function from CSV rows (key, bin, value)."""
    per_key = {}
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec or rec[0].strip().startswith("#"):
                continue
            if rec[0].strip().lower() == "key":
                continue
            if len(rec) != 3:
                raise DescriptorError(f"{path}:{lineno}: expected key,bin,value")
            key, b, val = int(rec[0], 0), int(rec[1], 0), float(rec[2])
            per_key.setdefault(key, []).append((b, val))
    keys = np.array(sorted(per_key), dtype=np.uint64)
    bins_list = [np.array([b for b, _ in per_key[int(k)]]) for k in keys]
    vals_list = [np.array([x for _, x in per_key[int(k)]]) for k in keys]
    return make_sparse(keys, bins_list, vals_list, m)


def parse_value(descriptor: str, params: SchemeParams, n_support=None) -> ValueFunction:
    """Parse "bin:target=0,w=uniform", "threshold:l=64,w=uniform", or "file:<path>".

    An optional n=<count> field sets the support size (the first n keys of the
    universe); the default is min(4096, universe size).
    """
    kind, _, rest = descriptor.partition(":")
    kind = kind.strip().lower()
    if kind == "file":
        return load_value_csv(rest, params.range_size)
    fields = {}
    for part in rest.split(","):
        if not part.strip():
            continue
        name, _, value = part.partition("=")
        fields[name.strip()] = value.strip()
    try:
        n = int(fields.pop("n", n_support or min(4096, params.universe_size)))
        if n < 1 or n > params.universe_size:
            raise ValueError("support size out of range")
        keys = np.arange(n, dtype=np.uint64)
        wspec = fields.pop("w", "uniform")
        if wspec != "uniform":
            raise ValueError(f"unknown weighting {wspec!r}")
        weights = np.ones(n, dtype=np.float64)
        if kind == "bin":
            vf = make_single_bin(weights, int(fields.pop("target", 0), 0),
                                 params.range_size, keys)
        elif kind == "threshold":
            vf = make_threshold(weights, int(fields.pop("l"), 0), params.range_size, keys)
        else:
            raise ValueError(f"unknown value kind {kind!r}")
        if fields:
            raise ValueError(f"unknown value fields {sorted(fields)}")
    except (KeyError, ValueError) as exc:
        raise DescriptorError(f"bad value descriptor {descriptor!r}: {exc}") from exc
    return vf


# ---------------------------------------------------------------------------
# hash sums


def hash_sum(v: ValueFunction, hash_fn, sign_fn=None) -> float:
    """Sum of contributions of the support keys at their hash values.

    With a sign function, each contribution is multiplied by the key's sign.
    """
    if hasattr(hash_fn, "params") and hash_fn.params.range_size != v.m:
        raise ValueError("hash range does not match value function range")
    if hasattr(hash_fn, "hash_array"):
        bins = hash_fn.hash_array(v.support_keys).astype(np.int64)
    else:
        bins = np.array([hash_fn(int(k)) for k in v.support_keys], dtype=np.int64)
    vals = v.evaluate(np.arange(v.n_keys), bins)
    if sign_fn is not None:
        if hasattr(sign_fn, "sign_array"):
            vals = vals * sign_fn.sign_array(v.support_keys)
        else:
            vals = vals * np.array([sign_fn(int(k)) for k in v.support_keys])
    return math.fsum(vals)


class QueryValueFunction:
    """Mean-zero map (key, bin, query_bin) -> real over keys distinct from the query."""

    def __init__(self, kind, m, query, support_keys, weights=None, mat3=None):
        if m < 2 or m & (m - 1):
            raise ValueError("range size must be a power of two >= 2")
        self.kind = kind
        self.m = int(m)
        self.query = int(query)
        self.support_keys = np.asarray(support_keys, dtype=np.uint64)
        if np.any(self.support_keys == np.uint64(self.query)):
            raise ValueError("query key must not be in the support")
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)
        self.mat3 = None if mat3 is None else np.asarray(mat3, dtype=np.float64)
        if kind == "dense":
            scale = float(np.max(np.abs(self.mat3))) if self.mat3.size else 0.0
            tol = MEAN_ZERO_RTOL * max(scale, 1e-300)
            if np.any(np.abs(self.mat3.sum(axis=1)) > tol):
                raise ValueError("per-(key, query bin) sums must vanish")
        elif kind != "collision":
            raise ValueError(f"unknown query value kind {kind!r}")

    @property
    def n_keys(self):
        return len(self.support_keys)

    def evaluate_batch(self, hashes, query_bins):
        """(n_samples,) sums given hash matrix (n_samples, n_keys) and query bins."""
        if self.kind == "collision":
            w = self.weights
            hits = hashes == query_bins[:, None]
            return hits @ w - math.fsum(w) / self.m
        idx = np.arange(self.n_keys)
        vals = self.mat3[idx[None, :], hashes, query_bins[:, None]]
        return vals.sum(axis=1)

    def bucket_stats(self, query_bin) -> ValueStats:
        """Stats of the two-argument value function pinned at one query bin."""
        if self.kind == "collision":
            w2 = self.weights**2
            l2_sq = w2 * (1.0 - 1.0 / self.m)
            l1 = np.abs(self.weights) * 2.0 * (1.0 - 1.0 / self.m)
            row_max = np.abs(self.weights) * (1.0 - 1.0 / self.m)
            return _stats_from_norms(self.m, l1, l2_sq, row_max)
        sl = self.mat3[:, :, query_bin]
        ab = np.abs(sl)
        return _stats_from_norms(self.m, ab.sum(axis=1), (sl**2).sum(axis=1), ab.max(axis=1))


def make_collision_query(weights, query, m, support_keys=None) -> QueryValueFunction:
    """Weight landing in the query's bin, centered: w * ([bin == query_bin] - 1/m)."""
    w, keys = _weights_and_keys(weights, support_keys)
    keep = keys != np.uint64(int(query))
    return QueryValueFunction("collision", m, query, keys[keep], weights=w[keep])


def query_hash_sum(qv: QueryValueFunction, hash_fn):
    """(sum, query_bin): the conditioned sum plus the bin the query hashed to."""
    if hasattr(hash_fn, "params") and hash_fn.params.range_size != qv.m:
        raise ValueError("hash range does not match value function range")
    all_keys = np.append(qv.support_keys, np.uint64(qv.query))
    if hasattr(hash_fn, "hash_array"):
        bins = hash_fn.hash_array(all_keys).astype(np.int64)
    else:
        bins = np.array([hash_fn(int(k)) for k in all_keys], dtype=np.int64)
    qb = int(bins[-1])
    total = float(qv.evaluate_batch(bins[None, :-1], np.array([qb]))[0])
    return total, qb
