"""Hot numeric kernels, each with a numba-compiled and a pure-numpy variant.

The active backend is chosen by the TABHASH_BACKEND environment variable:
"numba" (default when numba imports cleanly), "numpy", or "auto".
`tabhash bench --compare-backends` times the two side by side.
"""
from __future__ import annotations

import os

import numpy as np

_ENV_BACKEND = os.environ.get("TABHASH_BACKEND", "auto").strip().lower()
if _ENV_BACKEND not in ("auto", "numba", "numpy"):
    raise ValueError(f"TABHASH_BACKEND must be auto, numba, or numpy, got {_ENV_BACKEND!r}")

_HAS_NUMBA = False
if _ENV_BACKEND in ("auto", "numba"):
    try:
        from numba import njit

        _HAS_NUMBA = True
    except ImportError:
        if _ENV_BACKEND == "numba":
            raise

_backend = "numba" if _HAS_NUMBA else "numpy"


def active_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime (used by tests and the benchmark)."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _backend = name


# ---------------------------------------------------------------------------
# key-stream hashing: XOR of one table lookup per character position


def _hash_stream_np(tables, keys, char_bits):
    size_mask = tables.shape[1] - 1
    out = np.zeros(keys.shape, dtype=np.uint64)
    for i in range(tables.shape[0]):
        idx = ((keys >> (i * char_bits)) & size_mask).astype(np.int64)
        out ^= tables[i][idx]
    return out


def _hash_batch_np(tables, chars):
    out = tables[:, 0, :][:, chars[0]].copy()
    for i in range(1, tables.shape[1]):
        out ^= tables[:, i, :][:, chars[i]]
    return out


if _HAS_NUMBA:

    @njit(cache=True)
    def _hash_stream_nb(tables, keys, char_bits):
        c, size = tables.shape
        size_mask = np.uint64(size - 1)
        out = np.zeros(keys.shape[0], dtype=np.uint64)
        for n in range(keys.shape[0]):
            h = np.uint64(0)
            key = keys[n]
            for i in range(c):
                idx = (key >> np.uint64(i * char_bits)) & size_mask
                h ^= tables[i, idx]
            out[n] = h
        return out

    @njit(cache=True)
    def _hash_batch_nb(tables, chars):
        nb, c, _ = tables.shape
        n = chars.shape[1]
        out = np.empty((nb, n), dtype=np.uint64)
        for b in range(nb):
            for j in range(n):
                h = np.uint64(0)
                for i in range(c):
                    h ^= tables[b, i, chars[i, j]]
                out[b, j] = h
        return out


def hash_stream(tables, keys, char_bits):
    """Hash a uint64 key stream against a (c, 2^k) uint64 table."""
    if _backend == "numba":
        return _hash_stream_nb(tables, keys, char_bits)
    return _hash_stream_np(tables, keys, char_bits)


def _mixed_hash_stream_np(fused, h3, keys, char_bits, range_bits):
    fx = _hash_stream_np(fused, keys, char_bits)
    m_mask = np.uint64((1 << range_bits) - 1)
    c_mask = (1 << char_bits) - 1
    h = fx & m_mask
    deriv = fx >> np.uint64(range_bits)
    for j in range(h3.shape[0]):
        idx = ((deriv >> (j * char_bits)) & c_mask).astype(np.int64)
        h ^= h3[j][idx]
    return h


if _HAS_NUMBA:

    @njit(cache=True)
    def _mixed_hash_stream_nb(fused, h3, keys, char_bits, range_bits):
        c, size = fused.shape
        d = h3.shape[0]
        size_mask = np.uint64(size - 1)
        m_mask = np.uint64((1 << range_bits) - 1)
        out = np.empty(keys.shape[0], dtype=np.uint64)
        for n in range(keys.shape[0]):
            key = keys[n]
            fx = np.uint64(0)
            for i in range(c):
                fx ^= fused[i, (key >> np.uint64(i * char_bits)) & size_mask]
            h = fx & m_mask
            deriv = fx >> np.uint64(range_bits)
            for j in range(d):
                h ^= h3[j, (deriv >> np.uint64(j * char_bits)) & size_mask]
            out[n] = h
        return out


def mixed_hash_stream(fused, h3, keys, char_bits, range_bits):
    """Two-layer hash of a key stream: fused first-layer table plus derived lookups."""
    if _backend == "numba":
        return _mixed_hash_stream_nb(fused, h3, keys, char_bits, range_bits)
    return _mixed_hash_stream_np(fused, h3, keys, char_bits, range_bits)


def hash_batch(tables, chars):
    """Hash one key set under many table fills: (B, c, 2^k) x (c, n) -> (B, n)."""
    if _backend == "numba":
        return _hash_batch_nb(tables, np.ascontiguousarray(chars))
    return _hash_batch_np(tables, chars)


# ---------------------------------------------------------------------------
# exhaustive enumeration of table fills
#
# A fill is one integer whose bit fields hold every table entry.  Layout is
# decided by the caller and passed down as flat slot indices plus bit offsets;
# the kernels only extract fields, XOR lookups, and accumulate the weighted sum.


def _enum_simple_np(n_fill, key_slots, width, sign_base, vmat, out):
    n_keys, c = key_slots.shape
    mask = (1 << width) - 1
    chunk = 1 << 20
    for start in range(0, n_fill, chunk):
        stop = min(start + chunk, n_fill)
        fills = np.arange(start, stop, dtype=np.int64)
        acc = np.zeros(fills.shape, dtype=np.float64)
        for i in range(n_keys):
            h = np.zeros(fills.shape, dtype=np.int64)
            for j in range(c):
                slot = int(key_slots[i, j])
                h ^= (fills >> (slot * width)) & mask
            vals = vmat[i][h]
            if sign_base >= 0:
                par = np.zeros(fills.shape, dtype=np.int64)
                for j in range(c):
                    slot = int(key_slots[i, j])
                    par ^= (fills >> (sign_base + slot)) & 1
                vals = np.where(par == 1, -vals, vals)
            acc += vals
        out[start:stop] = acc


def _enum_mixed_np(n_fill, key_slots, char_bits, range_bits, derived, fused_width,
                   h3_base, sign1_base, sign3_base, vmat, out):
    n_keys, c = key_slots.shape
    size = 1 << char_bits
    fmask = (1 << fused_width) - 1
    hmask = (1 << range_bits) - 1
    cmask = size - 1
    chunk = 1 << 20
    for start in range(0, n_fill, chunk):
        stop = min(start + chunk, n_fill)
        fills = np.arange(start, stop, dtype=np.int64)
        acc = np.zeros(fills.shape, dtype=np.float64)
        for i in range(n_keys):
            fx = np.zeros(fills.shape, dtype=np.int64)
            par = np.zeros(fills.shape, dtype=np.int64)
            for j in range(c):
                slot = int(key_slots[i, j])
                fx ^= (fills >> (slot * fused_width)) & fmask
                if sign1_base >= 0:
                    par ^= (fills >> (sign1_base + slot)) & 1
            h = fx & hmask
            deriv = fx >> range_bits
            for j in range(derived):
                dchar = (deriv >> (j * char_bits)) & cmask
                dslot = j * size + dchar
                h ^= (fills >> (h3_base + dslot * range_bits)) & hmask
                if sign3_base >= 0:
                    par ^= (fills >> (sign3_base + dslot)) & 1
            vals = vmat[i][h]
            if sign1_base >= 0 or sign3_base >= 0:
                vals = np.where(par == 1, -vals, vals)
            acc += vals
        out[start:stop] = acc


def _enum_hash_of_key_np(n_fill, slots, width):
    mask = (1 << width) - 1
    fills = np.arange(n_fill, dtype=np.int64)
    h = np.zeros(n_fill, dtype=np.int64)
    for slot in slots:
        h ^= (fills >> (int(slot) * width)) & mask
    return h


if _HAS_NUMBA:

    @njit(cache=True)
    def _enum_simple_nb(n_fill, key_slots, width, sign_base, vmat, out):
        n_keys, c = key_slots.shape
        mask = (1 << width) - 1
        for f in range(n_fill):
            acc = 0.0
            for i in range(n_keys):
                h = 0
                par = 0
                for j in range(c):
                    slot = key_slots[i, j]
                    h ^= (f >> (slot * width)) & mask
                    if sign_base >= 0:
                        par ^= (f >> (sign_base + slot)) & 1
                v = vmat[i, h]
                if par == 1:
                    acc -= v
                else:
                    acc += v
            out[f] = acc

    @njit(cache=True)
    def _enum_mixed_nb(n_fill, key_slots, char_bits, range_bits, derived, fused_width,
                       h3_base, sign1_base, sign3_base, vmat, out):
        n_keys, c = key_slots.shape
        size = 1 << char_bits
        fmask = (1 << fused_width) - 1
        hmask = (1 << range_bits) - 1
        cmask = size - 1
        for f in range(n_fill):
            acc = 0.0
            for i in range(n_keys):
                fx = 0
                par = 0
                for j in range(c):
                    slot = key_slots[i, j]
                    fx ^= (f >> (slot * fused_width)) & fmask
                    if sign1_base >= 0:
                        par ^= (f >> (sign1_base + slot)) & 1
                h = fx & hmask
                deriv = fx >> range_bits
                for j in range(derived):
                    dchar = (deriv >> (j * char_bits)) & cmask
                    dslot = j * size + dchar
                    h ^= (f >> (h3_base + dslot * range_bits)) & hmask
                    if sign3_base >= 0:
                        par ^= (f >> (sign3_base + dslot)) & 1
                v = vmat[i, h]
                if par == 1:
                    acc -= v
                else:
                    acc += v
            out[f] = acc


def enum_simple(n_fill, key_slots, width, sign_base, vmat, out):
    """Hash-based sum per table fill for a simple scheme, optional sign table."""
    if _backend == "numba":
        _enum_simple_nb(n_fill, key_slots, width, sign_base, vmat, out)
    else:
        _enum_simple_np(n_fill, key_slots, width, sign_base, vmat, out)


def enum_mixed(n_fill, key_slots, char_bits, range_bits, derived, fused_width,
               h3_base, sign1_base, sign3_base, vmat, out):
    """Hash-based sum per table fill for a mixed scheme, optional sign tables."""
    args = (n_fill, key_slots, char_bits, range_bits, derived, fused_width,
            h3_base, sign1_base, sign3_base, vmat, out)
    if _backend == "numba":
        _enum_mixed_nb(*args)
    else:
        _enum_mixed_np(*args)


def enum_hash_of_key(n_fill, slots, width):
    """Hash value of one key across every fill (used for query conditioning)."""
    return _enum_hash_of_key_np(n_fill, np.asarray(slots, dtype=np.int64), width)


# ---------------------------------------------------------------------------
# Walsh-Hadamard transform, used for XOR convolutions of bin profiles


def _fwht_np(a):
    m = a.shape[-1]
    a = a.reshape(-1, m)
    h = 1
    while h < m:
        a = a.reshape(a.shape[0], m // (2 * h), 2, h)
        x = a[:, :, 0, :].copy()
        y = a[:, :, 1, :].copy()
        a[:, :, 0, :] = x + y
        a[:, :, 1, :] = x - y
        a = a.reshape(-1, m)
        h *= 2
    return a


if _HAS_NUMBA:

    @njit(cache=True)
    def _fwht_nb(a):
        rows, m = a.shape
        for r in range(rows):
            h = 1
            while h < m:
                start = 0
                while start < m:
                    for j in range(start, start + h):
                        x = a[r, j]
                        y = a[r, j + h]
                        a[r, j] = x + y
                        a[r, j + h] = x - y
                    start += 2 * h
                h *= 2


def fwht(a):
    """In-place unnormalized Walsh-Hadamard transform over the last axis."""
    m = a.shape[-1]
    if m & (m - 1):
        raise ValueError("length must be a power of two")
    flat = a.reshape(-1, m)
    if _backend == "numba":
        _fwht_nb(flat)
    else:
        flat[:] = _fwht_np(flat.copy())
    return a


# ---------------------------------------------------------------------------
# per-bin minima for the k-partition MinHash experiment


def _bin_minima_np(bins, local, n_bins):
    n = bins.shape[0]
    order = np.lexsort((np.arange(n), local, bins))
    sorted_bins = bins[order]
    uniq, first = np.unique(sorted_bins, return_index=True)
    out = np.full(n_bins, -1, dtype=np.int64)
    out[uniq] = order[first]
    return out


if _HAS_NUMBA:

    @njit(cache=True)
    def _bin_minima_nb(bins, local, n_bins):
        out = np.full(n_bins, -1, dtype=np.int64)
        for i in range(bins.shape[0]):
            b = bins[i]
            j = out[b]
            if j < 0 or local[i] < local[j]:
                out[b] = i
        return out


def bin_minima(bins, local, n_bins):
    """Index of the smallest local value per bin, ties to the smallest index.

    Returns -1 for empty bins.
    """
    if _backend == "numba":
        return _bin_minima_nb(bins, local, n_bins)
    return _bin_minima_np(bins, local, n_bins)
