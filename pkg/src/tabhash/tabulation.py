"""Simple and mixed tabulation hashing over packed integer keys.

Keys are c characters of k bits each, packed little-endian by character
index into one unsigned 64-bit word.  All randomness comes from lookup
tables filled deterministically from a 64-bit seed through the Philox
counter PRNG, so every hash value is reproducible across runs, platforms,
and batch sizes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox

MASK64 = (1 << 64) - 1

# tables above this alphabet size are not materialized; entries are
# recomputed from the counter stream on demand
MATERIALIZE_LIMIT = 1 << 16

# hard cap on table entropy for exhaustive enumeration (2^24 fills)
ENUM_BUDGET_BITS = 24

# stream tags: one independent Philox stream per table role under one seed
TAG_HASH = 1
TAG_SIGN = 2
TAG_FUSED = 3
TAG_H3 = 4
TAG_SIGN1 = 5
TAG_SIGN3 = 6
TAG_H2 = 7
TAG_RANDOM_HASH = 8
TAG_RANDOM_SIGN = 9


class EnumerationBudgetError(ValueError):
    """Raised when an instance exceeds the exhaustive-enumeration budget."""


class DescriptorError(ValueError):
    """Raised for malformed scheme or value-function descriptor strings."""


@dataclass(frozen=True)
class SchemeParams:
    """Dimensions of a tabulation scheme: alphabet, characters, range, derived characters."""

    char_bits: int
    num_chars: int
    range_bits: int
    derived_chars: int = 0

    def __post_init__(self):
        if self.char_bits < 1:
            raise ValueError("char_bits must be >= 1")
        if self.num_chars < 1:
            raise ValueError("num_chars must be >= 1")
        if self.range_bits < 1:
            raise ValueError("range_bits must be >= 1")
        if self.derived_chars < 0:
            raise ValueError("derived_chars must be >= 0")
        if self.char_bits * self.num_chars > 64:
            raise ValueError("keys must fit in one 64-bit word (char_bits * num_chars <= 64)")

    @property
    def alphabet_size(self) -> int:
        return 1 << self.char_bits

    @property
    def range_size(self) -> int:
        return 1 << self.range_bits

    @property
    def key_bits(self) -> int:
        return self.char_bits * self.num_chars

    @property
    def universe_size(self) -> int:
        return 1 << self.key_bits


# ---------------------------------------------------------------------------
# key packing


def pack_key(chars, char_bits):
    """Pack a character sequence into one integer, character i at bits [i*k, (i+1)*k)."""
    key = 0
    size = 1 << char_bits
    for i, ch in enumerate(chars):
        ch = int(ch)
        if not 0 <= ch < size:
            raise ValueError(f"character {ch} out of range for {char_bits}-bit alphabet")
        key |= ch << (i * char_bits)
    return key


def unpack_key(key, char_bits, num_chars):
    mask = (1 << char_bits) - 1
    return tuple((int(key) >> (i * char_bits)) & mask for i in range(num_chars))


def key_chars(keys, params: SchemeParams):
    """Character matrix of a packed key array, shape (num_chars, n), int64."""
    keys = np.asarray(keys, dtype=np.uint64)
    mask = params.alphabet_size - 1
    out = np.empty((params.num_chars, keys.shape[0]), dtype=np.int64)
    for i in range(params.num_chars):
        out[i] = ((keys >> (i * params.char_bits)) & mask).astype(np.int64)
    return out


class PositionCharSet:
    """A set of (position, character) pairs closed under symmetric difference."""

    __slots__ = ("entries",)

    def __init__(self, entries=()):
        self.entries = frozenset((int(p), int(ch)) for p, ch in entries)

    @classmethod
    def from_key(cls, key, params: SchemeParams):
        return cls(enumerate(unpack_key(key, params.char_bits, params.num_chars)))

    def __xor__(self, other):
        out = PositionCharSet.__new__(PositionCharSet)
        out.entries = self.entries ^ other.entries
        return out

    def __eq__(self, other):
        return isinstance(other, PositionCharSet) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def __len__(self):
        return len(self.entries)


# ---------------------------------------------------------------------------
# counter-mode table fills


def raw_words(seed, tag, start_block, n_words):
    """uint64 words from the Philox stream keyed by (seed, tag).

    start_block is in 4-word blocks so that callers can slice one stream at
    block-aligned offsets without regenerating earlier output.
    """
    key = (int(tag) << 64) | (int(seed) & MASK64)
    bg = Philox(key=key, counter=int(start_block))
    return bg.random_raw(int(n_words))


def blocks_per_sample(n_words):
    """Blocks consumed per sample when slicing one stream into equal pieces."""
    return (int(n_words) + 3) // 4


class TabulationTable:
    """A rows x 2^char_bits table of uniform width-bit values.

    Entries come either from an explicit array or from the (seed, tag) stream.
    """

    def __init__(self, rows, char_bits, width, seed=None, tag=TAG_HASH, entries=None):
        if width < 1 or width > 64:
            raise ValueError("width must be in [1, 64]")
        self.rows = int(rows)
        self.char_bits = int(char_bits)
        self.width = int(width)
        self.size = 1 << self.char_bits
        self.seed = None if seed is None else int(seed) & MASK64
        self.tag = int(tag)
        self.mask = MASK64 if width == 64 else (1 << width) - 1
        if entries is not None:
            arr = np.asarray(entries, dtype=np.uint64).reshape(self.rows, self.size)
            if width < 64 and np.any(arr > np.uint64(self.mask)):
                raise ValueError("table entry exceeds width")
            self._entries = arr.copy()
        elif seed is None:
            raise ValueError("need a seed or explicit entries")
        elif self.size <= MATERIALIZE_LIMIT:
            words = raw_words(self.seed, self.tag, 0, self.rows * self.size)
            self._entries = (words & np.uint64(self.mask)).reshape(self.rows, self.size)
        else:
            self._entries = None

    @property
    def entries(self):
        if self._entries is None:
            raise ValueError("table too large to materialize")
        return self._entries

    def entry(self, row, char):
        if not (0 <= row < self.rows and 0 <= char < self.size):
            raise IndexError("entry out of table bounds")
        if self._entries is not None:
            return int(self._entries[row, char])
        idx = row * self.size + char
        word = raw_words(self.seed, self.tag, idx // 4, 4)[idx % 4]
        return int(word) & self.mask

    def lookup(self, row, chars):
        """Vectorized entry lookup for one row."""
        if self._entries is not None:
            return self._entries[row][chars]
        return np.array([self.entry(row, int(ch)) for ch in np.asarray(chars)],
                        dtype=np.uint64)


def enumerate_table_fillings(rows, char_bits, width):
    """Yield every possible fill of a rows x 2^char_bits width-bit table once.

    The reference oracle for exact-distribution tests; instances above
    ENUM_BUDGET_BITS of table entropy are rejected.
    """
    rows = int(rows)
    size = 1 << int(char_bits)
    width = int(width)
    total_bits = rows * size * width
    if total_bits > ENUM_BUDGET_BITS:
        raise EnumerationBudgetError(
            f"{total_bits} bits of table entropy exceeds the {ENUM_BUDGET_BITS}-bit budget")
    mask = (1 << width) - 1
    for fill in range(1 << total_bits):
        arr = np.empty((rows, size), dtype=np.uint64)
        for r in range(rows):
            for ch in range(size):
                slot = r * size + ch
                arr[r, ch] = (fill >> (slot * width)) & mask
        yield arr


def filling_count(rows, char_bits, width):
    total_bits = int(rows) * (1 << int(char_bits)) * int(width)
    if total_bits > ENUM_BUDGET_BITS:
        raise EnumerationBudgetError(
            f"{total_bits} bits of table entropy exceeds the {ENUM_BUDGET_BITS}-bit budget")
    return 1 << total_bits


# ---------------------------------------------------------------------------
# hash constructions


class SimpleTabHash:
    """XOR of one table lookup per character position."""

    def __init__(self, params: SchemeParams, table: TabulationTable):
        if table.rows != params.num_chars or table.char_bits != params.char_bits:
            raise ValueError("table shape does not match scheme params")
        if table.width != params.range_bits:
            raise ValueError("table width does not match range_bits")
        self.params = params
        self.table = table

    @classmethod
    def from_seed(cls, params, seed, tag=TAG_HASH):
        table = TabulationTable(params.num_chars, params.char_bits, params.range_bits,
                                seed=seed, tag=tag)
        return cls(params, table)

    def __call__(self, key):
        h = 0
        for i, ch in enumerate(unpack_key(key, self.params.char_bits, self.params.num_chars)):
            h ^= self.table.entry(i, ch)
        return h

    def hash_array(self, keys):
        from . import _kernels

        keys = np.asarray(keys, dtype=np.uint64)
        return _kernels.hash_stream(self.table.entries, keys, self.params.char_bits)

    def extended_hash(self, pcs: PositionCharSet):
        """XOR of entries over an arbitrary position-character set."""
        h = 0
        for pos, ch in pcs.entries:
            if pos >= self.params.num_chars:
                raise ValueError("position out of range")
            h ^= self.table.entry(pos, ch)
        return h


class SignFunction:
    """Product of per-position random signs, stored as parity bits."""

    def __init__(self, params: SchemeParams, table: TabulationTable):
        if table.width != 1:
            raise ValueError("sign tables store one bit per entry")
        if table.rows != params.num_chars or table.char_bits != params.char_bits:
            raise ValueError("table shape does not match scheme params")
        self.params = params
        self.table = table

    @classmethod
    def from_seed(cls, params, seed, tag=TAG_SIGN):
        table = TabulationTable(params.num_chars, params.char_bits, 1, seed=seed, tag=tag)
        return cls(params, table)

    def __call__(self, key):
        par = 0
        for i, ch in enumerate(unpack_key(key, self.params.char_bits, self.params.num_chars)):
            par ^= self.table.entry(i, ch)
        return -1 if par else 1

    def sign_array(self, keys):
        from . import _kernels

        keys = np.asarray(keys, dtype=np.uint64)
        bits = _kernels.hash_stream(self.table.entries, keys, self.params.char_bits)
        return (1 - 2 * bits.astype(np.int64)).astype(np.int8)


class MixedTabHash:
    """Two-layer tabulation: first-layer hash XOR a second-layer hash of derived characters.

    The first layer is one c-row table whose entries carry the range value in
    the low bits and the derived characters above it, so the layer costs c
    lookups and yields both outputs.
    """

    def __init__(self, params: SchemeParams, fused: TabulationTable, h3: TabulationTable):
        if params.derived_chars < 1:
            raise ValueError("mixed tabulation requires at least one derived character")
        want = params.range_bits + params.derived_chars * params.char_bits
        if want > 64:
            raise ValueError("range_bits + derived_chars*char_bits must fit in 64 bits")
        if fused.width != want or fused.rows != params.num_chars:
            raise ValueError("fused table shape mismatch")
        if h3.rows != params.derived_chars or h3.width != params.range_bits:
            raise ValueError("second-layer table shape mismatch")
        self.params = params
        self.fused = fused
        self.h3 = h3

    @classmethod
    def from_seed(cls, params, seed):
        width = params.range_bits + params.derived_chars * params.char_bits
        fused = TabulationTable(params.num_chars, params.char_bits, width,
                                seed=seed, tag=TAG_FUSED)
        h3 = TabulationTable(params.derived_chars, params.char_bits, params.range_bits,
                             seed=seed, tag=TAG_H3)
        return cls(params, fused, h3)

    def _fused_xor(self, key):
        fx = 0
        for i, ch in enumerate(unpack_key(key, self.params.char_bits, self.params.num_chars)):
            fx ^= self.fused.entry(i, ch)
        return fx

    def first_layer(self, key):
        return self._fused_xor(key) & (self.params.range_size - 1)

    def derived_key(self, key):
        """Derived characters as one packed integer in [2^(d*k))."""
        return self._fused_xor(key) >> self.params.range_bits

    def __call__(self, key):
        p = self.params
        fx = self._fused_xor(key)
        h = fx & (p.range_size - 1)
        deriv = fx >> p.range_bits
        cmask = p.alphabet_size - 1
        for j in range(p.derived_chars):
            h ^= self.h3.entry(j, (deriv >> (j * p.char_bits)) & cmask)
        return h

    def hash_array(self, keys):
        from . import _kernels

        p = self.params
        keys = np.asarray(keys, dtype=np.uint64)
        return _kernels.mixed_hash_stream(self.fused.entries, self.h3.entries, keys,
                                          p.char_bits, p.range_bits)

    def derived_array(self, keys):
        from . import _kernels

        keys = np.asarray(keys, dtype=np.uint64)
        fx = _kernels.hash_stream(self.fused.entries, keys, self.params.char_bits)
        return fx >> np.uint64(self.params.range_bits)


class MixedSignFunction:
    """Sign for mixed tabulation: first-layer sign times a sign of the derived characters."""

    def __init__(self, params: SchemeParams, eps1: SignFunction, h2_table: TabulationTable,
                 h2_shift: int, eps3_table: TabulationTable):
        if params.derived_chars < 1:
            raise ValueError("mixed sign requires at least one derived character")
        if eps3_table.rows != params.derived_chars or eps3_table.width != 1:
            raise ValueError("derived-layer sign table shape mismatch")
        self.params = params
        self.eps1 = eps1
        self.h2_table = h2_table
        self.h2_shift = int(h2_shift)
        self.eps3_table = eps3_table

    @classmethod
    def from_seed(cls, params, seed):
        """Standalone mixed sign with its own derived-character tables."""
        eps1 = SignFunction.from_seed(params, seed, tag=TAG_SIGN1)
        h2 = TabulationTable(params.num_chars, params.char_bits,
                             params.derived_chars * params.char_bits, seed=seed, tag=TAG_H2)
        eps3 = TabulationTable(params.derived_chars, params.char_bits, 1, seed=seed,
                               tag=TAG_SIGN3)
        return cls(params, eps1, h2, 0, eps3)

    @classmethod
    def for_hash(cls, mixed: MixedTabHash, seed):
        """Sign sharing the derived-character function of a paired mixed hash."""
        params = mixed.params
        eps1 = SignFunction.from_seed(params, seed, tag=TAG_SIGN1)
        eps3 = TabulationTable(params.derived_chars, params.char_bits, 1, seed=seed,
                               tag=TAG_SIGN3)
        return cls(params, eps1, mixed.fused, params.range_bits, eps3)

    def derived_key(self, key):
        fx = 0
        for i, ch in enumerate(unpack_key(key, self.params.char_bits, self.params.num_chars)):
            fx ^= self.h2_table.entry(i, ch)
        return fx >> self.h2_shift

    def __call__(self, key):
        p = self.params
        par = 0 if self.eps1(key) == 1 else 1
        deriv = self.derived_key(key)
        cmask = p.alphabet_size - 1
        for j in range(p.derived_chars):
            par ^= self.eps3_table.entry(j, (deriv >> (j * p.char_bits)) & cmask)
        return -1 if par else 1

    def sign_array(self, keys):
        from . import _kernels

        p = self.params
        keys = np.asarray(keys, dtype=np.uint64)
        bits = _kernels.hash_stream(self.eps1.table.entries, keys, p.char_bits)
        fx = _kernels.hash_stream(self.h2_table.entries, keys, p.char_bits)
        deriv = fx >> np.uint64(self.h2_shift)
        cmask = p.alphabet_size - 1
        for j in range(p.derived_chars):
            idx = ((deriv >> (j * p.char_bits)) & cmask).astype(np.int64)
            bits ^= self.eps3_table.entries[j][idx]
        return (1 - 2 * bits.astype(np.int64)).astype(np.int8)


class RandomHash:
    """Fully random baseline: a fresh uniform value per position of a key array.

    Intended for oracle runs over a fixed list of distinct keys, where a
    position-indexed counter stream is exactly a uniform random function.
    """

    def __init__(self, params: SchemeParams, seed):
        self.params = params
        self.seed = int(seed) & MASK64

    def hash_array(self, keys):
        n = len(keys)
        words = raw_words(self.seed, TAG_RANDOM_HASH, 0, n)
        return words & np.uint64(self.params.range_size - 1)

    def sign_array(self, keys):
        n = len(keys)
        words = raw_words(self.seed, TAG_RANDOM_SIGN, 0, n)
        return (1 - 2 * (words & np.uint64(1)).astype(np.int64)).astype(np.int8)


# ---------------------------------------------------------------------------
# descriptors


@dataclass(frozen=True)
class SchemeSpec:
    """Parsed scheme descriptor: kind plus dimensions."""

    kind: str  # "simple" | "mixed" | "random"
    params: SchemeParams

    def describe(self) -> str:
        p = self.params
        if self.kind == "mixed":
            return f"mixed:k={p.char_bits},c={p.num_chars},d={p.derived_chars},l={p.range_bits}"
        return f"{self.kind}:k={p.char_bits},c={p.num_chars},l={p.range_bits}"


def parse_scheme(descriptor: str) -> SchemeSpec:
    """Parse "simple:k=8,c=4,l=16" / "mixed:k=8,c=4,d=1,l=16" / "random:k=8,c=2,l=16"."""
    try:
        kind, _, rest = descriptor.partition(":")
        kind = kind.strip().lower()
        if kind not in ("simple", "mixed", "random"):
            raise ValueError(f"unknown scheme kind {kind!r}")
        fields = {}
        for part in rest.split(","):
            if not part.strip():
                continue
            name, _, value = part.partition("=")
            fields[name.strip()] = int(value, 0)
        extra = set(fields) - {"k", "c", "l", "d"}
        if extra:
            raise ValueError(f"unknown scheme fields {sorted(extra)}")
        for need in ("k", "c", "l"):
            if need not in fields:
                raise ValueError(f"scheme descriptor missing {need}=")
        d = fields.get("d", 0)
        if kind == "mixed" and d < 1:
            raise ValueError("mixed schemes need d >= 1")
        if kind != "mixed" and d != 0:
            raise ValueError("only mixed schemes take derived characters")
        params = SchemeParams(fields["k"], fields["c"], fields["l"], d)
    except ValueError as exc:
        raise DescriptorError(f"bad scheme descriptor {descriptor!r}: {exc}") from exc
    return SchemeSpec(kind, params)


def parse_seed(text) -> int:
    """64-bit seed from decimal or 0x-hex text (config files may pass plain ints)."""
    try:
        value = int(text, 0) if isinstance(text, str) else int(text)
    except (TypeError, ValueError) as exc:
        raise DescriptorError(f"bad seed {text!r}") from exc
    if not 0 <= value < 1 << 64:
        raise DescriptorError("seed must fit in 64 bits")
    return value


def build_hash(spec: SchemeSpec, seed):
    if spec.kind == "simple":
        return SimpleTabHash.from_seed(spec.params, seed)
    if spec.kind == "mixed":
        return MixedTabHash.from_seed(spec.params, seed)
    return RandomHash(spec.params, seed)


def build_sign(spec: SchemeSpec, seed, hash_fn=None):
    if spec.kind == "simple":
        return SignFunction.from_seed(spec.params, seed)
    if spec.kind == "mixed":
        if isinstance(hash_fn, MixedTabHash):
            return MixedSignFunction.for_hash(hash_fn, seed)
        return MixedSignFunction.from_seed(spec.params, seed)
    return RandomHash(spec.params, seed)
