"""Backend parity: the numba kernels and the numpy fallbacks must agree exactly."""
import numpy as np
import pytest

from tabhash import _kernels

BACKENDS = ["numpy"] + (["numba"] if _kernels._HAS_NUMBA else [])


@pytest.fixture
def restore_backend():
    current = _kernels.active_backend()
    yield
    _kernels.set_backend(current)


def both(fn, *args, copy_args=()):
    outs = []
    for backend in BACKENDS:
        _kernels.set_backend(backend)
        call_args = [a.copy() if i in copy_args else a for i, a in enumerate(args)]
        outs.append(fn(*call_args))
    return outs


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_hash_stream_parity(restore_backend):
    rng = np.random.default_rng(0)
    tables = rng.integers(0, 1 << 16, (4, 256), dtype=np.uint64)
    keys = rng.integers(0, 1 << 32, 1000, dtype=np.uint64)
    a, b = both(_kernels.hash_stream, tables, keys, 8)
    assert np.array_equal(a, b)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_hash_batch_parity(restore_backend):
    rng = np.random.default_rng(1)
    tables = rng.integers(0, 1 << 20, (9, 3, 16), dtype=np.uint64)
    chars = rng.integers(0, 16, (3, 33)).astype(np.int64)
    a, b = both(_kernels.hash_batch, tables, chars)
    assert np.array_equal(a, b)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_enum_simple_parity(restore_backend):
    rng = np.random.default_rng(2)
    slots = np.stack([np.arange(3), 4 + rng.integers(0, 4, 3)]).T.astype(np.int64)
    vmat = rng.normal(size=(3, 4))
    n_fill = 1 << 20  # 8 slots x 2 bits + 4 sign bits
    outs = []
    for backend in BACKENDS:
        _kernels.set_backend(backend)
        out = np.empty(n_fill)
        _kernels.enum_simple(n_fill, slots, 2, 16, vmat, out)
        outs.append(out)
    assert np.array_equal(outs[0], outs[1])


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_enum_mixed_parity(restore_backend):
    rng = np.random.default_rng(3)
    slots = np.array([[0], [1]], dtype=np.int64)
    vmat = rng.normal(size=(2, 2))
    # fused: 2 slots x 2 bits; second layer: 2 slots x 1 bit; signs: 2 + 2 bits
    n_fill = 1 << 10
    outs = []
    for backend in BACKENDS:
        _kernels.set_backend(backend)
        out = np.empty(n_fill)
        _kernels.enum_mixed(n_fill, slots, 1, 1, 1, 2, 4, 6, 8, vmat, out)
        outs.append(out)
    assert np.array_equal(outs[0], outs[1])


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_fwht_parity_and_involution(restore_backend):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 32))
    outs = both(_kernels.fwht, x, copy_args=(0,))
    assert np.allclose(outs[0], outs[1], rtol=0, atol=1e-12)
    # applying the transform twice scales by the length
    twice = _kernels.fwht(_kernels.fwht(x.copy()))
    assert np.allclose(twice, 32 * x, atol=1e-9)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_bin_minima_parity_and_ties(restore_backend):
    rng = np.random.default_rng(5)
    bins = rng.integers(0, 16, 500).astype(np.int64)
    local = rng.integers(0, 8, 500).astype(np.uint64)  # many ties
    a, b = both(_kernels.bin_minima, bins, local, 16)
    assert np.array_equal(a, b)
    # ties resolve to the smallest index
    idx = _kernels.bin_minima(np.zeros(4, dtype=np.int64),
                              np.array([3, 1, 1, 2], dtype=np.uint64), 2)
    assert idx[0] == 1 and idx[1] == -1


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_mixed_hash_stream_parity(restore_backend):
    rng = np.random.default_rng(6)
    fused = rng.integers(0, 1 << 24, (2, 256), dtype=np.uint64)
    h3 = rng.integers(0, 1 << 16, (1, 256), dtype=np.uint64)
    keys = rng.integers(0, 1 << 16, 500, dtype=np.uint64)
    a, b = both(_kernels.mixed_hash_stream, fused, h3, keys, 8, 16)
    assert np.array_equal(a, b)


def test_fwht_requires_power_of_two():
    with pytest.raises(ValueError):
        _kernels.fwht(np.zeros((1, 3)))


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _kernels.set_backend("fortran")
