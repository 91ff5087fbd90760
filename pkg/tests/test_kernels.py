"""Compiled kernels and the pure-Python fallback must agree exactly."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rpdct import _fallback, kernels

_kernels = pytest.importorskip("rpdct._kernels")


@given(st.integers(0, 2**31 - 1), st.sampled_from([4, 8]))
def test_label_matches(seed, conn):
    mask = (np.random.default_rng(seed).random((17, 23)) < 0.45).astype(np.uint8)
    la, na = _fallback.label(mask, conn)
    lb, nb = _kernels.label(mask, conn)
    assert na == nb
    np.testing.assert_array_equal(la, lb)


@given(st.integers(0, 2**31 - 1))
def test_moore_trace_matches(seed):
    rng = np.random.default_rng(seed)
    mask = np.zeros((20, 20), dtype=np.uint8)
    mask[3:17, 3:17] = rng.random((14, 14)) < 0.8
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return
    sy = int(ys.min())
    sx = int(xs[ys == sy].min())
    a = _fallback.moore_trace(mask, sx, sy, sx - 1, sy)
    b = _kernels.moore_trace(mask, sx, sy, sx - 1, sy)
    np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


def test_sgd_epoch_matches():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 5))
    t = rng.uniform(-0.9, 0.9, size=(30, 3))
    order = rng.permutation(30).astype(np.int64)
    w1 = rng.uniform(-0.5, 0.5, size=(7, 6))
    w2 = rng.uniform(-0.5, 0.5, size=(3, 8))
    states = []
    for mod in (_fallback, _kernels):
        a, b = w1.copy(), w2.copy()
        va, vb = np.zeros_like(a), np.zeros_like(b)
        sse = mod.sgd_epoch(a, b, va, vb, x, t, order, 0.01, 0.9)
        states.append((sse, a, b, va, vb))
    (s0, *arrs0), (s1, *arrs1) = states
    assert s0 == pytest.approx(s1, rel=1e-12)
    for p, q in zip(arrs0, arrs1):
        np.testing.assert_allclose(p, q, rtol=1e-12, atol=1e-14)


def test_backend_flag():
    assert kernels.BACKEND in ("compiled", "python")
