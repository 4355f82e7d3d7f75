"""Shared test oracles: brute-force loop references and finite differences.

These stay deliberately independent of the library's vectorized code paths.
"""

import numpy as np
import pytest

from tuplenet.data import Trial, TrialStore


def conv_loop_oracle(x, w, stride=1):
    """Triple-nested-loop valid convolution along time."""
    k, width, c = w.shape
    n = x.shape[1]
    m = (n - width) // stride + 1
    out = np.zeros((k, m), dtype=np.result_type(x, w))
    for f in range(k):
        for t in range(m):
            acc = 0.0
            for j in range(width):
                for ch in range(c):
                    acc += w[f, j, ch] * x[ch, t * stride + j]
            out[f, t] = acc
    return out


def deconv_loop_oracle(code, w):
    """Loop reference for the full transposed convolution with tied weights."""
    k, width, c = w.shape
    m = code.shape[1]
    out = np.zeros((c, m + width - 1), dtype=np.result_type(code, w))
    for ch in range(c):
        for s in range(m + width - 1):
            acc = 0.0
            for f in range(k):
                for j in range(width):
                    if 0 <= s - j < m:
                        acc += w[f, j, ch] * code[f, s - j]
            out[ch, s] = acc
    return out


def numerical_grad(f, x, h=1e-3):
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (64-bit)."""
    x = np.asarray(x, dtype=np.float64).copy()
    g = np.zeros_like(x)
    flat, gflat = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def grad_gap(analytic, numeric):
    """Max deviation normalized by the dominant gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def assert_grad_close(analytic, numeric, tol=1e-4):
    gap = grad_gap(analytic, numeric)
    assert gap < tol, f"gradient mismatch: relative gap {gap:.3g} >= {tol}"


def toy_store(n_subjects=2, n_classes=3, n_blocks=5, channels=4, samples=10,
              seed=0, sample_rate=64):
    """A small complete store with deterministic random data."""
    rng = np.random.default_rng(seed)
    trials = []
    for s in range(n_subjects):
        for b in range(1, n_blocks + 1):
            for k in range(n_classes):
                trials.append(Trial(f"S{s + 1:02d}", f"C{k + 1:02d}", b,
                                    sample_rate,
                                    rng.normal(size=(channels, samples))
                                    .astype(np.float32)))
    return TrialStore(trials)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
