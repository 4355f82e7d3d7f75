"""Reconstruction metrics, confusion analyses, exact binomial significance
tests, the two-proportion z-test, and the PCA baseline."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


class ConstantChannelWarning(UserWarning):
    """A channel with zero variance was encountered where correlation or
    normalization is undefined; it contributes 0 instead."""


def msre(x: np.ndarray, recon: np.ndarray) -> float:
    """Squared Euclidean distance between input and reconstruction,
    averaged over time samples (summed over channels)."""
    x = np.asarray(x)
    recon = np.asarray(recon)
    if x.shape != recon.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {recon.shape}")
    diff = (x - recon).astype(np.float64)
    return float((diff * diff).sum() / x.shape[-1])


def mcc(x: np.ndarray, recon: np.ndarray) -> float:
    """Mean over channels of Pearson's r between each channel and its
    reconstruction.  Constant channels contribute 0 with a warning."""
    x = np.asarray(x, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if x.shape != recon.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {recon.shape}")
    a = x - x.mean(axis=-1, keepdims=True)
    b = recon - recon.mean(axis=-1, keepdims=True)
    na = np.sqrt((a * a).sum(axis=-1))
    nb = np.sqrt((b * b).sum(axis=-1))
    denom = na * nb
    flat = np.atleast_1d(denom == 0)
    if flat.any():
        warnings.warn(
            f"{int(flat.sum())} constant channel(s) contribute r=0",
            ConstantChannelWarning, stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom == 0, 0.0, (a * b).sum(axis=-1) / np.where(denom == 0, 1.0, denom))
    return float(np.mean(r))


# ---------------------------------------------------------------------------
# Significance tests
# ---------------------------------------------------------------------------

def _log_binom_pmf(n: int, k: int, log_p: float, log_q: float) -> float:
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
            + k * log_p + (n - k) * log_q)


def binomial_p(n: int, k: int, p0: float) -> float:
    """Exact upper-tail binomial probability ``P(X >= k | n, p0)``.

    Terms are summed exactly (integer binomial coefficients, ``math.fsum``);
    for very large ``n`` the summation falls back to log space.
    """
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < p0 < 1.0:
        raise ValueError(f"chance rate must be in (0, 1), got {p0}")
    if k == 0:
        return 1.0
    q0 = 1.0 - p0
    if n <= 512:
        terms = [math.comb(n, i) * p0 ** i * q0 ** (n - i) for i in range(k, n + 1)]
        return min(1.0, math.fsum(terms))
    log_p, log_q = math.log(p0), math.log(q0)
    logs = [_log_binom_pmf(n, i, log_p, log_q) for i in range(k, n + 1)]
    peak = max(logs)
    return min(1.0, math.exp(peak) * math.fsum(math.exp(v - peak) for v in logs))


def binomial_central_band(n: int, p0: float, coverage: float = 0.99) -> tuple[int, int]:
    """Smallest equal-tail band ``[lo, hi]`` with
    ``P(X < lo) <= (1-coverage)/2`` and ``P(X > hi) <= (1-coverage)/2``."""
    if not 0.0 < coverage < 1.0:
        raise ValueError(f"coverage must be in (0, 1), got {coverage}")
    tail = (1.0 - coverage) / 2.0
    lo = 0
    # largest lo with P(X < lo) <= tail, i.e. P(X >= lo) >= 1 - tail
    while lo < n and binomial_p(n, lo + 1, p0) >= 1.0 - tail:
        lo += 1
    hi = n
    while hi > 0 and binomial_p(n, hi, p0) <= tail:
        hi -= 1
    return lo, hi


def two_proportion_z(acc_a: float, n_a: int, acc_b: float,
                     n_b: int) -> tuple[float, float]:
    """Pooled two-proportion z-test; returns ``(z, two-sided p)``."""
    if n_a <= 0 or n_b <= 0:
        raise ValueError("sample sizes must be positive")
    pooled = (acc_a * n_a + acc_b * n_b) / (n_a + n_b)
    var = pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b)
    if var == 0.0:
        return 0.0, 1.0
    z = (acc_a - acc_b) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return z, p


# ---------------------------------------------------------------------------
# Confusion analyses
# ---------------------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray
    labels: tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    @property
    def n_correct(self) -> int:
        return int(np.trace(self.counts))

    def to_csv(self, path) -> None:
        n = self.counts.shape[0]
        labels = self.labels or tuple(str(i) for i in range(n))
        with open(path, "w", encoding="utf-8") as f:
            f.write("true\\predicted," + ",".join(labels) + "\n")
            for i in range(n):
                f.write(labels[i] + "," + ",".join(str(int(v)) for v in self.counts[i]) + "\n")


def confusion(predicted: np.ndarray, true: np.ndarray, n_classes: int,
              labels: tuple[str, ...] = ()) -> ConfusionMatrix:
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.size == 0:
        raise ValueError("cannot build a confusion matrix from zero trials")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true, predicted), 1)
    return ConfusionMatrix(counts, labels)


def binary_confusion(scores: np.ndarray, true: np.ndarray, class_a: int,
                     class_b: int) -> tuple[np.ndarray, float]:
    """Restrict a multi-class scorer to two classes.

    ``scores`` is ``[n, C]`` for trials whose true class is ``class_a`` or
    ``class_b``; prediction is the argmax over the two class columns only.
    Returns the 2x2 count matrix (rows true a,b; cols predicted a,b) and the
    exact binomial p-value of the observed correct count at chance 0.5.
    """
    scores = np.asarray(scores)
    true = np.asarray(true)
    mask = (true == class_a) | (true == class_b)
    if not mask.any():
        raise ValueError("no trials belong to the requested class pair")
    sub = scores[mask][:, [class_a, class_b]]
    pred_b = np.argmax(sub, axis=1)  # 0 -> class_a, 1 -> class_b
    true_b = (true[mask] == class_b).astype(int)
    counts = np.zeros((2, 2), dtype=np.int64)
    np.add.at(counts, (true_b, pred_b), 1)
    n = int(mask.sum())
    k = int(np.trace(counts))
    return counts, binomial_p(n, k, 0.5)


# ---------------------------------------------------------------------------
# PCA baseline
# ---------------------------------------------------------------------------

@dataclass
class PcaBasis:
    """Top-k orthonormal channel-weight vectors of the channel covariance."""

    components: np.ndarray            # [k, channels]
    explained_variance_ratio: np.ndarray
    mean: np.ndarray                  # per-channel mean of the fitted data


def _concat_channels(trials) -> np.ndarray:
    mats = [np.asarray(t.data if hasattr(t, "data") else t, dtype=np.float64)
            for t in trials]
    return np.concatenate(mats, axis=1)


def pca_fit(trials, k: int) -> PcaBasis:
    """Eigendecomposition of the channel covariance of trials concatenated
    along time."""
    x = _concat_channels(trials)
    c = x.shape[0]
    if not 1 <= k <= c:
        raise ValueError(f"k must be in [1, {c}], got {k}")
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    cov = centered @ centered.T / x.shape[1]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    components = eigvecs[:, order[:k]].T
    total = eigvals.sum()
    ratios = eigvals[:k] / total if total > 0 else np.zeros(k)
    return PcaBasis(components, ratios, mean)


def pca_reconstruct(basis: PcaBasis, x: np.ndarray) -> np.ndarray:
    """Rank-k reconstruction ``mean + U^T U (x - mean)`` of one trial."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - basis.mean[:, None]
    return basis.mean[:, None] + basis.components.T @ (basis.components @ centered)


def pca_msre(basis: PcaBasis, trials) -> float:
    """Mean over trials of the rank-k reconstruction MSRE: the oracle floor
    for linear width-1 tied auto-encoders."""
    values = [msre(np.asarray(t.data if hasattr(t, "data") else t, dtype=np.float64),
                   pca_reconstruct(basis, t.data if hasattr(t, "data") else t))
              for t in trials]
    return float(np.mean(values))
