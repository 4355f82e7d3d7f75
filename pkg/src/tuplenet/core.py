"""Minimal differentiable numeric core.

Everything operates on dense numpy arrays.  Trials are ``[channels, samples]``
matrices; convolution runs along the time (samples) axis only, without padding
and without bias terms.  The op vocabulary is fixed: time convolution, tied
de-convolution, tanh/linear activations, dropout, an affine class-score output
layer, and the losses used by the training schemes.  Each layer implements its
exact analytic backward pass; there is no general autodiff.

Runtime math is 32-bit.  Weight-gradient reductions accumulate in 64-bit
before being cast back, so gradients are insensitive to summation order.
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes do not line up for an operation."""


class Activation(enum.Enum):
    LINEAR = "linear"
    TANH = "tanh"


def apply_activation(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.TANH:
        return np.tanh(z)
    return z


def activation_backward(d_out: np.ndarray, out: np.ndarray,
                        activation: Activation) -> np.ndarray:
    """Gradient w.r.t. pre-activation, given gradient w.r.t. post-activation."""
    if activation is Activation.TANH:
        return d_out * (1.0 - out * out)
    return d_out


class Parameter:
    """A trainable tensor with matching gradient and momentum buffers.

    The three arrays always share one shape and dtype.  Gradients accumulate
    by summation across backward calls; callers zero them at the start of
    each mini-batch.
    """

    __slots__ = ("name", "value", "grad", "momentum")

    def __init__(self, value: np.ndarray, name: str = "param"):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.momentum = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def add_grad(self, g: np.ndarray) -> None:
        self.grad += g.astype(self.grad.dtype, copy=False)

    def copy(self) -> "Parameter":
        p = Parameter(self.value.copy(), name=self.name)
        p.grad = self.grad.copy()
        p.momentum = self.momentum.copy()
        return p


class ConvFilterBank:
    """``k`` time-axis filters of width ``w`` over ``c`` input channels.

    Weights have shape ``[k, w, c]``.  There is no bias term.
    """

    def __init__(self, weights, activation: Activation = Activation.TANH,
                 name: str = "bank"):
        weights = np.asarray(weights)
        if weights.ndim != 3:
            raise ShapeError(
                f"filter bank weights must be [filters, width, channels], "
                f"got shape {weights.shape}")
        k, w, c = weights.shape
        if k < 1 or w < 1 or c < 1:
            raise ValueError(f"filter bank dimensions must be >= 1, got {k}x{w}x{c}")
        self.weights = Parameter(weights, name=f"{name}.weights")
        self.activation = activation
        self.name = name

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    @property
    def n_channels(self) -> int:
        return self.weights.shape[2]

    def copy(self, name: str | None = None) -> "ConvFilterBank":
        return ConvFilterBank(self.weights.value.copy(), self.activation,
                              name=name or self.name)

    @classmethod
    def random(cls, n_filters: int, width: int, n_channels: int,
               rng: np.random.Generator, scale: float = 0.1,
               activation: Activation = Activation.TANH,
               name: str = "bank") -> "ConvFilterBank":
        w = rng.normal(0.0, scale, size=(n_filters, width, n_channels))
        return cls(w.astype(DTYPE), activation, name=name)


# ---------------------------------------------------------------------------
# Raw batched kernels.  x: [batch, channels, samples]; z/code: [batch, k, m].
# Weight gradients accumulate in float64 and are cast to the weight dtype.
# ---------------------------------------------------------------------------

def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    win = sliding_window_view(x, w.shape[1], axis=-1)  # [b, c, t, j]
    if stride > 1:
        win = win[:, :, ::stride, :]
    return np.einsum("fjc,bctj->bft", w, win)


def _conv_bwd(x: np.ndarray, w: np.ndarray, dz: np.ndarray,
              stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    win = sliding_window_view(x, w.shape[1], axis=-1)
    if stride > 1:
        win = win[:, :, ::stride, :]
    dw = np.einsum("bft,bctj->fjc", dz, win, dtype=np.float64)
    dx = np.zeros_like(x)
    m = dz.shape[2]
    for j in range(w.shape[1]):
        contrib = np.einsum("bft,fc->bct", dz, w[:, j, :])
        if stride == 1:
            dx[:, :, j:j + m] += contrib
        else:
            dx[:, :, j + stride * np.arange(m)] += contrib
    return dx, dw


def _deconv_fwd(code: np.ndarray, w: np.ndarray) -> np.ndarray:
    b, k, m = code.shape
    _, width, c = w.shape
    z = np.zeros((b, c, m + width - 1), dtype=np.result_type(code, w))
    for j in range(width):
        z[:, :, j:j + m] += np.einsum("bfm,fc->bcm", code, w[:, j, :])
    return z


def _deconv_bwd(code: np.ndarray, w: np.ndarray,
                dz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = code.shape[2]
    width = w.shape[1]
    dcode = np.zeros_like(code)
    dw = np.zeros(w.shape, dtype=np.float64)
    for j in range(width):
        dz_j = dz[:, :, j:j + m]
        dcode += np.einsum("bcm,fc->bfm", dz_j, w[:, j, :])
        dw[:, j, :] = np.einsum("bfm,bcm->fc", code, dz_j, dtype=np.float64)
    return dcode, dw


# ---------------------------------------------------------------------------
# Spec-level single-trial operations.
# ---------------------------------------------------------------------------

def conv_time_forward(x: np.ndarray, bank: ConvFilterBank,
                      stride: int = 1) -> np.ndarray:
    """Valid convolution of ``x [c, n]`` along time; returns ``[k, m]``.

    ``out[f, t] = act(sum_j sum_ch weights[f, j, ch] * x[ch, stride*t + j])``
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"input must be [channels, samples], got shape {x.shape}")
    c, n = x.shape
    if c != bank.n_channels:
        raise ShapeError(
            f"input has {c} channels but the filter bank expects {bank.n_channels}")
    if n < bank.width:
        raise ShapeError(
            f"input length {n} is shorter than the filter width {bank.width}")
    z = _conv_fwd(x[None], bank.weights.value, stride)[0]
    return apply_activation(z, bank.activation)


def deconv_time_tied_forward(code: np.ndarray, bank: ConvFilterBank) -> np.ndarray:
    """Full transposed convolution of ``code [k, m]`` using the encoder weights.

    ``recon[ch, s] = act(sum_f sum_j weights[f, j, ch] * code[f, s - j])``
    over valid ``j``; returns ``[c, m + w - 1]``.
    """
    code = np.asarray(code)
    if code.ndim != 2:
        raise ShapeError(f"code must be [filters, samples], got shape {code.shape}")
    if code.shape[0] != bank.n_filters:
        raise ShapeError(
            f"code has {code.shape[0]} maps but the bank has {bank.n_filters} filters")
    z = _deconv_fwd(code[None], bank.weights.value)[0]
    return apply_activation(z, bank.activation)


def dropout_apply(x: np.ndarray, rate: float, rng_seed: int,
                  training: bool) -> np.ndarray:
    """Inverted dropout: zero each element with probability ``rate`` and
    scale survivors by ``1/(1-rate)``.  Identity outside training mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x)
    if not training or rate == 0.0:
        return x
    rng = np.random.default_rng(rng_seed)
    mask = rng.random(x.shape) >= rate
    return (x * mask / (1.0 - rate)).astype(x.dtype, copy=False)


def hinge_output_forward(features: np.ndarray, weights: np.ndarray,
                         biases: np.ndarray) -> np.ndarray:
    """Class scores ``features @ weights + biases`` of an output layer."""
    features = np.asarray(features)
    weights = np.asarray(weights)
    biases = np.asarray(biases)
    if features.ndim != 1 or weights.ndim != 2 or biases.ndim != 1:
        raise ShapeError("expected features [d], weights [d, C], biases [C]")
    if features.shape[0] != weights.shape[0] or weights.shape[1] != biases.shape[0]:
        raise ShapeError(
            f"incompatible output layer shapes: features {features.shape}, "
            f"weights {weights.shape}, biases {biases.shape}")
    return features @ weights + biases


def l2svm_loss(scores: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Squared hinge (L2-SVM) loss with one-vs-all margins against the target.

    ``loss = sum_{j != target} max(0, 1 - (scores[target] - scores[j]))^2``.
    Returns the loss and its analytic gradient w.r.t. the scores.
    """
    scores = np.asarray(scores)
    if scores.ndim != 1:
        raise ShapeError(f"scores must be a vector, got shape {scores.shape}")
    n = scores.shape[0]
    if not 0 <= target < n:
        raise ValueError(f"target class {target} out of range for {n} scores")
    v = np.maximum(0.0, 1.0 - (scores[target] - scores))
    v[target] = 0.0
    d = 2.0 * v
    d[target] = -2.0 * v.sum()
    return float((v * v).sum()), d.astype(scores.dtype, copy=False)


def softmax_nll(scores: np.ndarray, target: int = 0) -> tuple[float, np.ndarray]:
    """Negative log softmax probability of ``target``; gradient w.r.t. scores."""
    scores = np.asarray(scores)
    shifted = scores - scores.max()
    e = np.exp(shifted)
    p = e / e.sum()
    d = p.copy()
    d[target] -= 1.0
    return float(-np.log(p[target])), d.astype(scores.dtype, copy=False)


def _l2svm_batch(scores: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared-hinge loss over a batch of score rows."""
    b = scores.shape[0]
    rows = np.arange(b)
    target_scores = scores[rows, targets]
    v = np.maximum(0.0, 1.0 - (target_scores[:, None] - scores))
    v[rows, targets] = 0.0
    loss = float((v * v).sum() / b)
    d = 2.0 * v
    d[rows, targets] = -2.0 * v.sum(axis=1)
    return loss, (d / b).astype(scores.dtype, copy=False)


def _softmax_nll_batch(scores: np.ndarray,
                       target: int = 0) -> tuple[float, np.ndarray]:
    """Mean NLL of column ``target`` under a row-wise softmax."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    loss = float(-np.log(p[:, target]).mean())
    d = p.copy()
    d[:, target] -= 1.0
    return loss, (d / scores.shape[0]).astype(scores.dtype, copy=False)


# ---------------------------------------------------------------------------
# Layer stack.  All layers consume batched input and record what they need
# for one backward pass; backward before forward is a state error.
# ---------------------------------------------------------------------------

class Layer:
    def params(self) -> list[Parameter]:
        return []

    def trainable_params(self) -> list[Parameter]:
        return [] if getattr(self, "frozen", False) else self.params()

    def forward(self, x, training: bool = False, selectors=None):
        raise NotImplementedError

    def backward(self, d_out):
        raise NotImplementedError

    def _take_cache(self):
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise RuntimeError(
                f"backward called on {type(self).__name__} before forward")
        self._cache = None
        return cache

    def spec(self) -> dict:
        raise NotImplementedError


class TimeConv(Layer):
    """Convolution along time for a batch of trials ``[b, c, n]``."""

    def __init__(self, bank: ConvFilterBank, stride: int = 1,
                 frozen: bool = False):
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        self.bank = bank
        self.stride = stride
        self.frozen = frozen
        self._cache = None

    def params(self):
        return [self.bank.weights]

    def forward(self, x, training: bool = False, selectors=None):
        if x.shape[1] != self.bank.n_channels:
            raise ShapeError(
                f"layer {self.bank.name}: input has {x.shape[1]} channels, "
                f"expected {self.bank.n_channels}")
        z = _conv_fwd(x, self.bank.weights.value, self.stride)
        out = apply_activation(z, self.bank.activation)
        self._cache = (x, out)
        return out

    def backward(self, d_out):
        x, out = self._take_cache()
        dz = activation_backward(d_out, out, self.bank.activation)
        dx, dw = _conv_bwd(x, self.bank.weights.value, dz, self.stride)
        self.bank.weights.add_grad(dw)
        return dx

    def out_shape(self, n_samples: int) -> tuple[int, int]:
        m = (n_samples - self.bank.width) // self.stride + 1
        return self.bank.n_filters, m

    def spec(self):
        return {"type": "conv", "filters": self.bank.n_filters,
                "width": self.bank.width, "channels": self.bank.n_channels,
                "stride": self.stride,
                "activation": self.bank.activation.value,
                "frozen": self.frozen, "name": self.bank.name}


class TiedDeconv(Layer):
    """Transposed convolution sharing the weights of an encoder bank."""

    def __init__(self, bank: ConvFilterBank):
        self.bank = bank
        self._cache = None

    def params(self):
        return [self.bank.weights]

    def forward(self, code, training: bool = False, selectors=None):
        if code.shape[1] != self.bank.n_filters:
            raise ShapeError(
                f"decoder {self.bank.name}: code has {code.shape[1]} maps, "
                f"expected {self.bank.n_filters}")
        z = _deconv_fwd(code, self.bank.weights.value)
        out = apply_activation(z, self.bank.activation)
        self._cache = (code, out)
        return out

    def backward(self, d_out):
        code, out = self._take_cache()
        dz = activation_backward(d_out, out, self.bank.activation)
        dcode, dw = _deconv_bwd(code, self.bank.weights.value, dz)
        self.bank.weights.add_grad(dw)
        return dcode

    def spec(self):
        return {"type": "tied_deconv", "name": self.bank.name}


class Dropout(Layer):
    def __init__(self, rate: float, seed: int = 0):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._cache = None

    def reseed(self, seed: int) -> None:
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def forward(self, x, training: bool = False, selectors=None):
        if not training or self.rate == 0.0:
            self._cache = (None,)
            return x
        mask = (self._rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        mask = mask.astype(x.dtype)
        self._cache = (mask,)
        return x * mask

    def backward(self, d_out):
        (mask,) = self._take_cache()
        if mask is None:
            return d_out
        return d_out * mask

    def spec(self):
        return {"type": "dropout", "rate": self.rate}


class Flatten(Layer):
    def forward(self, x, training: bool = False, selectors=None):
        self._cache = (x.shape,)
        return x.reshape(x.shape[0], -1)

    def backward(self, d_out):
        (shape,) = self._take_cache()
        return d_out.reshape(shape)

    def spec(self):
        return {"type": "flatten"}


class DenseOutput(Layer):
    """Affine map from flattened features to class scores (with biases)."""

    def __init__(self, weights: np.ndarray, biases: np.ndarray,
                 name: str = "output"):
        weights = np.asarray(weights)
        biases = np.asarray(biases)
        if weights.ndim != 2 or biases.ndim != 1 \
                or weights.shape[1] != biases.shape[0]:
            raise ShapeError(
                f"output layer needs weights [d, C] and biases [C], got "
                f"{weights.shape} and {biases.shape}")
        self.weights = Parameter(weights, name=f"{name}.weights")
        self.biases = Parameter(biases, name=f"{name}.biases")
        self.name = name
        self._cache = None

    @classmethod
    def random(cls, n_features: int, n_classes: int, rng: np.random.Generator,
               scale: float = 0.01, name: str = "output") -> "DenseOutput":
        w = rng.normal(0.0, scale, size=(n_features, n_classes)).astype(DTYPE)
        return cls(w, np.zeros(n_classes, dtype=DTYPE), name=name)

    def params(self):
        return [self.weights, self.biases]

    def forward(self, x, training: bool = False, selectors=None):
        if x.shape[1] != self.weights.shape[0]:
            raise ShapeError(
                f"output layer expects {self.weights.shape[0]} features, "
                f"got {x.shape[1]}")
        self._cache = (x,)
        return x @ self.weights.value + self.biases.value

    def backward(self, d_out):
        (x,) = self._take_cache()
        dw = np.einsum("bd,bc->dc", x, d_out, dtype=np.float64)
        self.weights.add_grad(dw)
        self.biases.add_grad(d_out.sum(axis=0, dtype=np.float64))
        return d_out @ self.weights.value.T

    def spec(self):
        return {"type": "output", "features": self.weights.shape[0],
                "classes": self.weights.shape[1], "name": self.name}


class Model:
    """Ordered stack of layers with a shared forward/backward contract."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def params(self) -> list[Parameter]:
        seen: dict[int, Parameter] = {}
        for layer in self.layers:
            for p in layer.params():
                seen.setdefault(id(p), p)
        return list(seen.values())

    def trainable_params(self) -> list[Parameter]:
        seen: dict[int, Parameter] = {}
        for layer in self.layers:
            for p in layer.trainable_params():
                seen.setdefault(id(p), p)
        return list(seen.values())

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def forward(self, x, training: bool = False, selectors=None):
        for layer in self.layers:
            x = layer.forward(x, training=training, selectors=selectors)
        return x

    def backward(self, d_out):
        for layer in reversed(self.layers):
            d_out = layer.backward(d_out)
        return d_out

    def scores(self, x, selectors=None) -> np.ndarray:
        return self.forward(x, training=False, selectors=selectors)

    def predict(self, x, selectors=None) -> np.ndarray:
        return np.argmax(self.scores(x, selectors=selectors), axis=1)

    def copy(self) -> "Model":
        import copy as _copy

        return _copy.deepcopy(self)
