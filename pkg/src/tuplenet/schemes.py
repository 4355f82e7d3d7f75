"""The three pre-training schemes and the selector-routed hydra layer.

* ``cae_train``: tied-weight convolutional auto-encoding (reconstruct the
  input), optionally fine-tuned per subject from a shared initialization.
* ``cte_train_stage1/2``: cross-trial encoding -- reconstruct a *different*
  trial of the same class, first within subjects with one shared bank, then
  across subjects with per-subject encoder/decoder pathways (hydra layers)
  whose encoder and decoder weights are tied within each subject.
* ``sce_train``: similarity-constraint encoding -- encode tuples
  ``(reference, same-class, other-class...)`` with one shared bank and demand
  that the same-class companion gets the strictly highest dot-product score.

All trainers run mini-batch SGD with momentum and stop early on the training
error, restoring the best weights seen.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .core import (Activation, ConvFilterBank, Layer, Parameter, ShapeError,
                   TiedDeconv, TimeConv, _conv_bwd, _conv_fwd, _deconv_bwd,
                   _deconv_fwd, _softmax_nll_batch, _l2svm_batch,
                   activation_backward, apply_activation, conv_time_forward)
from .data import TrialStore, pad_store_to_longest
from .optim import OptimizerConfig, TrainingError, sgd_step
from .tuples import TupleIndex

EpochCallback = Callable[[int, float], None]


# ---------------------------------------------------------------------------
# Hydra layers: one weight set ("pathway") per selector value.
# ---------------------------------------------------------------------------

class Strategy(enum.Enum):
    MASKED_ALL = "masked_all"
    PER_INSTANCE = "per_instance"


class _HydraBase(Layer):
    def __init__(self, pathways: Mapping[str, ConvFilterBank],
                 strategy: Strategy = Strategy.MASKED_ALL,
                 frozen: bool = False):
        if not pathways:
            raise ValueError("a hydra layer needs at least one pathway")
        shapes = {b.weights.shape for b in pathways.values()}
        activations = {b.activation for b in pathways.values()}
        if len(shapes) > 1 or len(activations) > 1:
            raise ShapeError(
                f"all hydra pathways must share one filter shape and "
                f"activation, got shapes {sorted(shapes)}")
        self.pathways = dict(pathways)
        self.strategy = Strategy(strategy)
        self.frozen = frozen
        self._cache = None

    @property
    def selectors(self) -> tuple[str, ...]:
        return tuple(self.pathways)

    @property
    def activation(self) -> Activation:
        return next(iter(self.pathways.values())).activation

    def params(self) -> list[Parameter]:
        return [b.weights for b in self.pathways.values()]

    def _resolve(self, selectors, batch_size: int) -> np.ndarray:
        if selectors is None:
            raise ValueError("hydra layer requires per-instance selectors")
        sel = np.asarray(selectors)
        if sel.shape != (batch_size,):
            raise ShapeError(
                f"got {sel.shape[0] if sel.ndim else 0} selectors for a batch "
                f"of {batch_size}")
        for s in np.unique(sel):
            if str(s) not in self.pathways:
                raise ValueError(f"no pathway for selector {s!r}")
        return sel


class HydraTimeConv(_HydraBase):
    """Time convolution with per-selector weights.

    ``masked_all`` runs every pathway over the whole batch and keeps each
    instance's selected rows; ``per_instance`` visits instances one by one
    with only their own pathway.  Both produce the same outputs and
    gradients; only the cost profile differs.
    """

    def __init__(self, pathways, strategy=Strategy.MASKED_ALL, stride: int = 1,
                 frozen: bool = False):
        super().__init__(pathways, strategy, frozen)
        self.stride = stride

    def forward(self, x, training: bool = False, selectors=None):
        sel = self._resolve(selectors, x.shape[0])
        act = self.activation
        if self.strategy is Strategy.MASKED_ALL:
            outs = {s: apply_activation(_conv_fwd(x, b.weights.value, self.stride), act)
                    for s, b in self.pathways.items()}
            out = np.empty_like(next(iter(outs.values())))
            for s, o in outs.items():
                rows = sel == s
                out[rows] = o[rows]
            self._cache = (x, sel, outs)
        else:
            rows = [apply_activation(
                _conv_fwd(x[i:i + 1], self.pathways[str(s)].weights.value,
                          self.stride), act)
                for i, s in enumerate(sel)]
            out = np.concatenate(rows, axis=0)
            self._cache = (x, sel, out)
        return out

    def backward(self, d_out):
        x, sel, cached = self._take_cache()
        act = self.activation
        dx = np.zeros_like(x)
        if self.strategy is Strategy.MASKED_ALL:
            for s, bank in self.pathways.items():
                rows = sel == s
                if not rows.any():
                    continue
                d_masked = np.zeros_like(d_out)
                d_masked[rows] = d_out[rows]
                dz = activation_backward(d_masked, cached[s], act)
                dx_s, dw = _conv_bwd(x, bank.weights.value, dz, self.stride)
                bank.weights.add_grad(dw)
                dx[rows] = dx_s[rows]
        else:
            buffers = {s: np.zeros(b.weights.shape, dtype=np.float64)
                       for s, b in self.pathways.items()}
            for i, s in enumerate(sel):
                dz = activation_backward(d_out[i:i + 1], cached[i:i + 1], act)
                dx_i, dw = _conv_bwd(x[i:i + 1],
                                     self.pathways[str(s)].weights.value, dz,
                                     self.stride)
                dx[i] = dx_i[0]
                buffers[str(s)] += dw
            for s, bank in self.pathways.items():
                bank.weights.add_grad(buffers[s])
        return dx

    def out_shape(self, n_samples: int) -> tuple[int, int]:
        bank = next(iter(self.pathways.values()))
        return bank.n_filters, (n_samples - bank.width) // self.stride + 1

    def spec(self):
        bank = next(iter(self.pathways.values()))
        return {"type": "hydra_conv", "selectors": list(self.pathways),
                "filters": bank.n_filters, "width": bank.width,
                "channels": bank.n_channels, "stride": self.stride,
                "activation": bank.activation.value, "frozen": self.frozen}


class HydraTiedDeconv(_HydraBase):
    """Transposed convolution whose pathways share the encoder's banks:
    pass the same ``ConvFilterBank`` objects to tie weights within subjects."""

    def forward(self, code, training: bool = False, selectors=None):
        sel = self._resolve(selectors, code.shape[0])
        act = self.activation
        if self.strategy is Strategy.MASKED_ALL:
            outs = {s: apply_activation(_deconv_fwd(code, b.weights.value), act)
                    for s, b in self.pathways.items()}
            out = np.empty_like(next(iter(outs.values())))
            for s, o in outs.items():
                rows = sel == s
                out[rows] = o[rows]
            self._cache = (code, sel, outs)
        else:
            rows = [apply_activation(
                _deconv_fwd(code[i:i + 1], self.pathways[str(s)].weights.value), act)
                for i, s in enumerate(sel)]
            out = np.concatenate(rows, axis=0)
            self._cache = (code, sel, out)
        return out

    def backward(self, d_out):
        code, sel, cached = self._take_cache()
        act = self.activation
        dcode = np.zeros_like(code)
        if self.strategy is Strategy.MASKED_ALL:
            for s, bank in self.pathways.items():
                rows = sel == s
                if not rows.any():
                    continue
                d_masked = np.zeros_like(d_out)
                d_masked[rows] = d_out[rows]
                dz = activation_backward(d_masked, cached[s], act)
                dcode_s, dw = _deconv_bwd(code, bank.weights.value, dz)
                bank.weights.add_grad(dw)
                dcode[rows] = dcode_s[rows]
        else:
            buffers = {s: np.zeros(b.weights.shape, dtype=np.float64)
                       for s, b in self.pathways.items()}
            for i, s in enumerate(sel):
                dz = activation_backward(d_out[i:i + 1], cached[i:i + 1], act)
                dcode_i, dw = _deconv_bwd(code[i:i + 1],
                                          self.pathways[str(s)].weights.value, dz)
                dcode[i] = dcode_i[0]
                buffers[str(s)] += dw
            for s, bank in self.pathways.items():
                bank.weights.add_grad(buffers[s])
        return dcode

    def spec(self):
        return {"type": "hydra_tied_deconv", "selectors": list(self.pathways)}


def hydra_forward(layer: _HydraBase, batch: np.ndarray, selectors) -> np.ndarray:
    """Route each instance of ``batch`` through its selected pathway."""
    return layer.forward(batch, training=False, selectors=selectors)


# ---------------------------------------------------------------------------
# Losses and training-loop plumbing
# ---------------------------------------------------------------------------

class CteLoss(enum.Enum):
    MSRE = "msre"
    NEG_DOT = "neg_dot"


def _msre_batch(recon: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = recon - target
    scale = recon.shape[0] * recon.shape[2]
    loss = float((diff.astype(np.float64) ** 2).sum() / scale)
    return loss, (2.0 / scale) * diff


def _neg_dot_batch(recon: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    scale = recon.shape[0] * recon.shape[2]
    loss = float(-(recon.astype(np.float64) * target).sum() / scale)
    return loss, (-1.0 / scale) * target


class _BestWeights:
    """Early stopping on training error: remembers the best loss seen and the
    weights that produced it; the best-so-far series is non-increasing."""

    def __init__(self, params: list[Parameter], patience: int,
                 min_delta: float = 0.0):
        self.params = params
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.stale = 0
        self._snapshot = [p.value.copy() for p in params]

    def update(self, loss: float) -> bool:
        """Record an epoch loss; returns True when training should stop."""
        if not math.isfinite(loss):
            raise TrainingError(f"training loss became non-finite ({loss})")
        if loss < self.best - self.min_delta:
            self.best = loss
            self.stale = 0
            self._snapshot = [p.value.copy() for p in self.params]
        else:
            self.stale += 1
        return self.stale >= self.patience

    def restore(self) -> None:
        for p, v in zip(self.params, self._snapshot):
            p.value[...] = v


def _entry_array(index: TupleIndex) -> np.ndarray:
    return np.array(list(index), dtype=np.int64)


def _check_equal_lengths(store: TrialStore, what: str) -> None:
    lengths = {t.n_samples for t in store}
    if len(lengths) > 1:
        raise ValueError(
            f"{what} requires equal-length (cropped) trials, got lengths "
            f"{sorted(lengths)}")


def _batched(n: int, batch_size: int, perm: np.ndarray):
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


# ---------------------------------------------------------------------------
# Tied-weight convolutional auto-encoding
# ---------------------------------------------------------------------------

def default_pretrain_config(**overrides) -> OptimizerConfig:
    base = dict(learning_rate=0.05, momentum=0.9, decay_factor=0.999,
                l1_coeff=0.0, batch_size=128, max_epochs=1000,
                dropout_rate=0.0)
    base.update(overrides)
    return OptimizerConfig(**base)


def _autoencode_epoch_loss(x: np.ndarray, enc: TimeConv, dec: TiedDeconv,
                           batch_size: int) -> float:
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        xb = x[start:start + batch_size]
        recon = dec.forward(enc.forward(xb))
        loss, _ = _msre_batch(recon, xb)
        total += loss * xb.shape[0]
    return total / x.shape[0]


def cae_train(store: TrialStore, n_filters: int, width: int,
              config: OptimizerConfig | None = None,
              activation: Activation = Activation.TANH, seed: int = 0,
              patience: int = 40, on_epoch: EpochCallback | None = None,
              init: ConvFilterBank | None = None) -> ConvFilterBank:
    """Train a tied-weight auto-encoding filter bank minimizing the MSRE.

    Trials of unequal length are zero-padded to the longest (fine for
    reconstruction-only training).  Stops early when the training error stops
    improving; the best weights seen are returned.
    """
    config = config or default_pretrain_config()
    store = pad_store_to_longest(store)
    x = store.stack()
    rng = np.random.default_rng(seed)
    if init is not None:
        bank = init.copy()
        bank.activation = activation
    else:
        bank = ConvFilterBank.random(n_filters, width, x.shape[1], rng,
                                     activation=activation, name="cae")
    enc, dec = TimeConv(bank), TiedDeconv(bank)
    tracker = _BestWeights([bank.weights], patience)
    tracker.update(_autoencode_epoch_loss(x, enc, dec, config.batch_size))

    for epoch in range(config.max_epochs):
        perm = rng.permutation(x.shape[0])
        for idx in _batched(x.shape[0], config.batch_size, perm):
            xb = x[idx]
            bank.weights.zero_grad()
            recon = dec.forward(enc.forward(xb, training=True), training=True)
            _, d_recon = _msre_batch(recon, xb)
            enc.backward(dec.backward(d_recon))
            sgd_step([bank.weights], config, epoch)
        epoch_loss = _autoencode_epoch_loss(x, enc, dec, config.batch_size)
        if on_epoch:
            on_epoch(epoch, epoch_loss)
        if tracker.update(epoch_loss):
            break
    tracker.restore()
    return bank


def cae_adapt_individual(global_bank: ConvFilterBank, store: TrialStore,
                         subject: str, config: OptimizerConfig | None = None,
                         seed: int = 0, patience: int = 40,
                         on_epoch: EpochCallback | None = None) -> ConvFilterBank:
    """Fine-tune a copy of the shared bank on one subject's trials only.

    The returned bank's training MSRE on that subject never exceeds the
    shared bank's (the initial weights are kept when no epoch improves)."""
    if subject not in store.subjects:
        raise ValueError(f"unknown subject {subject!r}; store has {store.subjects}")
    sub = TrialStore(t for t in store if t.subject_id == subject)
    return cae_train(sub, global_bank.n_filters, global_bank.width,
                     config=config, activation=global_bank.activation,
                     seed=seed, patience=patience, on_epoch=on_epoch,
                     init=global_bank)


def cae_reconstruct(bank: ConvFilterBank, trial_data: np.ndarray) -> np.ndarray:
    """Encode and decode one trial with the tied bank."""
    code = conv_time_forward(trial_data, bank)
    return apply_activation(
        _deconv_fwd(code[None], bank.weights.value)[0], bank.activation)


def cae_store_msre(bank: ConvFilterBank, store: TrialStore) -> float:
    """Mean per-trial reconstruction MSRE over a store."""
    from .evalstat import msre

    return float(np.mean([msre(t.data, cae_reconstruct(bank, t.data))
                          for t in store]))


def cae_store_mcc(bank: ConvFilterBank, store: TrialStore) -> float:
    from .evalstat import mcc

    return float(np.mean([mcc(t.data, cae_reconstruct(bank, t.data))
                          for t in store]))


# ---------------------------------------------------------------------------
# Cross-trial encoding
# ---------------------------------------------------------------------------

def _train_cross_trial(x: np.ndarray, entries: np.ndarray, bank: ConvFilterBank,
                       config: OptimizerConfig, seed: int, loss: CteLoss,
                       patience: int, on_epoch: EpochCallback | None) -> None:
    """Shared stage-1 loop: reconstruct entry target from entry input with one
    tied bank; early stopping on the running training loss."""
    enc, dec = TimeConv(bank), TiedDeconv(bank)
    loss_fn = _msre_batch if loss is CteLoss.MSRE else _neg_dot_batch
    rng = np.random.default_rng(seed)
    tracker = _BestWeights([bank.weights], patience)
    for epoch in range(config.max_epochs):
        perm = rng.permutation(entries.shape[0])
        total = 0.0
        for idx in _batched(entries.shape[0], config.batch_size, perm):
            xb, tb = x[entries[idx, 0]], x[entries[idx, 1]]
            bank.weights.zero_grad()
            recon = dec.forward(enc.forward(xb, training=True), training=True)
            batch_loss, d_recon = loss_fn(recon, tb)
            enc.backward(dec.backward(d_recon))
            sgd_step([bank.weights], config, epoch)
            total += batch_loss * len(idx)
        epoch_loss = total / entries.shape[0]
        if on_epoch:
            on_epoch(epoch, epoch_loss)
        if tracker.update(epoch_loss):
            break
    tracker.restore()


def cte_train_stage1(store: TrialStore, pairs: TupleIndex, n_filters: int,
                     width: int, config: OptimizerConfig | None = None,
                     seed: int = 0, loss: CteLoss = CteLoss.NEG_DOT,
                     patience: int = 40,
                     on_epoch: EpochCallback | None = None) -> ConvFilterBank:
    """Stage 1: one shared bank trained on within-subject same-class pairs,
    reconstructing the paired trial instead of the input."""
    _check_equal_lengths(store, "cross-trial encoding")
    config = config or default_pretrain_config()
    rng = np.random.default_rng(seed)
    bank = ConvFilterBank.random(n_filters, width, store[0].n_channels, rng,
                                 activation=Activation.TANH, name="cte")
    _train_cross_trial(store.stack(), _entry_array(pairs), bank, config,
                       seed + 1, loss, patience, on_epoch)
    return bank


def cte_subject_banks(stage1_bank: ConvFilterBank, store: TrialStore,
                      pairs: TupleIndex, config: OptimizerConfig | None = None,
                      seed: int = 0, loss: CteLoss = CteLoss.NEG_DOT,
                      patience: int = 40) -> dict[str, ConvFilterBank]:
    """Continue training one copy of the stage-1 bank per subject, on that
    subject's pairs only: the initialization for the stage-2 hydra."""
    config = config or default_pretrain_config()
    x = store.stack()
    entries = _entry_array(pairs)
    subjects_of = np.array([t.subject_id for t in store])
    banks = {}
    for i, subject in enumerate(store.subjects):
        bank = stage1_bank.copy(name=f"cte[{subject}]")
        mask = subjects_of[entries[:, 0]] == subject
        _train_cross_trial(x, entries[mask], bank, config, seed + 101 * i,
                           loss, patience, None)
        banks[subject] = bank
    return banks


@dataclass
class CrossTrialHydra:
    """Stage-2 result: encoder and decoder hydra layers sharing per-subject
    banks (weights tied within each subject)."""

    encoder: HydraTimeConv
    decoder: HydraTiedDeconv

    @property
    def pathways(self) -> dict[str, ConvFilterBank]:
        return self.encoder.pathways

    def subject_weights(self, subject: str) -> np.ndarray:
        return self.pathways[subject].weights.value


def cte_train_stage2(store: TrialStore, cross_pairs: TupleIndex,
                     init_banks: Mapping[str, ConvFilterBank],
                     config: OptimizerConfig | None = None, seed: int = 0,
                     strategy: Strategy = Strategy.MASKED_ALL,
                     patience: int = 40,
                     on_epoch: EpochCallback | None = None) -> CrossTrialHydra:
    """Stage 2: per-subject pathways trained on cross-subject pairs.

    The encoder pathway is selected by the input trial's subject, the decoder
    pathway by the target trial's subject; within a subject both share one
    weight tensor.  Gradients flow only through selected pathways.
    """
    _check_equal_lengths(store, "cross-trial encoding")
    config = config or default_pretrain_config()
    pathways = {s: b.copy(name=f"cte[{s}]") for s, b in init_banks.items()}
    encoder = HydraTimeConv(pathways, strategy)
    decoder = HydraTiedDeconv(pathways, strategy)
    params = [b.weights for b in pathways.values()]

    x = store.stack()
    entries = _entry_array(cross_pairs)
    subjects_of = np.array([t.subject_id for t in store])
    rng = np.random.default_rng(seed)
    tracker = _BestWeights(params, patience)
    for epoch in range(config.max_epochs):
        perm = rng.permutation(entries.shape[0])
        total = 0.0
        for idx in _batched(entries.shape[0], config.batch_size, perm):
            a, b = entries[idx, 0], entries[idx, 1]
            sel_in, sel_out = subjects_of[a], subjects_of[b]
            for p in params:
                p.zero_grad()
            code = encoder.forward(x[a], training=True, selectors=sel_in)
            recon = decoder.forward(code, training=True, selectors=sel_out)
            batch_loss, d_recon = _neg_dot_batch(recon, x[b])
            encoder.backward(decoder.backward(d_recon))
            sgd_step(params, config, epoch)
            total += batch_loss * len(idx)
        epoch_loss = total / entries.shape[0]
        if on_epoch:
            on_epoch(epoch, epoch_loss)
        if tracker.update(epoch_loss):
            break
    tracker.restore()
    return CrossTrialHydra(encoder, decoder)


# ---------------------------------------------------------------------------
# Similarity-constraint encoding
# ---------------------------------------------------------------------------

class SceLoss(enum.Enum):
    SOFTMAX = "softmax"
    HINGE = "hinge"


def sce_forward(bank: ConvFilterBank, trials) -> np.ndarray:
    """Similarity scores of one tuple: ``score[i] = <f(ref), f(trial_i+1)>``
    over flattened encoded features.  The constraint is satisfied iff
    position 0 (the same-class companion) scores strictly highest."""
    if len(trials) < 3:
        raise ValueError(f"similarity tuples need at least 3 trials, got {len(trials)}")
    feats = [conv_time_forward(np.asarray(t), bank).ravel() for t in trials]
    ref = feats[0]
    return np.array([float(ref @ f) for f in feats[1:]], dtype=ref.dtype)


def _sce_batch_scores(bank: ConvFilterBank, enc: TimeConv, x: np.ndarray,
                      entries: np.ndarray, training: bool) -> tuple[np.ndarray, np.ndarray]:
    """Forward one batch of tuples; returns (scores [B, arity-1], feats)."""
    batch, arity = entries.shape
    stacked = x[entries.reshape(-1)]
    f = enc.forward(stacked, training=training)
    feats = f.reshape(batch, arity, -1)
    scores = np.einsum("bd,bid->bi", feats[:, 0], feats[:, 1:])
    return scores, feats


def sce_train(store: TrialStore, tuples: TupleIndex, n_filters: int,
              width: int, config: OptimizerConfig | None = None, seed: int = 0,
              loss: SceLoss = SceLoss.SOFTMAX, patience: int = 40,
              on_epoch: EpochCallback | None = None
              ) -> tuple[ConvFilterBank, float]:
    """Train the shared encoder on similarity tuples; returns the bank and
    the fraction of training tuples whose constraint it satisfies."""
    if tuples.arity < 3:
        raise ValueError("similarity-constraint training needs arity >= 3")
    _check_equal_lengths(store, "similarity-constraint encoding")
    config = config or default_pretrain_config()
    rng = np.random.default_rng(seed)
    bank = ConvFilterBank.random(n_filters, width, store[0].n_channels, rng,
                                 activation=Activation.TANH, name="sce")
    enc = TimeConv(bank)
    x = store.stack()
    entries = _entry_array(tuples)
    tracker = _BestWeights([bank.weights], patience)

    for epoch in range(config.max_epochs):
        perm = rng.permutation(entries.shape[0])
        total = 0.0
        for idx in _batched(entries.shape[0], config.batch_size, perm):
            batch_entries = entries[idx]
            bank.weights.zero_grad()
            scores, feats = _sce_batch_scores(bank, enc, x, batch_entries, True)
            if loss is SceLoss.SOFTMAX:
                batch_loss, d_scores = _softmax_nll_batch(scores, 0)
            else:
                batch_loss, d_scores = _l2svm_batch(
                    scores, np.zeros(len(idx), dtype=np.int64))
            d_feats = np.empty_like(feats)
            d_feats[:, 0] = np.einsum("bi,bid->bd", d_scores, feats[:, 1:])
            d_feats[:, 1:] = d_scores[:, :, None] * feats[:, 0][:, None, :]
            enc.backward(d_feats.reshape(-1, *enc.out_shape(x.shape[2])))
            sgd_step([bank.weights], config, epoch)
            total += batch_loss * len(idx)
        epoch_loss = total / entries.shape[0]
        if on_epoch:
            on_epoch(epoch, epoch_loss)
        if tracker.update(epoch_loss):
            break
    tracker.restore()
    return bank, sce_constraint_accuracy(bank, tuples, store)


def sce_constraint_accuracy(bank: ConvFilterBank, tuples: TupleIndex,
                            store: TrialStore, batch_size: int = 512) -> float:
    """Fraction of tuples whose same-class companion scores strictly highest
    (ties count as violated)."""
    x = store.stack()
    enc = TimeConv(bank)
    entries = _entry_array(tuples)
    satisfied = 0
    for start in range(0, entries.shape[0], batch_size):
        batch = entries[start:start + batch_size]
        scores, _ = _sce_batch_scores(bank, enc, x, batch, False)
        satisfied += int((scores[:, 0] > scores[:, 1:].max(axis=1)).sum())
    return satisfied / entries.shape[0]


# ---------------------------------------------------------------------------
# Filter export
# ---------------------------------------------------------------------------

def export_filters_csv(weights: np.ndarray, path) -> None:
    """One row per (filter, time offset) with one column per channel weight:
    the interchange format for topographic plotting."""
    weights = np.asarray(weights)
    if weights.ndim != 3:
        raise ShapeError(f"expected [filters, width, channels], got {weights.shape}")
    k, w, c = weights.shape
    header = "filter_index,time_offset," + ",".join(f"ch{j:02d}" for j in range(c))
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for fi in range(k):
            for j in range(w):
                row = ",".join(repr(float(v)) for v in weights[fi, j])
                f.write(f"{fi},{j},{row}\n")
