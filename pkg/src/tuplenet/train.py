"""Supervised training harness: classifier construction, per-fold training
with best-validation snapshots, leave-one-subject-out cross-validation,
fold-model aggregation (parameter averaging or majority vote), hyper-parameter
sweeps, and model checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (Activation, ConvFilterBank, DenseOutput, Dropout, Flatten,
                   Model, TimeConv, _l2svm_batch)
from .data import SplitPlan, TrialStore
from .optim import OptimizerConfig, TrainingError, sgd_step
from .schemes import HydraTimeConv, Strategy

__all__ = [
    "OptimizerConfig", "TrainingError", "sgd_step", "ConvSpec",
    "ClassifierSpec", "build_classifier", "FoldData", "FoldReport",
    "train_supervised", "crossval_run", "AggregatedModel", "aggregate",
    "SweepEntry", "sweep", "save_model", "load_model", "save_bank",
    "load_pretrained",
]


# ---------------------------------------------------------------------------
# Classifier construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    filters: int
    width: int
    stride: int = 1


@dataclass(frozen=True)
class ClassifierSpec:
    """Two convolutional layers plus a hinge-trained affine output layer."""

    n_channels: int
    n_samples: int
    layer1: ConvSpec
    layer2: ConvSpec
    n_classes: int = 12


def build_classifier(spec: ClassifierSpec, rng: np.random.Generator,
                     pretrained: ConvFilterBank | Mapping[str, ConvFilterBank] | None = None,
                     dropout_rate: float = 0.0, dropout_seed: int = 0) -> Model:
    """Assemble the classifier stack.

    With ``pretrained`` (a single bank, or per-subject banks for selector
    routing) the first layer is frozen; otherwise it is trained like the rest.
    """
    if pretrained is None:
        bank1 = ConvFilterBank.random(spec.layer1.filters, spec.layer1.width,
                                      spec.n_channels, rng, name="layer1")
        layer1 = TimeConv(bank1, stride=spec.layer1.stride)
        k1, m1 = layer1.out_shape(spec.n_samples)
    elif isinstance(pretrained, ConvFilterBank):
        layer1 = TimeConv(pretrained.copy(name="layer1"),
                          stride=spec.layer1.stride, frozen=True)
        k1, m1 = layer1.out_shape(spec.n_samples)
    else:
        pathways = {s: b.copy(name=f"layer1[{s}]")
                    for s, b in pretrained.items()}
        layer1 = HydraTimeConv(pathways, Strategy.MASKED_ALL,
                               stride=spec.layer1.stride, frozen=True)
        k1, m1 = layer1.out_shape(spec.n_samples)

    bank2 = ConvFilterBank.random(spec.layer2.filters, spec.layer2.width, k1,
                                  rng, name="layer2")
    layer2 = TimeConv(bank2, stride=spec.layer2.stride)
    k2, m2 = layer2.out_shape(m1)
    output = DenseOutput.random(k2 * m2, spec.n_classes, rng)
    return Model([
        layer1,
        Dropout(dropout_rate, seed=dropout_seed),
        layer2,
        Dropout(dropout_rate, seed=dropout_seed + 1),
        Flatten(),
        output,
    ])


# ---------------------------------------------------------------------------
# Per-fold supervised training
# ---------------------------------------------------------------------------

@dataclass
class FoldData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    subj_train: np.ndarray | None = None
    subj_val: np.ndarray | None = None


@dataclass
class FoldReport:
    fold_id: str
    best_model: Model
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_accuracy(self) -> float:
        if self.best_epoch < 0:
            return float("nan")
        return self.history[self.best_epoch]["val_acc"]


def _evaluate(model: Model, x: np.ndarray, y: np.ndarray,
              selectors=None) -> tuple[float, float]:
    scores = model.forward(x, training=False, selectors=selectors)
    loss, _ = _l2svm_batch(scores, y)
    acc = float((np.argmax(scores, axis=1) == y).mean())
    return loss, acc


def train_supervised(fold: FoldData, model: Model, config: OptimizerConfig,
                     seed: int = 0, fold_id: str = "") -> FoldReport:
    """Mini-batch SGD for up to ``config.max_epochs`` epochs, keeping a
    snapshot of the model at the lowest validation error."""
    rng = np.random.default_rng(seed)
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dropout):
            layer.reseed(int(rng.integers(2 ** 63)) + i)

    report = FoldReport(fold_id, model.copy())
    best_err = np.inf
    n = fold.x_train.shape[0]
    for epoch in range(config.max_epochs):
        perm = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            sel = None if fold.subj_train is None else fold.subj_train[idx]
            model.zero_grad()
            scores = model.forward(fold.x_train[idx], training=True,
                                   selectors=sel)
            loss, d_scores = _l2svm_batch(scores, fold.y_train[idx])
            model.backward(d_scores)
            sgd_step(model.trainable_params(), config, epoch)
            total_loss += loss * len(idx)
            correct += int((np.argmax(scores, axis=1) == fold.y_train[idx]).sum())
        val_loss, val_acc = _evaluate(model, fold.x_val, fold.y_val,
                                      fold.subj_val)
        report.history.append({
            "epoch": epoch,
            "train_loss": total_loss / n,
            "train_acc": correct / n,
            "val_loss": val_loss,
            "val_acc": val_acc,
        })
        if 1.0 - val_acc < best_err:
            best_err = 1.0 - val_acc
            report.best_model = model.copy()
            report.best_epoch = epoch
    return report


def fold_data(store: TrialStore, train_idx: np.ndarray, val_idx: np.ndarray,
              with_selectors: bool = False) -> FoldData:
    y = store.class_indices()
    subjects = np.array([t.subject_id for t in store])
    return FoldData(
        x_train=store.stack(train_idx), y_train=y[train_idx],
        x_val=store.stack(val_idx), y_val=y[val_idx],
        subj_train=subjects[train_idx] if with_selectors else None,
        subj_val=subjects[val_idx] if with_selectors else None,
    )


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def crossval_run(store: TrialStore, split: SplitPlan, spec: ClassifierSpec,
                 config: OptimizerConfig, seed: int = 0,
                 pretrained=None, jobs: int = 1) -> list[FoldReport]:
    """Train one model per leave-one-subject-out fold.  Folds are seeded
    independently, so reports are reproducible regardless of scheduling."""
    needs_selectors = isinstance(pretrained, Mapping)
    args = []
    for i, (train_idx, val_idx) in enumerate(split.folds):
        args.append((fold_data(store, train_idx, val_idx, needs_selectors),
                     spec, config, _fold_seed(seed, i), split.fold_subjects[i],
                     pretrained))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_fold, args))
    return [_run_fold(a) for a in args]


def _run_fold(arg) -> FoldReport:
    fold, spec, config, fold_seed, subject, pretrained = arg
    model = build_classifier(spec, np.random.default_rng(fold_seed),
                             pretrained=pretrained,
                             dropout_rate=config.dropout_rate,
                             dropout_seed=fold_seed + 1)
    return train_supervised(fold, model, config, seed=fold_seed + 2,
                            fold_id=subject)


# ---------------------------------------------------------------------------
# Fold-model aggregation
# ---------------------------------------------------------------------------

def _check_same_structure(models: Sequence[Model]) -> None:
    specs = [[layer.spec() for layer in m.layers] for m in models]
    if any(s != specs[0] for s in specs[1:]):
        raise ValueError("fold models are structurally different; cannot aggregate")
    shapes = [[p.shape for p in m.params()] for m in models]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ValueError("fold models have mismatched parameter shapes")


class AggregatedModel:
    """Either one parameter-averaged model or a majority-vote ensemble of the
    fold models (ties break to the lowest class index)."""

    def __init__(self, mode: str, members: Sequence[Model]):
        if mode not in ("avg", "maj"):
            raise ValueError(f"aggregation mode must be 'avg' or 'maj', got {mode!r}")
        _check_same_structure(members)
        self.mode = mode
        self.members = list(members)
        self.model: Model | None = None
        if mode == "avg":
            agg = members[0].copy()
            for p, *rest in zip(agg.params(), *(m.params() for m in members)):
                stacked = np.stack([r.value for r in rest])
                p.value[...] = stacked.mean(axis=0, dtype=np.float64)
            self.model = agg

    @property
    def n_classes(self) -> int:
        out = self.members[0].layers[-1]
        return out.weights.shape[1]

    def predict(self, x, selectors=None) -> np.ndarray:
        if self.mode == "avg":
            return self.model.predict(x, selectors=selectors)
        votes = np.stack([m.predict(x, selectors=selectors)
                          for m in self.members])
        return np.array([np.bincount(votes[:, i], minlength=self.n_classes).argmax()
                         for i in range(votes.shape[1])])

    def scores(self, x, selectors=None) -> np.ndarray:
        """Class scores: the averaged model's scores, or the mean of member
        scores for the voting ensemble."""
        if self.mode == "avg":
            return self.model.scores(x, selectors=selectors)
        return np.mean([m.scores(x, selectors=selectors)
                        for m in self.members], axis=0)

    def predict_binary(self, x, class_a: int, class_b: int,
                       selectors=None) -> np.ndarray:
        """Predictions restricted to two classes (argmax over their scores);
        the voting ensemble votes over member-restricted predictions."""
        cols = [class_a, class_b]
        if self.mode == "avg":
            sub = self.model.scores(x, selectors=selectors)[:, cols]
            return np.array(cols)[np.argmax(sub, axis=1)]
        votes = np.stack([
            np.array(cols)[np.argmax(m.scores(x, selectors=selectors)[:, cols], axis=1)]
            for m in self.members])
        out = []
        for i in range(votes.shape[1]):
            counts = np.bincount(votes[:, i], minlength=self.n_classes)
            out.append(counts.argmax())
        return np.array(out)


def aggregate(reports: Sequence[FoldReport], mode: str) -> AggregatedModel:
    return AggregatedModel(mode, [r.best_model for r in reports])


# ---------------------------------------------------------------------------
# Hyper-parameter sweep (grid or random sampler)
# ---------------------------------------------------------------------------

@dataclass
class SweepEntry:
    config: dict
    median_val_accuracy: float
    fold_accuracies: list[float]


def sweep(candidates, evaluate: Callable[[dict], Sequence[float]],
          budget: int | None = None,
          rng: np.random.Generator | None = None) -> list[SweepEntry]:
    """Evaluate configurations and rank them by median cross-validation
    accuracy (descending).  ``candidates`` is a finite iterable of config
    dicts, or a callable sampler ``rng -> dict`` used ``budget`` times."""
    if callable(candidates):
        if budget is None:
            raise ValueError("a random sampler needs an evaluation budget")
        rng = rng or np.random.default_rng(0)
        configs = [candidates(rng) for _ in range(budget)]
    else:
        configs = list(candidates)
        if budget is not None:
            configs = configs[:budget]
    if not configs:
        raise ValueError("empty sweep grid")
    entries = []
    for cfg in configs:
        accs = [float(a) for a in evaluate(cfg)]
        entries.append(SweepEntry(cfg, float(median(accs)), accs))
    return sorted(entries, key=lambda e: -e.median_val_accuracy)


# ---------------------------------------------------------------------------
# Checkpoints: model.json (layer specs) + params.bin (float32 LE tensors in
# declaration order)
# ---------------------------------------------------------------------------

def _layer_params_for_io(layer) -> list[np.ndarray]:
    if isinstance(layer, TimeConv):
        return [layer.bank.weights.value]
    if isinstance(layer, HydraTimeConv):
        return [layer.pathways[s].weights.value for s in layer.pathways]
    if isinstance(layer, DenseOutput):
        return [layer.weights.value, layer.biases.value]
    return []


def save_model(model: Model, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    layer_specs = [layer.spec() for layer in model.layers]
    with open(path / "model.json", "w", encoding="utf-8") as f:
        json.dump({"layers": layer_specs}, f, indent=1)
    with open(path / "params.bin", "wb") as f:
        for layer in model.layers:
            for arr in _layer_params_for_io(layer):
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _ParamReader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        end = self.offset + 4 * count
        if end > len(self.blob):
            raise ValueError("params.bin is shorter than model.json declares")
        arr = np.frombuffer(self.blob[self.offset:end], dtype="<f4").reshape(shape)
        self.offset = end
        return arr.copy()


def load_model(path) -> Model:
    path = Path(path)
    with open(path / "model.json", encoding="utf-8") as f:
        meta = json.load(f)
    reader = _ParamReader((path / "params.bin").read_bytes())
    layers = []
    for spec in meta["layers"]:
        kind = spec["type"]
        if kind == "conv":
            w = reader.take((spec["filters"], spec["width"], spec["channels"]))
            bank = ConvFilterBank(w, Activation(spec["activation"]),
                                  name=spec.get("name", "bank"))
            layers.append(TimeConv(bank, stride=spec["stride"],
                                   frozen=spec["frozen"]))
        elif kind == "hydra_conv":
            pathways = {}
            for s in spec["selectors"]:
                w = reader.take((spec["filters"], spec["width"], spec["channels"]))
                pathways[s] = ConvFilterBank(w, Activation(spec["activation"]),
                                             name=f"layer[{s}]")
            layers.append(HydraTimeConv(pathways, Strategy.MASKED_ALL,
                                        stride=spec["stride"],
                                        frozen=spec["frozen"]))
        elif kind == "dropout":
            layers.append(Dropout(spec["rate"]))
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "output":
            w = reader.take((spec["features"], spec["classes"]))
            b = reader.take((spec["classes"],))
            layers.append(DenseOutput(w, b, name=spec.get("name", "output")))
        else:
            raise ValueError(f"unknown layer type {kind!r} in checkpoint")
    return Model(layers)


def save_bank(bank_or_pathways, path) -> None:
    """Store a pre-trained filter bank (or per-subject pathway map) as a
    single-layer model checkpoint."""
    if isinstance(bank_or_pathways, ConvFilterBank):
        layer = TimeConv(bank_or_pathways, frozen=True)
    else:
        layer = HydraTimeConv(dict(bank_or_pathways), frozen=True)
    save_model(Model([layer]), path)


def load_pretrained(path):
    """Load a bank checkpoint: returns a ``ConvFilterBank`` or a per-subject
    ``dict`` of banks, as saved."""
    model = load_model(path)
    layer = model.layers[0]
    if isinstance(layer, HydraTimeConv):
        return layer.pathways
    return layer.bank
