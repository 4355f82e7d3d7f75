"""Command-line entry point.

Subcommands: ``synth``, ``import-csv``, ``pretrain``, ``train``, ``eval``,
``significance``, ``sweep``, ``export-filters``.  Every command is
deterministic given its seed and configuration; the environment variable
``TUPLENET_SEED`` overrides any configured seed.  Commands that produce
artifacts write them into an append-only run directory (timestamp plus
config hash) unless ``--out`` names one explicitly, and always drop the
fully-resolved configuration next to their outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import data as _data
from . import evalstat, schemes, synth, train, tuples
from .config import ConfigError, ExperimentConfig, load_config, resolved_toml

SEED_ENV = "TUPLENET_SEED"


def _nonneg_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _unit_float(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {text}")
    return value


def _resolve_seed(flag_seed: int | None, config_seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        return int(env)
    if flag_seed is not None:
        return flag_seed
    return config_seed


def _run_dir(out: str | None, tag: str, resolved: str) -> Path:
    if out is not None:
        path = Path(out)
    else:
        digest = hashlib.sha1(resolved.encode()).hexdigest()[:8]
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("runs") / f"{tag}-{stamp}-{digest}"
    path.mkdir(parents=True, exist_ok=True)
    (path / "resolved.toml").write_text(resolved, encoding="utf-8")
    return path


def _load_dataset(cfg: ExperimentConfig, seed: int,
                  store_path: str | None = None) -> _data.TrialStore:
    section = cfg.section("dataset")
    if store_path:
        store = _data.load_store(store_path)
    elif section.get("path"):
        store = _data.load_store(section["path"])
    elif section.get("synth"):
        store = synth.synth_generate(
            seed, n_subjects=section["subjects"], n_classes=section["classes"],
            channels=section["channels"], samples=section["samples"],
            snr=section["snr"], n_blocks=section["blocks"])
    else:
        raise ConfigError("[dataset] needs either 'path' or 'synth = true'")
    if section.get("normalize"):
        store = _data.normalize_store(store)
    if section.get("crop_samples"):
        store = store.map(lambda t: _data.crop_trial(t, section["crop_samples"]))
    return store


def _training_partition(store: _data.TrialStore, partition: str) -> _data.TrialStore:
    if partition == "all":
        return store
    split = _data.make_split(store)
    return _data.TrialStore(store[i] for i in split.train_pool)


def _optimizer(section: dict, epochs: int | None = None) -> train.OptimizerConfig:
    return train.OptimizerConfig(
        learning_rate=section["learning_rate"], momentum=section["momentum"],
        decay_factor=section["decay"], l1_coeff=section["l1"],
        batch_size=section["batch_size"],
        max_epochs=epochs if epochs is not None else section["epochs"],
        dropout_rate=section.get("dropout", 0.0))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    seed = _resolve_seed(args.seed, 0)
    store = synth.synth_generate(seed, n_subjects=args.subjects,
                                 n_classes=args.classes, channels=args.channels,
                                 samples=args.samples, snr=args.snr,
                                 n_blocks=args.blocks)
    _data.save_store(store, args.out)
    print(f"wrote {len(store)} trials "
          f"({args.subjects} subjects x {args.classes} classes x {args.blocks} "
          f"blocks) to {args.out}")
    return 0


def cmd_import_csv(args) -> int:
    store = _data.import_csv(args.src, args.rate)
    if args.normalize:
        store = _data.normalize_store(store)
    _data.save_store(store, args.out)
    print(f"imported {len(store)} trials to {args.out}")
    return 0


def _pretrain_cae(store, section, config, seed, out: Path) -> dict:
    activation = schemes.Activation(section["activation"])
    bank = schemes.cae_train(store, section["filters"], section["width"],
                             config=config, activation=activation, seed=seed,
                             patience=section["patience"])
    train.save_bank(bank, out / "global")
    schemes.export_filters_csv(bank.weights.value, out / "filters_global.csv")
    adapted = {}
    for subject in store.subjects:
        adapted[subject] = schemes.cae_adapt_individual(
            bank, store, subject, config=config, seed=seed + 1,
            patience=section["patience"])
        schemes.export_filters_csv(adapted[subject].weights.value,
                                   out / f"filters_{subject}.csv")
    train.save_bank(adapted, out / "individual")
    metrics = {
        "msre": schemes.cae_store_msre(bank, store),
        "mcc": schemes.cae_store_mcc(bank, store),
        "msre_individual": {
            s: schemes.cae_store_msre(
                adapted[s], _data.TrialStore(t for t in store if t.subject_id == s))
            for s in store.subjects},
    }
    return metrics


def _pretrain_cte(store, section, config, seed, out: Path) -> dict:
    loss = schemes.CteLoss(section.get("loss") or "neg_dot")
    pairs = tuples.make_pairs(store, tuples.Scope.WITHIN_SUBJECT)
    bank = schemes.cte_train_stage1(store, pairs, section["filters"],
                                    section["width"], config=config, seed=seed,
                                    loss=loss, patience=section["patience"])
    train.save_bank(bank, out / "stage1")
    schemes.export_filters_csv(bank.weights.value, out / "filters_global.csv")
    metrics = {"msre": schemes.cae_store_msre(bank, store),
               "mcc": schemes.cae_store_mcc(bank, store)}
    if section["stage2"]:
        stage2_epochs = section.get("stage2_epochs") or config.max_epochs
        stage2_config = train.OptimizerConfig(
            learning_rate=config.learning_rate, momentum=config.momentum,
            decay_factor=config.decay_factor, l1_coeff=config.l1_coeff,
            batch_size=config.batch_size, max_epochs=stage2_epochs)
        banks = schemes.cte_subject_banks(bank, store, pairs,
                                          config=stage2_config, seed=seed + 1,
                                          loss=loss,
                                          patience=section["patience"])
        cross = tuples.make_pairs(store, tuples.Scope.CROSS_SUBJECT)
        hydra = schemes.cte_train_stage2(store, cross, banks,
                                         config=stage2_config, seed=seed + 2,
                                         patience=section["patience"])
        train.save_bank(hydra.pathways, out / "stage2")
        for subject, pathway in hydra.pathways.items():
            schemes.export_filters_csv(pathway.weights.value,
                                       out / f"filters_{subject}.csv")
        metrics["msre_individual"] = {
            s: schemes.cae_store_msre(
                b, _data.TrialStore(t for t in store if t.subject_id == s))
            for s, b in hydra.pathways.items()}
    return metrics


def _pretrain_sce(store, section, config, seed, out: Path) -> dict:
    loss = schemes.SceLoss(section.get("loss") or "softmax")
    index = tuples.make_tuples(store, section["arity"],
                               tuples.Scope(section["scope"]))
    bank, accuracy = schemes.sce_train(store, index, section["filters"],
                                       section["width"], config=config,
                                       seed=seed, loss=loss,
                                       patience=section["patience"])
    train.save_bank(bank, out / "encoder")
    schemes.export_filters_csv(bank.weights.value, out / "filters_global.csv")
    return {"constraint_accuracy": accuracy, "n_tuples": len(index)}


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    if args.scheme:
        cfg.pretrain["scheme"] = args.scheme
    seed = _resolve_seed(args.seed, cfg.seed)
    cfg.seed = seed
    out = _run_dir(args.out, "pretrain", resolved_toml(cfg))
    section = cfg.section("pretrain")
    store = _training_partition(_load_dataset(cfg, seed, args.store),
                                section["partition"])
    config = _optimizer(section)
    runner = {"cae": _pretrain_cae, "cte": _pretrain_cte,
              "sce": _pretrain_sce}[section["scheme"]]
    metrics = runner(store, section, config, seed, out)
    with open(out / "metrics.json", "w", encoding="utf-8") as f:
        json.dump(metrics, f, indent=1)
    print(f"pretrained scheme {section['scheme']!r}: "
          + ", ".join(f"{k}={v}" for k, v in metrics.items()
                      if not isinstance(v, dict)))
    print(f"outputs in {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args.seed, cfg.seed)
    cfg.seed = seed
    out = _run_dir(args.out, "train", resolved_toml(cfg))
    store = _load_dataset(cfg, seed, args.store)
    split = _data.make_split(store)
    section = cfg.section("train")

    pretrained = None
    if args.pretrained:
        pretrained = train.load_pretrained(args.pretrained)
    if isinstance(pretrained, schemes.ConvFilterBank):
        layer1 = train.ConvSpec(pretrained.n_filters, pretrained.width)
    elif pretrained is not None:
        bank = next(iter(pretrained.values()))
        layer1 = train.ConvSpec(bank.n_filters, bank.width)
    else:
        layer1 = train.ConvSpec(section["layer1_filters"], section["layer1_width"])
    spec = train.ClassifierSpec(
        n_channels=store[0].n_channels, n_samples=store[0].n_samples,
        layer1=layer1,
        layer2=train.ConvSpec(section["layer2_filters"], section["layer2_width"],
                              section["layer2_stride"]),
        n_classes=store.n_classes)
    config = _optimizer(section)

    reports = train.crossval_run(store, split, spec, config, seed=seed,
                                 pretrained=pretrained, jobs=args.jobs)
    for report in reports:
        train.save_model(report.best_model, out / "folds" / report.fold_id)
    avg = train.aggregate(reports, "avg")
    maj = train.aggregate(reports, "maj")
    train.save_model(avg.model, out / "avg")

    x_test = store.stack(split.test)
    y_test = store.class_indices()[split.test]
    sel_test = (np.array([store[i].subject_id for i in split.test])
                if isinstance(pretrained, dict) else None)
    acc = {mode: float((agg.predict(x_test, selectors=sel_test) == y_test).mean())
           for mode, agg in (("avg", avg), ("maj", maj))}

    lines = [f"{len(split.folds)} folds "
             f"(train {len(split.folds[0][0])} / validation {len(split.folds[0][1])} "
             f"trials each), test block of {len(split.test)} trials", ""]
    for report, (train_idx, val_idx) in zip(reports, split.folds):
        lines.append(
            f"fold {report.fold_id}: train {len(train_idx)}, "
            f"validation {len(val_idx)}, best epoch {report.best_epoch}, "
            f"best validation accuracy {report.best_val_accuracy:.4f}")
    lines.append("")
    chance = 1.0 / store.n_classes
    for mode in ("avg", "maj"):
        k = int(round(acc[mode] * len(split.test)))
        p = evalstat.binomial_p(len(split.test), k, chance)
        lines.append(f"test accuracy ({mode}): {acc[mode]:.4f} "
                     f"(binomial p vs chance {chance:.4f}: {p:.3g})")
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump({
            "folds": [{"fold_id": r.fold_id, "best_epoch": r.best_epoch,
                       "best_val_accuracy": r.best_val_accuracy,
                       "history": r.history} for r in reports],
            "test_accuracy": acc,
        }, f, indent=1)
    print("\n".join(lines))
    print(f"outputs in {out}")
    return 0


def _load_aggregated(path: Path, mode: str) -> train.AggregatedModel:
    if mode == "avg":
        target = path / "avg" if (path / "avg").is_dir() else path
        return train.AggregatedModel("avg", [train.load_model(target)])
    folds = sorted((path / "folds").iterdir()) if (path / "folds").is_dir() else [path]
    return train.AggregatedModel("maj", [train.load_model(p) for p in folds])


def cmd_eval(args) -> int:
    store = _data.load_store(args.test)
    model = _load_aggregated(Path(args.model), args.mode)
    out = Path(args.out) if args.out else Path(args.model) / f"eval-{args.mode}"
    out.mkdir(parents=True, exist_ok=True)

    x = store.stack()
    y = store.class_indices()
    needs_sel = any(layer.get("type") == "hydra_conv"
                    for layer in (l.spec() for l in model.members[0].layers))
    sel = np.array([t.subject_id for t in store]) if needs_sel else None
    predictions = model.predict(x, selectors=sel)
    matrix = evalstat.confusion(predictions, y, store.n_classes,
                                labels=store.class_labels)
    matrix.to_csv(out / "confusion.csv")

    chance = 1.0 / store.n_classes
    p = evalstat.binomial_p(matrix.total, matrix.n_correct, chance)
    lines = [f"test trials: {matrix.total}",
             f"accuracy: {matrix.accuracy:.4f}",
             f"binomial p vs chance {chance:.4f}: {p:.3g}"]
    if args.baseline_acc is not None:
        z, pz = evalstat.two_proportion_z(matrix.accuracy, matrix.total,
                                          args.baseline_acc,
                                          args.baseline_n or matrix.total)
        lines.append(f"z-test vs baseline accuracy {args.baseline_acc:.4f}: "
                     f"z={z:.3f}, two-sided p={pz:.3g}")

    with open(out / "binary_confusion.csv", "w", encoding="utf-8") as f:
        f.write("class_a,class_b,n,correct,accuracy,p_value,"
                "aa,ab,ba,bb\n")
        for a, b in itertools.combinations(range(store.n_classes), 2):
            mask = (y == a) | (y == b)
            pred_ab = model.predict_binary(x[mask], a, b,
                                           selectors=None if sel is None else sel[mask])
            true_ab = y[mask]
            counts = np.zeros((2, 2), dtype=int)
            np.add.at(counts, ((true_ab == b).astype(int),
                               (pred_ab == b).astype(int)), 1)
            n = int(mask.sum())
            k = int(np.trace(counts))
            p_ab = evalstat.binomial_p(n, k, 0.5)
            f.write(f"{store.class_labels[a]},{store.class_labels[b]},{n},{k},"
                    f"{k / n:.4f},{p_ab:.6g},{counts[0, 0]},{counts[0, 1]},"
                    f"{counts[1, 0]},{counts[1, 1]}\n")

    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    print(f"outputs in {out}")
    return 0


def cmd_significance(args) -> int:
    p = evalstat.binomial_p(args.n, args.k, args.p0)
    print(f"P(X >= {args.k} | n={args.n}, p0={args.p0}) = {p:.6g}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args.seed, cfg.seed)
    cfg.seed = seed
    out = _run_dir(args.out, "sweep", resolved_toml(cfg))
    store = _load_dataset(cfg, seed, args.store)
    split = _data.make_split(store)
    base = cfg.section("train")
    sweep_section = cfg.section("sweep")
    grid = sweep_section.get("grid") or {}
    unknown = set(grid) - set(base)
    if unknown:
        raise ConfigError(f"[sweep.grid] keys not in [train]: {sorted(unknown)}")

    keys = sorted(grid)
    combos = [dict(zip(keys, values))
              for values in itertools.product(*(grid[k] for k in keys))]
    if not combos:
        combos = [{}]
    budget = sweep_section.get("budget")
    if budget:
        rng = np.random.default_rng(seed)
        combos = [combos[int(i)] for i in rng.integers(len(combos), size=budget)]

    test_acc: dict[int, dict[str, float]] = {}
    x_test = store.stack(split.test)
    y_test = store.class_indices()[split.test]

    def evaluate(overrides: dict) -> list[float]:
        section = dict(base)
        section.update(overrides)
        spec = train.ClassifierSpec(
            n_channels=store[0].n_channels, n_samples=store[0].n_samples,
            layer1=train.ConvSpec(section["layer1_filters"], section["layer1_width"]),
            layer2=train.ConvSpec(section["layer2_filters"],
                                  section["layer2_width"],
                                  section["layer2_stride"]),
            n_classes=store.n_classes)
        reports = train.crossval_run(store, split, spec, _optimizer(section),
                                     seed=seed, jobs=args.jobs)
        accs = [r.best_val_accuracy for r in reports]
        test_acc[id(overrides)] = {
            mode: float((train.aggregate(reports, mode).predict(x_test) == y_test).mean())
            for mode in ("avg", "maj")}
        return accs

    entries = train.sweep(combos, evaluate)
    columns = keys or ["(defaults)"]
    with open(out / "sweep.csv", "w", encoding="utf-8") as f:
        f.write(",".join(columns)
                + ",median_val_accuracy,test_accuracy_avg,test_accuracy_maj\n")
        for entry in entries:
            values = [repr(entry.config[k]) for k in keys] if keys else ["defaults"]
            extra = test_acc[id(entry.config)]
            f.write(",".join(values) + f",{entry.median_val_accuracy:.4f},"
                    f"{extra['avg']:.4f},{extra['maj']:.4f}\n")
    best = entries[0]
    print(f"evaluated {len(entries)} configuration(s); best median validation "
          f"accuracy {best.median_val_accuracy:.4f} with {best.config or 'defaults'}")
    print(f"outputs in {out}")
    return 0


def cmd_export_filters(args) -> int:
    loaded = train.load_pretrained(args.checkpoint)
    out = Path(args.out)
    if isinstance(loaded, dict):
        out.parent.mkdir(parents=True, exist_ok=True)
        for subject, bank in loaded.items():
            target = out.with_name(f"{out.stem}_{subject}{out.suffix or '.csv'}")
            schemes.export_filters_csv(bank.weights.value, target)
            print(f"wrote {target}")
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        schemes.export_filters_csv(loaded.weights.value, out)
        print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tuplenet",
        description="Feature learning for multi-channel time series.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the planted-channel benchmark")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--snr", type=_nonneg_float, default=2.0)
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=9)
    p.add_argument("--classes", type=int, default=12)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--blocks", type=int, default=5)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("import-csv", help="build a trial store from CSV files")
    p.add_argument("--src", required=True)
    p.add_argument("--rate", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true")
    p.set_defaults(fn=cmd_import_csv)

    p = sub.add_parser("pretrain", help="run a pre-training scheme")
    p.add_argument("--config", required=True)
    p.add_argument("--scheme", choices=["cae", "cte", "sce"])
    p.add_argument("--store", help="trial store path (overrides [dataset])")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="supervised cross-validated training")
    p.add_argument("--config", required=True)
    p.add_argument("--pretrained", help="bank checkpoint to freeze as layer 1")
    p.add_argument("--store")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate an aggregated model on a test store")
    p.add_argument("--model", required=True, help="train run directory or checkpoint")
    p.add_argument("--mode", choices=["avg", "maj"], default="avg")
    p.add_argument("--test", required=True, help="test trial store")
    p.add_argument("--out")
    p.add_argument("--baseline-acc", type=float, default=None)
    p.add_argument("--baseline-n", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("significance", help="exact binomial tail probability")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--p0", type=_unit_float, required=True)
    p.set_defaults(fn=cmd_significance)

    p = sub.add_parser("sweep", help="hyper-parameter sweep over [sweep.grid]")
    p.add_argument("--config", required=True)
    p.add_argument("--store")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("export-filters", help="export a bank checkpoint as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_filters)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, _data.StoreError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
