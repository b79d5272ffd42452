"""gen-data, train, evaluate and report as plain functions over an output directory.

Layout under `out`:
    data/{tx,rx}.bsds (+ .json sidecars), data/meta.json
    models/seed<s>/<name>-<side>.{bsnn,zip,csv,json}
    results/results.csv, accuracy.csv, accuracy_matrix.csv, meta.json, *.svg
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..baselines import (KnnModel, LinearSvmModel, knn_fit, load_baseline, mlp_train,
                         save_baseline, svm_train)
from ..beam_select import (BeamSelection, DegenerateChannelError, greedy_energy_select, oracle_select,
                           selection_se, zf_benchmark)
from ..channel import generate_realizations
from ..dataset import Normalizer, build_datasets, load_dataset, save_dataset, split_dataset
from ..ensemble import load_ensemble, save_ensemble, train_ensemble
from ..neuralnet import (ClassifierModel, ImageSet, TrainConfig, balanced_accuracy, fit_input_standardization,
                         load_model, predict_logits, read_checkpoint, save_model, train)
from .config import LEARNED, ExperimentConfig
from .strategies import assign_beams, class_scores

SIDES = ("tx", "rx")
RESULT_COLUMNS = ("strategy", "sweep_variable", "value", "mean_se", "std_se", "accuracy", "n_realizations", "seed")
ACCURACY_COLUMNS = ("strategy", "seed", "side", "accuracy", "balanced_accuracy")
MATRIX_COLUMNS = ("activation", "optimizer", "seed", "side", "accuracy", "balanced_accuracy")
RESULTS_SCHEMA = 1


class PipelineError(RuntimeError):
    """A stage was run without its inputs, or the inputs do not fit together."""


def _say(log, msg):
    if log:
        log(msg)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.12g}"
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# --- gen-data ----------------------------------------------------------------

def gen_data(cfg: ExperimentConfig, out, log=print) -> dict:
    """Simulate, label with the oracle, normalize and write both datasets."""
    data_dir = Path(out) / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    d = cfg.dataset
    reals = generate_realizations(cfg.channel, d.n_realizations, seed=d.seed)
    sets, norm, _ = build_datasets(reals, cfg.selection, snr_db=d.label_snr_db, with_gmm=d.with_gmm)
    prov = {"dataset_seed": d.seed, "label_snr_db": d.label_snr_db, "n_realizations": d.n_realizations}
    summary = {}
    for side in SIDES:
        ds = sets[side]
        save_dataset(ds, data_dir / f"{side}.bsds", prov)
        hist = np.bincount(ds.labels, minlength=ds.n_classes).tolist()
        summary[side] = {"samples": len(ds), "features": ds.feature_count, "label_histogram": hist}
        _say(log, f"{side}: {len(ds)} samples, {ds.feature_count} features, labels {hist}")
    _write_json(data_dir / "meta.json", {"normalizer": norm.to_dict(), "config": cfg.to_dict(),
                                         "summary": summary})
    return summary


def _load_side(out, side):
    path = Path(out) / "data" / f"{side}.bsds"
    if not path.exists():
        raise PipelineError(f"dataset {path} not found; run gen-data first")
    return load_dataset(path)


def _load_meta(out):
    path = Path(out) / "data" / "meta.json"
    if not path.exists():
        raise PipelineError(f"{path} not found; run gen-data first")
    return json.loads(path.read_text())


# --- train -------------------------------------------------------------------

def model_dir(out, seed) -> Path:
    return Path(out) / "models" / f"seed{seed}"


def cnn_name(activation, optimizer) -> str:
    return f"cnn-{activation}-{optimizer}"


def _with_seed(tc: TrainConfig, seed: int) -> TrainConfig:
    return replace(tc, seed=seed)


def _splits(cfg, out, side):
    ds = _load_side(out, side)
    tr, va = split_dataset(ds, cfg.dataset.train_fraction, seed=cfg.dataset.split_seed)
    return ds, tr, va


def _image_sets(cfg, tr, va):
    d = cfg.dataset
    return (ImageSet.from_dataset(tr, d.image_side, d.embedding), ImageSet.from_dataset(va, d.image_side, d.embedding))


def _net_spec(cfg, n_classes, activation, trs):
    spec = replace(cfg.net, n_classes=n_classes, input_side=cfg.dataset.image_side, activation=activation)
    mean, std = fit_input_standardization(trs)
    return spec.with_standardization(mean, std)


def _metrics(pred, labels, n_classes):
    return {"accuracy": float(np.mean(pred == labels)),
            "balanced_accuracy": balanced_accuracy(pred, labels, n_classes)}


def train_cnn(cfg, out, seed, activation, optimizer, log=print) -> dict:
    mdir = model_dir(out, seed)
    mdir.mkdir(parents=True, exist_ok=True)
    name = cnn_name(activation, optimizer)
    result = {}
    for side in SIDES:
        ds, tr, va = _splits(cfg, out, side)
        trs, vas = _image_sets(cfg, tr, va)
        spec = _net_spec(cfg, ds.n_classes, activation, trs)
        tc = replace(cfg.train, seed=seed, optimizer=optimizer)
        model = ClassifierModel(spec, seed=seed)
        _say(log, f"seed {seed} {name} {side}: {len(trs)} train / {len(vas)} val samples")
        train(model, trs, vas, tc)
        model.log.write_csv(mdir / f"{name}-{side}.csv")
        save_model(model, mdir / f"{name}-{side}.bsnn", {"feature_count": ds.feature_count, "side": side})
        m = _metrics(np.argmax(predict_logits(model, vas), axis=1), vas.labels, ds.n_classes)
        m.update(strategy="cnn", activation=str(activation), optimizer=str(optimizer), seed=seed, side=side,
                 train_config=tc.to_dict())
        _write_json(mdir / f"{name}-{side}.json", m)
        _say(log, f"  val accuracy {m['accuracy']:.4f}, balanced {m['balanced_accuracy']:.4f}")
        result[side] = m
    return result


def train_ensemble_strategy(cfg, out, seed, log=print) -> dict:
    mdir = model_dir(out, seed)
    mdir.mkdir(parents=True, exist_ok=True)
    result = {}
    for side in SIDES:
        ds, tr, va = _splits(cfg, out, side)
        trs, vas = _image_sets(cfg, tr, va)
        spec = _net_spec(cfg, ds.n_classes, str(cfg.net.activation), trs)
        ecfg = replace(cfg.ensemble, seed=cfg.ensemble.seed + seed)
        _say(log, f"seed {seed} ensemble {side}: {ecfg.m1} learners")
        ens = train_ensemble(trs, vas, ecfg, spec, _with_seed(cfg.weak_train, seed),
                             log=lambda e: _say(log, f"  learner {e['learner']}: {e['status']} weight {e['weight']}"))
        save_ensemble(ens, mdir / f"ensemble-{side}.zip")
        m = _metrics(ens.predict(vas), vas.labels, ds.n_classes)
        best = max((t for t in ens.trace if "val_balanced_accuracy" in t), key=lambda t: t["val_balanced_accuracy"])
        m.update(strategy="ensemble", seed=seed, side=side, weights=ens.weights.tolist(),
                 best_learner_balanced_accuracy=best["val_balanced_accuracy"],
                 best_learner_accuracy=best["val_accuracy"])
        _write_json(mdir / f"ensemble-{side}.json", m)
        _say(log, f"  val accuracy {m['accuracy']:.4f}, balanced {m['balanced_accuracy']:.4f}")
        result[side] = m
    return result


def train_baseline(cfg, out, seed, strategy, log=print) -> dict:
    mdir = model_dir(out, seed)
    mdir.mkdir(parents=True, exist_ok=True)
    b = cfg.baselines
    result = {}
    for side in SIDES:
        ds, tr, va = _splits(cfg, out, side)
        k = ds.n_classes
        if strategy == "knn":
            model = knn_fit(tr.features, tr.labels, b.knn_k, k)
        elif strategy == "svm":
            model = svm_train(tr.features, tr.labels, k, lam=b.svm_lambda, lr=b.svm_lr, epochs=b.svm_epochs,
                              minibatch=cfg.train.minibatch, seed=seed, class_weighting=cfg.train.class_weighting)
        elif strategy == "mlp":
            model = mlp_train(tr.features, tr.labels, k, _with_seed(cfg.train, seed), b.mlp_widths, seed=seed)
        else:
            raise PipelineError(f"{strategy!r} is not a baseline strategy")
        save_baseline(model, mdir / f"{strategy}-{side}.bsnn")
        m = _metrics(np.argmax(class_scores(model, va.features), axis=1), va.labels, k)
        m.update(strategy=strategy, seed=seed, side=side)
        _write_json(mdir / f"{strategy}-{side}.json", m)
        _say(log, f"seed {seed} {strategy} {side}: val accuracy {m['accuracy']:.4f}, "
                  f"balanced {m['balanced_accuracy']:.4f}")
        result[side] = m
    return result


def train_jobs(cfg: ExperimentConfig, strategies=None, activations=None, optimizers=None) -> list[tuple]:
    """Expand the requested training work into (kind, seed, *args) jobs.

    The cnn strategy trains every activation x optimizer cell requested; the
    cell matching the configured activation and optimizer is the one used
    by `evaluate`.
    """
    strategies = [s for s in (strategies or cfg.strategies) if s in LEARNED]
    acts = list(activations or cfg.activations)
    opts = list(optimizers or cfg.optimizers)
    jobs = []
    for seed in cfg.seeds:
        for s in strategies:
            if s == "cnn":
                cells = [(a, o) for a in acts for o in opts]
                default = (str(cfg.net.activation), cfg.train.optimizer.value)
                if activations is None and optimizers is None and default not in cells:
                    cells.append(default)
                jobs += [("cnn", seed, a, o) for a, o in cells]
            else:
                jobs.append((s, seed))
    return jobs


def _run_job(args):
    cfg, out, job, quiet = args
    log = None if quiet else print
    kind, seed = job[0], job[1]
    if kind == "cnn":
        return train_cnn(cfg, out, seed, job[2], job[3], log)
    if kind == "ensemble":
        return train_ensemble_strategy(cfg, out, seed, log)
    return train_baseline(cfg, out, seed, kind, log)


def run_train(cfg: ExperimentConfig, out, strategies=None, activations=None, optimizers=None, jobs=1,
              log=print) -> list:
    for side in SIDES:
        _load_side(out, side)
    work = train_jobs(cfg, strategies, activations, optimizers)
    if not work:
        raise PipelineError("nothing to train: no learned strategy selected")
    return _map(_run_job, [(cfg, str(out), j, log is None) for j in work], jobs)


def _map(fn, items, jobs):
    # results come back in submission order, so parallel runs write identical files
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# --- evaluate ----------------------------------------------------------------

def _zf(h_b, snr_db, n_streams):
    try:
        return zf_benchmark(h_b, snr_db, n_streams)
    except DegenerateChannelError:
        s = np.linalg.svd(h_b, compute_uv=False)[:n_streams]
        return float(np.log2(1 + 10 ** (snr_db / 10) / n_streams * s ** 2).sum())


def _fixed_ses(h_b, sel, snrs, ns):
    return [selection_se(h_b, sel, s, ns) for s in snrs]


def _reference_chunk(args):
    """ZF, oracle and greedy SE over both sweeps for a block of realizations."""
    cfg, hbs, ns_grid = args
    sw, selcfg = cfg.sweeps, cfg.selection
    out = []
    for h_b in hbs:
        r = {"zf": [_zf(h_b, s, selcfg.n_streams) for s in sw.snr_db],
             "oracle": [oracle_select(h_b, selcfg, snr_db=s)[1] for s in sw.snr_db],
             "greedy": _fixed_ses(h_b, greedy_energy_select(h_b, selcfg), sw.snr_db, selcfg.n_streams),
             "ns_zf": [], "ns_oracle": [], "ns_greedy": []}
        for ns in ns_grid:
            sc = replace(selcfg, n_rf_tx=ns, n_rf_rx=ns, n_streams=None)
            r["ns_zf"].append(_zf(h_b, sw.n_streams_snr_db, ns))
            r["ns_oracle"].append(oracle_select(h_b, sc, snr_db=sw.n_streams_snr_db)[1])
            r["ns_greedy"].append(selection_se(h_b, greedy_energy_select(h_b, sc), sw.n_streams_snr_db, ns))
        out.append(r)
    return out


def ns_grid_for(cfg: ExperimentConfig) -> tuple[list, list]:
    """(usable, skipped) stream counts: RF chains per side cannot exceed that side's beam count."""
    limit = min(cfg.channel.n_rx, cfg.channel.n_tx)
    grid = list(cfg.sweeps.n_streams)
    return [n for n in grid if n <= limit], [n for n in grid if n > limit]


def _model_paths(out, seed, strategy, cfg):
    mdir = model_dir(out, seed)
    if strategy == "cnn":
        name = cnn_name(str(cfg.net.activation), cfg.train.optimizer.value)
        return {s: mdir / f"{name}-{s}.bsnn" for s in SIDES}
    if strategy == "ensemble":
        return {s: mdir / f"ensemble-{s}.zip" for s in SIDES}
    return {s: mdir / f"{strategy}-{s}.bsnn" for s in SIDES}


def load_strategy_model(path, strategy, ds_side):
    """Load a checkpoint and check it against the evaluation features and classes."""
    if not Path(path).exists():
        raise PipelineError(f"checkpoint {path} not found; run train --strategy {strategy} first")
    if strategy == "cnn":
        header, _ = read_checkpoint(path)
        model = load_model(path)
        n_feat, n_cls = header.get("feature_count"), model.spec.n_classes
    elif strategy == "ensemble":
        model = load_ensemble(path)
        n_feat, n_cls = None, model.n_classes
    else:
        model = load_baseline(path)
        if isinstance(model, KnnModel):
            n_feat = model.features.shape[1]
        elif isinstance(model, LinearSvmModel):
            n_feat = model.weights.shape[0]
        else:
            n_feat = model.n_features
        n_cls = model.n_classes
    f, k = ds_side.feature_count, ds_side.n_classes
    if n_feat is not None and n_feat != f:
        raise PipelineError(f"{path}: checkpoint expects {n_feat} features, evaluation data has {f}")
    if n_cls != k:
        raise PipelineError(f"{path}: checkpoint has {n_cls} classes, evaluation data has {k}")
    return model


def _group(ds):
    """Row indices of each realization, in realization order."""
    order = np.argsort(ds.realization_ids, kind="stable")
    ids, starts = np.unique(ds.realization_ids[order], return_index=True)
    return [order[a:b] for a, b in zip(starts, list(starts[1:]) + [len(order)])]


def _label_agreement(sel, eval_sets, oracle_sels):
    """Fraction of candidate beams whose RF-chain class matches the oracle label."""
    hits = total = 0
    for side in SIDES:
        ds = eval_sets[side]
        for rows, s, o in zip(_group(ds), sel, oracle_sels):
            chosen = sorted(s.tx_beams if side == "tx" else s.rx_beams)
            beams = ds.beams[rows]
            pred = np.array([chosen.index(b) + 1 if b in chosen else 0 for b in beams])
            hits += int(np.sum(pred == ds.labels[rows]))
            total += len(rows)
    return hits / total


def _stats(values):
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())


def run_evaluate(cfg: ExperimentConfig, out, strategies=None, jobs=1, log=print) -> Path:
    """SE sweeps over fresh realizations plus accuracy tables; returns the results directory."""
    meta = _load_meta(out)
    norm = Normalizer.from_dict(meta["normalizer"])
    strategies = list(strategies or cfg.strategies)
    d, sw = cfg.dataset, cfg.sweeps
    res_dir = Path(out) / "results"
    res_dir.mkdir(parents=True, exist_ok=True)

    reals = generate_realizations(cfg.channel, d.n_eval_realizations, seed=d.eval_seed)
    eval_sets, _, oracle_sels = build_datasets(reals, cfg.selection, snr_db=d.label_snr_db, normalizer=norm,
                                               with_gmm=d.with_gmm)
    train_side = {s: _load_side(out, s) for s in SIDES}
    for s in SIDES:
        if train_side[s].feature_count != eval_sets[s].feature_count:
            raise PipelineError(f"{s}: training data has {train_side[s].feature_count} features, "
                                f"evaluation data has {eval_sets[s].feature_count}")
    hbs = [r.beamspace for r in reals]
    ns_grid, skipped = ns_grid_for(cfg)
    if skipped:
        _say(log, f"n_streams {skipped} exceed the {min(cfg.channel.n_rx, cfg.channel.n_tx)} beams per side; skipped")

    _say(log, f"evaluating reference strategies on {len(reals)} realizations")
    blocks = [(cfg, hbs[i:i + 25], ns_grid) for i in range(0, len(hbs), 25)]
    ref = [r for chunk in _map(_reference_chunk, blocks, jobs) for r in chunk]
    ref_sels = {"oracle": oracle_sels,
                "greedy": [greedy_energy_select(h, cfg.selection) for h in hbs]}

    rows, acc_rows = [], []
    n = len(reals)
    for seed in cfg.seeds:
        for strat in strategies:
            if strat in ("zf", "oracle", "greedy"):
                acc = float("nan") if strat == "zf" else _label_agreement(ref_sels[strat], eval_sets, oracle_sels)
                per = np.array([r[strat] for r in ref])
                for j, snr in enumerate(sw.snr_db):
                    rows.append((strat, "snr_db", snr, *_stats(per[:, j]), acc, n, seed))
                per = np.array([r["ns_" + strat] for r in ref]).reshape(n, len(ns_grid))
                for j, ns in enumerate(ns_grid):
                    rows.append((strat, "n_streams", ns, *_stats(per[:, j]), acc, n, seed))
                continue
            paths = _model_paths(out, seed, strat, cfg)
            models = {s: load_strategy_model(paths[s], strat, eval_sets[s]) for s in SIDES}
            sels = _learned_selections(cfg, models, eval_sets, reals)
            acc = _label_agreement(sels, eval_sets, oracle_sels)
            for snr in sw.snr_db:
                vals = [selection_se(h, s, snr, cfg.selection.n_streams) for h, s in zip(hbs, sels)]
                rows.append((strat, "snr_db", snr, *_stats(vals), acc, n, seed))
            for side in SIDES:
                mpath = paths[side].with_suffix(".json")
                if mpath.exists():
                    m = json.loads(mpath.read_text())
                    acc_rows.append((strat, seed, side, m["accuracy"], m["balanced_accuracy"]))
            _say(log, f"seed {seed} {strat}: beam label agreement {acc:.4f}")

    matrix_rows = []
    for seed in cfg.seeds:
        for a in cfg.activations:
            for o in cfg.optimizers:
                for side in SIDES:
                    p = model_dir(out, seed) / f"{cnn_name(a, o)}-{side}.json"
                    if p.exists():
                        m = json.loads(p.read_text())
                        matrix_rows.append((str(a), o, seed, side, m["accuracy"], m["balanced_accuracy"]))

    _write_csv(res_dir / "results.csv", RESULT_COLUMNS, rows)
    _write_csv(res_dir / "accuracy.csv", ACCURACY_COLUMNS, acc_rows)
    _write_csv(res_dir / "accuracy_matrix.csv", MATRIX_COLUMNS, matrix_rows)
    _write_json(res_dir / "meta.json", {"schema": RESULTS_SCHEMA, "columns": list(RESULT_COLUMNS),
                                        "n_streams_skipped": skipped, "eval_seed": d.eval_seed,
                                        "n_eval_realizations": n, "seeds": list(cfg.seeds)})
    from .plots import write_plots

    write_plots(res_dir)
    return res_dir


def _learned_selections(cfg, models, eval_sets, reals):
    d, sc = cfg.dataset, cfg.selection
    scores = {s: class_scores(models[s], eval_sets[s].features, d.image_side, d.embedding) for s in SIDES}
    groups = {s: _group(eval_sets[s]) for s in SIDES}
    sels = []
    for i, r in enumerate(reals):
        tx_rows, rx_rows = groups["tx"][i], groups["rx"][i]
        tx = assign_beams(scores["tx"][tx_rows], eval_sets["tx"].beams[tx_rows], sc.n_rf_tx)
        rx = assign_beams(scores["rx"][rx_rows], eval_sets["rx"].beams[rx_rows], sc.n_rf_rx)
        sels.append(BeamSelection(tx, rx, r.config.n_tx, r.config.n_rx))
    return sels


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def default_out() -> Path:
    return Path(os.environ.get("THZBEAM_OUT", "thzbeam-out"))
