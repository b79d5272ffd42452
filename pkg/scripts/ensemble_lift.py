"""Ensemble versus its best weak learner on the desk dataset, one line per seed.

    python scripts/ensemble_lift.py --config scripts/configs/desk.yaml --seeds 0 1 2 3 4
"""
import argparse
import tempfile
import time
from dataclasses import replace

import numpy as np

from thzbeam.dataset import load_dataset, split_dataset
from thzbeam.ensemble import train_ensemble
from thzbeam.harness import gen_data, load_config
from thzbeam.neuralnet import ImageSet, balanced_accuracy, fit_input_standardization


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="scripts/configs/desk.yaml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--data", help="existing output directory holding data/tx.bsds")
    args = ap.parse_args()
    cfg = load_config(args.config)
    out = args.data or tempfile.mkdtemp(prefix="thzbeam-lift-")
    if not args.data:
        gen_data(cfg, out)
    ds = load_dataset(f"{out}/data/tx.bsds")
    tr, va = split_dataset(ds, cfg.dataset.train_fraction, seed=cfg.dataset.split_seed)
    trs, vas = ImageSet.from_dataset(tr), ImageSet.from_dataset(va)
    spec = replace(cfg.net, n_classes=ds.n_classes).with_standardization(*fit_input_standardization(trs))
    rows = []
    for seed in args.seeds:
        t = time.time()
        ens = train_ensemble(trs, vas, replace(cfg.ensemble, seed=seed), spec, cfg.weak_train)
        e = balanced_accuracy(ens.predict(vas), vas.labels, ds.n_classes)
        b = max(x["val_balanced_accuracy"] for x in ens.trace if "val_balanced_accuracy" in x)
        rows.append((e, b))
        print(f"seed {seed}: ensemble {e:.4f}, best learner {b:.4f}, weights {ens.weights.tolist()}, "
              f"{time.time() - t:.0f}s", flush=True)
    e, b = np.array(rows).T
    print(f"mean ensemble {e.mean():.4f}, mean best learner {b.mean():.4f}, ensemble ahead on {(e > b).sum()}")


if __name__ == "__main__":
    main()
