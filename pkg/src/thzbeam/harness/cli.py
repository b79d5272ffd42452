"""Command line entry point: `thzbeam <subcommand> [flags]`."""
from __future__ import annotations

import argparse
import math
import sys
import tempfile
import time
from pathlib import Path

from .config import STRATEGIES, ConfigError, config_from_dict, load_config
from .pipeline import (PipelineError, _load_meta, default_out, gen_data, read_csv, run_evaluate, run_train)
from .report import write_report


def _split_list(value):
    if value is None:
        return None
    items = [v.strip().lower() for v in value.split(",") if v.strip()]
    return None if items == ["all"] else items


def _config(args, out: Path, need_data: bool):
    if args.config:
        cfg = load_config(args.config)
    elif need_data:
        cfg = config_from_dict(_load_meta(out)["config"])  # the config gen-data ran with
    else:
        cfg = config_from_dict({"schema_version": 1})
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _strategies(value):
    items = _split_list(value)
    if items:
        bad = [s for s in items if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"--strategy: unknown {bad}; choose from {list(STRATEGIES)}")
    return items


def cmd_gen_data(args):
    out = Path(args.out)
    cfg = _config(args, out, need_data=False)
    gen_data(cfg, out)
    print(f"wrote {out / 'data'}")


def cmd_train(args):
    out = Path(args.out)
    cfg = _config(args, out, need_data=True)
    t = time.time()
    run_train(cfg, out, _strategies(args.strategy), _split_list(args.activation), _split_list(args.optimizer),
              jobs=args.jobs)
    print(f"training finished in {time.time() - t:.1f} s")


def cmd_evaluate(args):
    out = Path(args.out)
    cfg = _config(args, out, need_data=True)
    res = run_evaluate(cfg, out, _strategies(args.strategy), jobs=args.jobs)
    print(f"wrote {res / 'results.csv'}")


def cmd_report(args):
    dirs = args.results or [args.out]
    target = Path(args.report or Path(args.out) / "report.md")
    text = write_report(dirs, target)
    print(text)
    print(f"wrote {target}")


SELFTEST_CONFIG = {
    "schema_version": 1,
    "channel": {"n_tx": 8, "n_rx": 4, "n_clusters": 2, "n_rays": 2},
    "selection": {"n_rf_tx": 2, "n_rf_rx": 2},
    "dataset": {"n_realizations": 16, "n_eval_realizations": 4, "image_side": 8},
    "net": {"stem_width": 4, "inception_blocks": [[2, 2, 1, 1]]},
    "train": {"max_epochs": 1, "minibatch": 16, "validation_frequency": 2},
    "ensemble": {"m1": 2},
    "baselines": {"knn_k": 3, "svm_epochs": 2, "mlp_widths": [8, 4]},
    "sweeps": {"snr_db": [0, 10, 20], "n_streams": [1, 2, 3]},
}


def cmd_selftest(args):
    """Tiny end-to-end pipeline run with sanity checks on its outputs."""
    cfg = config_from_dict(SELFTEST_CONFIG)
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(args.out) if args.out_given else Path(tmp)
        quiet = None
        gen_data(cfg, out, log=quiet)
        run_train(cfg, out, jobs=args.jobs, log=quiet)
        res = run_evaluate(cfg, out, jobs=args.jobs, log=quiet)
        rows = read_csv(res / "results.csv")
        bad = [r for r in rows if not (math.isfinite(float(r["mean_se"])) and float(r["mean_se"]) >= 0)]
        if bad:
            raise PipelineError(f"selftest: invalid SE rows {bad[:3]}")
        missing = {s for s in cfg.strategies} - {r["strategy"] for r in rows}
        if missing:
            raise PipelineError(f"selftest: no results for {sorted(missing)}")
        cells = read_csv(res / "accuracy_matrix.csv")
        if len({(r["activation"], r["optimizer"]) for r in cells}) != 6:
            raise PipelineError("selftest: accuracy matrix is not 2 x 3")
        write_report([out], out / "report.md")
    print(f"selftest ok: {len(rows)} result rows, {len(cfg.strategies)} strategies")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thzbeam", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, jobs=False):
        sp.add_argument("--config", help="experiment YAML file")
        sp.add_argument("--out", default=None, help="output directory (default: $THZBEAM_OUT or ./thzbeam-out)")
        if seed:
            sp.add_argument("--seed", type=int, help="run a single training seed instead of the configured list")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    sp = sub.add_parser("gen-data", help="simulate channels and write labeled datasets")
    common(sp, seed=False)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="train learned strategies")
    common(sp, jobs=True)
    sp.add_argument("--strategy", help=f"comma list from {','.join(STRATEGIES)} (default: all configured)")
    sp.add_argument("--activation", help="comma list or 'all' (cnn only)")
    sp.add_argument("--optimizer", help="comma list of sgdm, adam, rmsprop or 'all' (cnn only)")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("evaluate", help="SE sweeps and accuracy tables on fresh realizations")
    common(sp, jobs=True)
    sp.add_argument("--strategy", help="comma list of strategies to evaluate")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("report", help="markdown summary over results directories")
    sp.add_argument("results", nargs="*", help="output or results directories (default: --out)")
    sp.add_argument("--out", default=None)
    sp.add_argument("--report", help="markdown path (default: <out>/report.md)")
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("selftest", help="tiny end-to-end run")
    sp.add_argument("--out", default=None, help="keep the run here instead of a temporary directory")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.out_given = args.out is not None
    if args.out is None:
        args.out = str(default_out())
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (PipelineError, FileNotFoundError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
