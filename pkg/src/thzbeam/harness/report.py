"""Markdown summary aggregated over one or more results directories."""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .pipeline import ACCURACY_COLUMNS, MATRIX_COLUMNS, RESULT_COLUMNS, RESULTS_SCHEMA, PipelineError, read_csv

_TABLES = {"results.csv": RESULT_COLUMNS, "accuracy.csv": ACCURACY_COLUMNS, "accuracy_matrix.csv": MATRIX_COLUMNS}


def load_results(dirs) -> dict:
    """Concatenate the tables of every directory after checking their schema."""
    if not dirs:
        raise PipelineError("report needs at least one results directory")
    merged = {name: [] for name in _TABLES}
    for d in dirs:
        d = Path(d)
        if (d / "results" / "results.csv").exists():
            d = d / "results"
        meta_path = d / "meta.json"
        if not (d / "results.csv").exists() or not meta_path.exists():
            raise PipelineError(f"{d}: no results table; run evaluate first")
        meta = json.loads(meta_path.read_text())
        if meta.get("schema") != RESULTS_SCHEMA:
            raise PipelineError(f"{d}: results schema {meta.get('schema')!r}, expected {RESULTS_SCHEMA}")
        for name, cols in _TABLES.items():
            path = d / name
            if not path.exists():
                continue
            header = path.read_text().splitlines()[0].split(",")
            if tuple(header) != cols:
                raise PipelineError(f"{path}: columns {header} do not match {list(cols)}")
            merged[name] += read_csv(path)
    return merged


def _pm(values, digits=4):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return "n/a"
    return f"{v.mean():.{digits}f} ± {v.std():.{digits}f}"


def _table(header, rows):
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return out


def accuracy_matrix(rows, metric="balanced_accuracy", side="tx") -> dict:
    """{(activation, optimizer): [per-seed values]} for one side."""
    cells = defaultdict(list)
    for r in rows:
        if r["side"] == side:
            cells[(r["activation"], r["optimizer"])].append(float(r[metric]))
    return dict(cells)


def _per_seed(rows, key, metric, side="tx"):
    out = defaultdict(dict)
    for r in rows:
        if r["side"] == side:
            out[r[key]][int(r["seed"])] = float(r[metric])
    return out


def _activation_trend(matrix_rows):
    """Per seed, mean over optimizers of each activation's tx balanced accuracy."""
    by = defaultdict(lambda: defaultdict(list))
    for r in matrix_rows:
        if r["side"] == "tx":
            by[r["activation"]][int(r["seed"])].append(float(r["balanced_accuracy"]))
    return {a: {s: float(np.mean(v)) for s, v in seeds.items()} for a, seeds in by.items()}


def _compare(a: dict, b: dict):
    seeds = sorted(set(a) & set(b))
    diffs = [a[s] - b[s] for s in seeds]
    return seeds, diffs


def render(tables) -> str:
    res, acc, mat = tables["results.csv"], tables["accuracy.csv"], tables["accuracy_matrix.csv"]
    lines = ["# Beam selection experiment report", ""]

    lines += ["## Activation x optimizer accuracy (tx side, validation)", ""]
    for metric in ("balanced_accuracy", "accuracy"):
        cells = accuracy_matrix(mat, metric)
        if not cells:
            lines += ["No accuracy matrix cells were trained.", ""]
            break
        acts = list(dict.fromkeys(a for a, _ in cells))
        opts = list(dict.fromkeys(o for _, o in cells))
        lines += [f"{metric.replace('_', ' ')}, mean ± std over seeds:", ""]
        lines += _table(["activation"] + [o.upper() for o in opts],
                        [[a] + [_pm(cells.get((a, o), [])) for o in opts] for a in acts])
        lines.append("")

    lines += ["## Strategy accuracy (validation)", ""]
    strat = defaultdict(lambda: defaultdict(list))
    for r in acc:
        strat[r["strategy"]][r["side"]].append((float(r["accuracy"]), float(r["balanced_accuracy"])))
    rows = []
    for s, sides in strat.items():
        for side in ("tx", "rx"):
            if side in sides:
                v = np.array(sides[side])
                rows.append([s, side, _pm(v[:, 0]), _pm(v[:, 1]), len(v)])
    lines += _table(["strategy", "side", "accuracy", "balanced accuracy", "runs"], rows) + [""]

    for var, title in (("snr_db", "Spectral efficiency vs SNR (dB)"), ("n_streams", "Spectral efficiency vs N_s")):
        cells = defaultdict(lambda: defaultdict(list))
        agree = defaultdict(list)
        for r in res:
            if r["sweep_variable"] == var:
                cells[r["strategy"]][float(r["value"])].append(float(r["mean_se"]))
                if r["accuracy"]:
                    agree[r["strategy"]].append(float(r["accuracy"]))
        if not cells:
            continue
        xs = sorted({x for c in cells.values() for x in c})
        lines += [f"## {title}", "", "Mean SE in bit/s/Hz, mean ± std over seeds.", ""]
        lines += _table(["strategy"] + [f"{x:g}" for x in xs] + ["label agreement"],
                        [[s] + [_pm(c[x], 3) if x in c else "" for x in xs]
                         + [_pm(agree[s], 3) if agree[s] else "n/a"] for s, c in cells.items()])
        lines.append("")

    lines += ["## Trends", ""]
    trend = _activation_trend(mat)
    if "swish" in trend and "relu" in trend:
        seeds, d = _compare(trend["swish"], trend["relu"])
        wins = sum(x > 0 for x in d)
        lines.append(f"- Swish vs ReLU (tx balanced accuracy averaged over optimizers): mean difference "
                     f"{np.mean(d):+.4f} over {len(seeds)} seed(s); Swish ahead on {wins} of {len(seeds)}.")
    per = _per_seed(acc, "strategy", "balanced_accuracy")
    for other in ("mlp", "knn", "svm"):
        if "cnn" in per and other in per:
            seeds, d = _compare(per["cnn"], per[other])
            if seeds:
                wins = sum(x >= 0 for x in d)
                lines.append(f"- CNN vs {other.upper()} (tx balanced accuracy): mean difference {np.mean(d):+.4f}; "
                             f"CNN at least as accurate on {wins} of {len(seeds)} seed(s).")
    if "ensemble" in per and "cnn" in per:
        seeds, d = _compare(per["ensemble"], per["cnn"])
        if seeds:
            lines.append(f"- Ensemble vs single CNN (tx balanced accuracy): mean difference {np.mean(d):+.4f} "
                         f"over {len(seeds)} seed(s).")
    lines.append("")
    return "\n".join(lines)


def write_report(dirs, path) -> str:
    text = render(load_results(dirs))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)
    return text
