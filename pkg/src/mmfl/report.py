"""Metric files, seed-aggregated summaries and figures."""

import csv
import json
import math
import os
from collections import defaultdict

import numpy as np
from scipy import stats

from .experiment import MetricRecord

METRICS = ("loss", "test_metric", "gap", "bf_objective", "bound")


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MetricRecord.header())
        for r in records:
            writer.writerow([_fmt(x) for x in r.row()])


def read_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MetricRecord(
                scheme=row["scheme"], seed=int(row["seed"]), model=int(row["model"]),
                round=int(row["round"]), frame=int(row["frame"]),
                **{k: float(row[k]) for k in METRICS}))
    return out


def mean_ci(values, level=0.90):
    """Mean and two-sided Student-t confidence half width over seeds."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    mean = float(v.mean())
    if v.size < 2:
        return mean, float("nan")
    sd = float(v.std(ddof=1))
    if sd == 0:
        return mean, 0.0
    half = stats.t.ppf(0.5 + level / 2, v.size - 1) * sd / math.sqrt(v.size)
    return mean, float(half)


def running_max(values):
    return np.maximum.accumulate(np.asarray(values, dtype=float))


def _series(records, metric, best_so_far=False):
    """{(scheme, model): (rounds, per-seed matrix)} for one metric."""
    by_key = defaultdict(lambda: defaultdict(dict))
    for r in records:
        by_key[(r.scheme, r.model)][r.seed][r.round] = getattr(r, metric)
    out = {}
    for key, seeds in by_key.items():
        rounds = sorted(next(iter(seeds.values())))
        mat = np.array([[seeds[s][t] for t in rounds] for s in sorted(seeds)])
        if best_so_far:
            mat = np.array([running_max(row) for row in mat])
        out[key] = (np.array(rounds), mat)
    return out


def summarize(records, level=0.90, accuracy=False):
    """Final-round mean and confidence half width per scheme, model and metric."""
    summary = {}
    for metric in METRICS:
        best = accuracy and metric == "test_metric"
        for (scheme, model), (rounds, mat) in _series(records, metric, best).items():
            mean, half = mean_ci(mat[:, -1], level)
            entry = summary.setdefault(scheme, {}).setdefault(str(model), {})
            entry[metric] = {"mean": mean, "ci_half_width": half, "seeds": int(mat.shape[0]),
                             "round": int(rounds[-1])}
    return summary


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def emit_metrics(records, path, accuracy=False, extra=None, level=0.90):
    """Write ``metrics.csv`` and ``summary.json`` under directory ``path``.

    Floats are written with ``repr`` so reruns are byte-identical. Missing
    values (NaN) appear as ``nan`` in the CSV and ``null`` in the JSON.
    """
    os.makedirs(path, exist_ok=True)
    csv_path = os.path.join(path, "metrics.csv")
    write_csv(records, csv_path)
    doc = {"confidence_level": level, "final": summarize(records, level, accuracy)}
    if extra:
        doc.update(extra)
    json_path = os.path.join(path, "summary.json")
    with open(json_path, "w") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def plot_metrics(records, path, accuracy=False, level=0.90):
    """One figure per metric: seed mean with a shaded confidence band."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(path, exist_ok=True)
    written = []
    metrics = ["loss", "test_metric"] if accuracy else ["loss", "gap", "bound"]
    labels = {"loss": "global loss", "gap": "squared distance to optimum",
              "test_metric": "best test accuracy so far", "bound": "gap bound"}
    for metric in metrics:
        series = _series(records, metric, accuracy and metric == "test_metric")
        if metric == "bound":
            series = {k: v for k, v in series.items() if np.isfinite(v[1]).any()}
        if not series:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for (scheme, model), (rounds, mat) in sorted(series.items()):
            keep = np.isfinite(mat).all(axis=0)
            if not keep.any():
                continue
            x, m = rounds[keep], mat[:, keep]
            mean = m.mean(axis=0)
            half = np.array([mean_ci(col, level)[1] for col in m.T])
            line, = ax.plot(x, mean, label=f"{scheme} / model {model}")
            if m.shape[0] > 1:
                ax.fill_between(x, mean - half, mean + half, color=line.get_color(), alpha=0.2)
        if metric in ("gap", "bound", "loss") and not accuracy:
            ax.set_yscale("log")
        ax.set_xlabel("round")
        ax.set_ylabel(labels[metric])
        ax.legend(fontsize=7)
        fig.tight_layout()
        out = os.path.join(path, f"{metric}.png")
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written
