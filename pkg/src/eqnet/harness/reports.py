"""CSV report writers. Every file starts with a fixed header row."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..supernet.training import weight_moments

CONVERGENCE_HEADER = ["epoch", "step", "lr", "loss", "task_loss", "wdr_loss", "loss_high", "loss_low",
                      "acc_high", "acc_low"]
MOMENTS_HEADER = ["layer", "n_weights", "mean", "std", "skewness", "kurtosis"]
HISTOGRAM_HEADER = ["layer", "bin_left", "bin_right", "count"]
RANK_HEADER = ["index", "predicted", "measured"]
PARETO_HEADER = ["target_w_bits", "target_a_bits", "tolerance", "w_avg", "a_avg", "predicted_accuracy",
                 "measured_accuracy", "spec"]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


class CsvLog:
    """Append-only CSV file with a declared header."""

    def __init__(self, path, header, fresh=True):
        self.path = Path(path)
        self.header = list(header)
        if fresh or not self.path.exists():
            with open(self.path, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(self.header)
        else:
            with open(self.path, newline="") as f:
                first = next(csv.reader(f), None)
            if first != self.header:
                raise ValueError(f"{path}: existing header does not match")

    def append(self, row: dict):
        with open(self.path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow([_fmt(row[k]) for k in self.header])


def write_rows(path, header, rows):
    log = CsvLog(path, header, fresh=True)
    for r in rows:
        log.append(r)


def read_rows(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def moments_rows(net):
    rows = []
    for i, ((skew, kurt), w) in enumerate(zip(weight_moments(net), net.weight_tensors())):
        d = w.data.ravel()
        rows.append({"layer": i, "n_weights": d.size, "mean": float(d.mean()), "std": float(d.std()),
                     "skewness": skew, "kurtosis": kurt})
    return rows


def histogram_rows(net, bins=30):
    rows = []
    for i, w in enumerate(net.weight_tensors()):
        counts, edges = np.histogram(w.data.ravel(), bins=bins)
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            rows.append({"layer": i, "bin_left": float(lo), "bin_right": float(hi), "count": int(c)})
    return rows
