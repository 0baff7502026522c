"""Counting metrics and stratified reporting.

MAE is the mean absolute count error over test images; MSE here follows
the counting-literature convention of a root-mean-square error. Reports
stratify images into low (1-300), middle (301-700) and high (700+)
ground-truth buckets; zero-count images fall outside the published
strata and are kept in a separate "empty" bucket.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

STRATA_BOUNDS = (("low", 1.0, 300.0), ("middle", 301.0, 700.0), ("high", 701.0, math.inf))


@dataclass
class Stratum:
    label: str
    lo: float
    hi: float
    mae: float
    n: int


@dataclass
class EvalReport:
    mae: float
    mse: float
    n: int
    strata: list[Stratum]
    empty: Stratum

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "mse": self.mse,
            "n": self.n,
            "strata": [asdict(s) for s in self.strata],
            "empty": asdict(self.empty),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path) as fh:
            obj = json.load(fh)
        return cls(
            mae=obj["mae"],
            mse=obj["mse"],
            n=obj["n"],
            strata=[Stratum(**s) for s in obj["strata"]],
            empty=Stratum(**obj["empty"]),
        )


def count_from_density(density, clamp_negative: bool = False) -> float:
    """Predicted count: the sum of the density map (optionally clamped at 0)."""
    density = np.asarray(density, dtype=np.float64)
    if not np.isfinite(density).all():
        raise ValueError("density map contains non-finite values")
    total = float(density.sum())
    return max(0.0, total) if clamp_negative else total


def _bucket_mae(errors: np.ndarray) -> float:
    return float(errors.mean()) if errors.size else 0.0


def evaluate(pairs) -> EvalReport:
    """Compute MAE / root-mean-square MSE and per-density-level MAEs.

    ``pairs`` is a sequence of (predicted count, ground-truth count).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate needs at least one (Pr, Gt) pair")
    pr = np.array([p for p, _ in pairs], dtype=np.float64)
    gt = np.array([g for _, g in pairs], dtype=np.float64)
    abs_err = np.abs(pr - gt)
    mae = float(abs_err.mean())
    mse = float(np.sqrt(np.mean((pr - gt) ** 2)))

    # buckets partition gt > 0; fractional GT sums (ROI-clipped) fall into
    # the bucket whose upper bound they do not exceed
    edges = [(label, lo, hi, 0.0 if lo <= 1.0 else lo - 1.0) for label, lo, hi in STRATA_BOUNDS]
    strata = []
    for label, lo, hi, open_lo in edges:
        sel = (gt > open_lo) & (gt <= hi) if math.isfinite(hi) else gt > open_lo
        strata.append(Stratum(label, lo, hi, _bucket_mae(abs_err[sel]), int(sel.sum())))
    empty_sel = gt == 0.0
    empty = Stratum("empty", 0.0, 0.0, _bucket_mae(abs_err[empty_sel]), int(empty_sel.sum()))
    return EvalReport(mae=mae, mse=mse, n=len(pairs), strata=strata, empty=empty)


def write_predictions_csv(path, rows) -> None:
    """Persist per-image predictions as image_id, Pr, Gt."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "Pr", "Gt"])
        for image_id, pr, gt in rows:
            writer.writerow([image_id, repr(float(pr)), repr(float(gt))])


def plot_strata(report: EvalReport, path) -> None:
    """Render the per-density-level MAEs as a bar chart PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [s.label for s in report.strata]
    values = [s.mae for s in report.strata]
    counts = [s.n for s in report.strata]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bars = ax.bar(labels, values, color="#4878a8")
    for bar, n in zip(bars, counts):
        ax.annotate(
            f"n={n}",
            (bar.get_x() + bar.get_width() / 2, bar.get_height()),
            ha="center",
            va="bottom",
            fontsize=8,
        )
    ax.set_ylabel("MAE")
    ax.set_xlabel("ground-truth density level")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
