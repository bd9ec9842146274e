"""Per-channel histograms and trial statistics."""

from __future__ import annotations

import csv
import os
import statistics
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import round_half_away

CHANNELS = ("R", "G", "B")
RAW_HEADER = ["attack", "trial", "accuracy"]
SUMMARY_HEADER = ["attack", "mean", "std", "min", "max", "drop_percent"]


@dataclass(frozen=True)
class ChannelHistogram:
    bins: np.ndarray  # (3, 256) int64
    total: int  # pixels per channel

    def channel(self, name: str) -> np.ndarray:
        return self.bins[CHANNELS.index(name)]


def histogram(image: np.ndarray) -> ChannelHistogram:
    """256-bin count per channel of a storage-domain ``(3, H, W)`` image."""
    img = round_half_away(np.asarray(image, dtype=np.float64))
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"image must have shape (3, H, W), got {img.shape}")
    if img.size and (img.min() < 0 or img.max() > 255):
        raise ValueError(f"intensity out of [0, 255]: min {img.min()}, max {img.max()}")
    flat = img.reshape(3, -1).astype(np.int64)
    bins = np.stack([np.bincount(ch, minlength=256) for ch in flat])
    return ChannelHistogram(bins, flat.shape[1])


def write_histogram_csv(hist: ChannelHistogram, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "bin", "count"])
        for name, counts in zip(CHANNELS, hist.bins):
            for k, n in enumerate(counts):
                w.writerow([name, k, int(n)])


@dataclass(frozen=True)
class TrialReport:
    attack_name: str
    accuracies: tuple[float, ...]
    mean: float
    std: float  # population standard deviation (divisor N)
    min: float
    max: float
    baseline_accuracy: float
    drop_percent: float


def aggregate(trial_accuracies, baseline: float, attack_name: str = "attack") -> TrialReport:
    accs = tuple(float(a) for a in trial_accuracies)
    if not accs:
        raise ValueError("no trial accuracies to aggregate")
    mean = statistics.fmean(accs)
    std = statistics.pstdev(accs)
    drop = 100.0 * (baseline - mean) / baseline if baseline else float("nan")
    # fmean can land a rounding step outside [min, max] for near-constant data
    mean = min(max(mean, min(accs)), max(accs))
    return TrialReport(attack_name, accs, mean, std, min(accs), max(accs), float(baseline), drop)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def emit_csv(reports: list[TrialReport], path: str | os.PathLike) -> None:
    """Raw ``attack,trial,accuracy`` rows, a blank line, then the summary block."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_HEADER)
        for rep in reports:
            for t, acc in enumerate(rep.accuracies):
                w.writerow([rep.attack_name, t, _fmt(acc)])
        fh.write("\n")
        w.writerow(SUMMARY_HEADER)
        for rep in reports:
            w.writerow([rep.attack_name, *map(_fmt, (rep.mean, rep.std, rep.min, rep.max, rep.drop_percent))])


def parse_csv(path: str | os.PathLike) -> tuple[list[dict], list[dict]]:
    """Read back a file written by :func:`emit_csv`."""
    text = Path(path).read_text(encoding="utf-8")
    raw_part, _, summary_part = text.partition("\n\n")
    raw = list(csv.DictReader(raw_part.splitlines()))
    summary = list(csv.DictReader(summary_part.splitlines()))
    if not raw_part.startswith(",".join(RAW_HEADER)) or not summary_part.startswith(",".join(SUMMARY_HEADER)):
        raise ValueError(f"{path}: not a trial report CSV")
    for row in raw:
        row["trial"] = int(row["trial"])
        row["accuracy"] = float(row["accuracy"])
    for row in summary:
        for key in SUMMARY_HEADER[1:]:
            row[key] = float(row[key])
    return raw, summary
