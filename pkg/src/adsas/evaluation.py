"""Anomaly-window construction and precision/recall/F1 scoring.

Point labels become windows of configurable half-width; overlapping or
touching windows merge into a section that is re-split into consecutive
windows, so a long anomaly is a run of windows sharing a section id. An
alert anywhere inside a window makes it a true positive, and once a section
is detected every later window in it counts as detected too (an operator
already knows). Alerts landing outside every window are false positives,
with immediately-consecutive strays collapsed into one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelOutOfRangeError


@dataclass(frozen=True)
class AnomalyWindow:
    """A scoring interval [start_time, end_time]; windows born from one
    merged run of labels share a section_id."""

    start_time: float
    end_time: float
    section_id: int

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise ValueError("window must end at or after its start")

    def contains(self, t: float) -> bool:
        return self.start_time <= t <= self.end_time


@dataclass(frozen=True)
class ScoreReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "ScoreReport":
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall,
                   f1=f1_score(precision, recall))


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; zero when both are zero."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def build_windows(
    label_times, half_width: float, extent: tuple[float, float]
) -> list[AnomalyWindow]:
    """Turn point labels into non-overlapping scoring windows.

    Each label spans ``[t - half_width, t + half_width]`` clipped to the
    series extent. Overlapping or adjacent spans merge into one section,
    which is then cut into consecutive windows of ``2 * half_width`` (the
    final slice keeps whatever is left).
    """
    labels = sorted(float(t) for t in label_times)
    lo, hi = extent
    if half_width < 0:
        raise ValueError("half_width must be non-negative")
    for t in labels:
        if t < lo or t > hi:
            raise LabelOutOfRangeError(f"label {t} outside extent [{lo}, {hi}]")
    if not labels:
        return []

    spans: list[list[float]] = []
    for t in labels:
        start, end = max(t - half_width, lo), min(t + half_width, hi)
        if spans and start <= spans[-1][1]:
            spans[-1][1] = max(spans[-1][1], end)
        else:
            spans.append([start, end])

    width = 2.0 * half_width
    windows: list[AnomalyWindow] = []
    for section_id, (start, end) in enumerate(spans):
        if width <= 0:
            windows.append(AnomalyWindow(start, end, section_id))
            continue
        pos = start
        while pos < end or pos == start:
            windows.append(AnomalyWindow(pos, min(pos + width, end), section_id))
            pos += width
    return windows


def score(
    alert_times,
    windows: list[AnomalyWindow],
    fp_collapse_gap: float | None = None,
) -> ScoreReport:
    """Count TP/FP/FN for a set of alerts against scoring windows.

    A window holding at least one alert is one true positive no matter how
    many alerts land in it. Within a section, every window at or after the
    first detected one is a true positive; windows strictly before it are
    false negatives, as are all windows of undetected sections. Alerts
    outside every window are false positives, and runs of outside alerts
    spaced at most ``fp_collapse_gap`` apart collapse to a single false
    positive (pass None to count each one).
    """
    alerts = sorted(float(t) for t in alert_times)
    windows = sorted(windows, key=lambda w: w.start_time)

    outside: list[float] = []
    hit: set[int] = set()
    starts = [w.start_time for w in windows]
    for a in alerts:
        idx = np.searchsorted(starts, a, side="right") - 1
        if idx >= 0 and windows[idx].contains(a):
            hit.add(idx)
        else:
            outside.append(a)

    tp = fn = 0
    sections: dict[int, list[int]] = {}
    for i, w in enumerate(windows):
        sections.setdefault(w.section_id, []).append(i)
    for indices in sections.values():
        detected_at = next((k for k, i in enumerate(indices) if i in hit), None)
        if detected_at is None:
            fn += len(indices)
        else:
            tp += len(indices) - detected_at
            fn += detected_at

    if fp_collapse_gap is None:
        fp = len(outside)
    else:
        fp = 0
        last = None
        for a in outside:
            if last is None or a - last > fp_collapse_gap * (1 + 1e-9):
                fp += 1
            last = a
    return ScoreReport.from_counts(tp, fp, fn)


def default_half_width(interval: float, span: float, min_intervals: int = 3,
                       span_fraction: float = 0.005) -> float:
    """Window half-width: at least a few sampling intervals, scaled to 0.5%
    of the dataset span for long datasets."""
    return max(min_intervals * interval, span_fraction * span)


def total_windows(span: float, half_width: float) -> int:
    """How many windows of 2*half_width tile the dataset span (reporting
    convenience for benchmark tables)."""
    width = 2.0 * half_width
    if width <= 0:
        return 0
    return max(int(span // width), 1)
