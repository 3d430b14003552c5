"""Segment-based event metrics (F-score, error rate) and clip-level scene F.

A segment is one feature frame unless ``segment_frames`` > 1, in which case
activity is OR-reduced over consecutive blocks of frames before counting.
Counts from several clips combine by addition (micro averaging).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricCounts:
    tp: int
    fp: int
    fn: int
    fp_k: np.ndarray
    fn_k: np.ndarray
    n_k: np.ndarray

    def __add__(self, other: "MetricCounts") -> "MetricCounts":
        return MetricCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            np.concatenate([self.fp_k, other.fp_k]),
            np.concatenate([self.fn_k, other.fn_k]),
            np.concatenate([self.n_k, other.n_k]),
        )

    @classmethod
    def empty(cls) -> "MetricCounts":
        z = np.zeros(0, dtype=np.int64)
        return cls(0, 0, 0, z, z.copy(), z.copy())


def _check_roll(a, name):
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} roll must be 2-D (events x frames)")
    if a.size and not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} roll must be binary")
    return a.astype(bool)


def segment_roll(roll, segment_frames: int):
    """OR-reduce a roll over blocks of ``segment_frames`` frames (tail padded)."""
    roll = np.asarray(roll, dtype=bool)
    if segment_frames < 1:
        raise ValueError("segment_frames must be >= 1")
    if segment_frames == 1:
        return roll
    M, T = roll.shape
    n_seg = -(-T // segment_frames)
    padded = np.zeros((M, n_seg * segment_frames), dtype=bool)
    padded[:, :T] = roll
    return padded.reshape(M, n_seg, segment_frames).any(axis=2)


def frame_counts(ref, pred, segment_frames: int = 1) -> MetricCounts:
    ref = _check_roll(ref, "reference")
    pred = _check_roll(pred, "predicted")
    if ref.shape != pred.shape:
        raise ValueError(f"roll shapes differ: {ref.shape} vs {pred.shape}")
    ref = segment_roll(ref, segment_frames)
    pred = segment_roll(pred, segment_frames)
    tp_cells = ref & pred
    fp_k = (pred & ~ref).sum(axis=0).astype(np.int64)
    fn_k = (ref & ~pred).sum(axis=0).astype(np.int64)
    n_k = ref.sum(axis=0).astype(np.int64)
    return MetricCounts(int(tp_cells.sum()), int(fp_k.sum()), int(fn_k.sum()), fp_k, fn_k, n_k)


def _ratio(num, den):
    return num / den if den else 0.0


def precision_recall_f(c: MetricCounts):
    """(P, R, F); a zero denominator yields 0."""
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    return p, r, _ratio(2 * p * r, p + r)


def substitutions_deletions_insertions(c: MetricCounts):
    s = np.minimum(c.fn_k, c.fp_k)
    d = np.maximum(0, c.fn_k - c.fp_k)
    i = np.maximum(0, c.fp_k - c.fn_k)
    return s, d, i


def error_rate(c: MetricCounts) -> float:
    """(S + D + I) / N over all segments.

    With no reference activity the rate is 0 when there are also no errors
    and ``math.inf`` (undefined) otherwise.
    """
    s, d, i = substitutions_deletions_insertions(c)
    errors = int(s.sum() + d.sum() + i.sum())
    n = int(c.n_k.sum())
    if n == 0:
        return 0.0 if errors == 0 else math.inf
    return errors / n


def per_event_counts(ref, pred, segment_frames: int = 1) -> list:
    ref = np.asarray(ref)
    pred = np.asarray(pred)
    if ref.shape != pred.shape:
        raise ValueError(f"roll shapes differ: {ref.shape} vs {pred.shape}")
    return [frame_counts(ref[m : m + 1], pred[m : m + 1], segment_frames) for m in range(ref.shape[0])]


def _check_scene_lists(ref, pred):
    ref, pred = list(ref), list(pred)
    if len(ref) != len(pred):
        raise ValueError(f"{len(ref)} reference scenes vs {len(pred)} predictions")
    if not ref:
        raise ValueError("scene_f needs at least one clip")
    return ref, pred


def scene_f(ref_scenes, pred_scenes) -> float:
    """Micro-averaged F over clips; equals accuracy for single-label output."""
    ref, pred = _check_scene_lists(ref_scenes, pred_scenes)
    tp = sum(r == p for r, p in zip(ref, pred))
    fp = fn = len(ref) - tp  # each miss is one FP (predicted class) and one FN (true class)
    return precision_recall_f(MetricCounts(tp, fp, fn, *(np.zeros(0, np.int64),) * 3))[2]


def scene_f_per_class(ref_scenes, pred_scenes, labels=None) -> dict:
    ref, pred = _check_scene_lists(ref_scenes, pred_scenes)
    labels = labels if labels is not None else sorted(set(ref) | set(pred))
    out = {}
    for lab in labels:
        tp = sum(r == lab and p == lab for r, p in zip(ref, pred))
        fp = sum(r != lab and p == lab for r, p in zip(ref, pred))
        fn = sum(r == lab and p != lab for r, p in zip(ref, pred))
        z = np.zeros(0, np.int64)
        out[lab] = precision_recall_f(MetricCounts(tp, fp, fn, z, z, z))[2]
    return out


def write_report(path, rows, header_comment: str | None = None) -> None:
    """CSV with columns metric,scope,value."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "scope", "value"])
        for metric, scope, value in rows:
            w.writerow([metric, scope, f"{value:.6f}" if isinstance(value, float) else value])
