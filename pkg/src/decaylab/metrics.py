"""Long-term tracking metrics with absent-aware IoU.

A frame where the target is annotated absent but a box is predicted scores
the worst possible IoU, 0.  Correctly predicted absence scores 1 by default
(set ``absent_credit=False`` to exclude such frames instead).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import Box, iou

DEFAULT_THRESHOLDS = tuple(float(x) for x in np.round(np.arange(0, 21) * 0.05, 2))


@dataclass
class TrackResult:
    """Aligned prediction and truth streams for one sequence."""

    pred: list[Box]
    truth: list[Box]
    tags: frozenset[str] = frozenset()
    repetition_boundaries: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.pred) != len(self.truth):
            raise ValueError("pred and truth must have equal length")
        self.tags = frozenset(self.tags)

    def __len__(self) -> int:
        return len(self.pred)


def frame_iou(pred: Box, truth: Box, absent_credit: bool = True) -> float:
    """Per-frame IoU with the absence rules applied.

    absent truth, present pred -> 0 (worst possible);
    absent truth, absent pred  -> 1 (correct absence; 0 credit if disabled);
    present truth, absent pred -> 0; both present -> plain IoU.
    """
    if not truth.present:
        if pred.present:
            return 0.0
        return 1.0 if absent_credit else float("nan")
    if not pred.present:
        return 0.0
    return iou(pred, truth)


def _frame_ious(r: TrackResult, absent_credit: bool = True) -> np.ndarray:
    vals = np.array(
        [frame_iou(p, t, absent_credit) for p, t in zip(r.pred, r.truth)]
    )
    return vals[~np.isnan(vals)]


def success_curve(r: TrackResult, thresholds=DEFAULT_THRESHOLDS, absent_credit=True) -> np.ndarray:
    """Fraction of successfully tracked frames per IoU threshold.

    A frame succeeds at threshold 0 only with strictly positive overlap (a
    disjoint prediction never counts) and at-or-above the threshold
    elsewhere (so a pixel-perfect box counts at every threshold, including
    the top of the grid).
    """
    ious = _frame_ious(r, absent_credit)
    if ious.size == 0:
        raise ValueError("empty result")
    return np.array(
        [float((ious > tau).mean()) if tau == 0.0 else float((ious >= tau).mean())
         for tau in thresholds]
    )


def auc(r: TrackResult, thresholds=DEFAULT_THRESHOLDS, absent_credit=True) -> float:
    """Mean of the success curve over the threshold grid."""
    return float(success_curve(r, thresholds, absent_credit).mean())


def tpr(r: TrackResult, tau: float = 0.5) -> float:
    """Fraction of truth-present frames localized with IoU above tau."""
    hits = 0
    total = 0
    for p, t in zip(r.pred, r.truth):
        if not t.present:
            continue
        total += 1
        if p.present and iou(p, t) > tau:
            hits += 1
    if total == 0:
        raise ValueError("no truth-present frames")
    return hits / total


def pr_f(r: TrackResult, tau: float = 0.5) -> tuple[float, float, float]:
    """IoU-thresholded precision/recall/F over present frames.

    Precision runs over prediction-present frames, recall over truth-present
    frames; empty denominators give 0.
    """
    tp = 0
    n_pred = 0
    n_truth = 0
    for p, t in zip(r.pred, r.truth):
        if p.present:
            n_pred += 1
        if t.present:
            n_truth += 1
        if p.present and t.present and iou(p, t) > tau:
            tp += 1
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_truth if n_truth else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


def per_challenge_report(results: list[TrackResult]) -> dict[str, float]:
    """Mean AUC per challenge tag over all sequences carrying that tag."""
    by_tag: dict[str, list[float]] = {}
    for r in results:
        a = auc(r)
        for tag in r.tags:
            by_tag.setdefault(tag, []).append(a)
    return {tag: float(np.mean(vals)) for tag, vals in sorted(by_tag.items())}


def per_repetition_curve(r: TrackResult) -> list[float]:
    """AUC computed independently over each repetition's frame span."""
    bounds = list(r.repetition_boundaries)
    if not bounds:
        raise ValueError("result has no repetition boundaries")
    n = len(r)
    if any(b < 0 or b >= n for b in bounds):
        raise ValueError("repetition boundaries outside the frame range")
    spans = list(zip(bounds, bounds[1:] + [n]))
    out = []
    for lo, hi in spans:
        sub = TrackResult(r.pred[lo:hi], r.truth[lo:hi], r.tags)
        out.append(auc(sub))
    return out


@dataclass
class EvalReport:
    thresholds: list[float]
    curve: list[float]
    auc: float
    tpr: float
    precision: float
    recall: float
    f: float
    per_challenge: dict[str, float]
    per_repetition: list[float]

    def to_json(self) -> str:
        return json.dumps(
            {
                "auc": self.auc,
                "tpr": self.tpr,
                "precision": self.precision,
                "recall": self.recall,
                "f": self.f,
                "thresholds": self.thresholds,
                "curve": self.curve,
                "per_challenge": self.per_challenge,
                "per_repetition": self.per_repetition,
            },
            sort_keys=True,
            indent=2,
        ) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json())

    def write_curve_csv(self, path) -> None:
        lines = ["tau,success"]
        for tau, s in zip(self.thresholds, self.curve):
            lines.append(f"{float(tau)!r},{float(s)!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def evaluate(r: TrackResult, thresholds=DEFAULT_THRESHOLDS, tau: float = 0.5) -> EvalReport:
    """Full report for one sequence result."""
    curve = success_curve(r, thresholds)
    p, rec, f = pr_f(r, tau)
    try:
        t = tpr(r, tau)
    except ValueError:
        t = 0.0
    reps = per_repetition_curve(r) if r.repetition_boundaries else []
    return EvalReport(
        thresholds=[float(x) for x in thresholds],
        curve=[float(x) for x in curve],
        auc=float(curve.mean()),
        tpr=t,
        precision=p,
        recall=rec,
        f=f,
        per_challenge={tag: auc(r) for tag in sorted(r.tags)},
        per_repetition=reps,
    )
