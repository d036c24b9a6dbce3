"""Retrieval metrics and evaluation reports.

The headline metric is "R@n, IoU=m": the fraction of queries for which at
least one of the top-n predicted spans overlaps the ground truth with
temporal IoU strictly greater than m.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import torch

from .model import Batch, MomentModel, PreparedSample, collate
from .spotter import GateConfig

DEFAULT_TOP_N = (1, 5)
DEFAULT_IOU_THRESHOLDS = (0.5, 0.7)
ALT_IOU_THRESHOLDS = (0.3, 0.5)


def temporal_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Intersection over union of two ordered second intervals; 0 when disjoint."""
    if a[0] > a[1] or b[0] > b[1]:
        raise ValueError(f"intervals must be ordered: {a}, {b}")
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def recall_at(
    predictions: list[list[tuple[float, float]]],
    ground_truths: list[tuple[float, float]],
    n: int,
    m: float,
) -> float:
    """Fraction of samples whose top-n ranked spans contain one with IoU > m.

    The comparison is strict, so a hit exactly at the threshold is a miss.
    Empty prediction lists count as misses.
    """
    if len(predictions) != len(ground_truths):
        raise ValueError("prediction and ground-truth counts differ")
    if not predictions:
        return 0.0
    hits = 0
    for ranked, gt in zip(predictions, ground_truths):
        if any(temporal_iou(span, gt) > m for span in ranked[:n]):
            hits += 1
    return hits / len(predictions)


@dataclass
class MetricsReport:
    """Recall table plus the selection-cost counters of one evaluation run."""

    recalls: dict[tuple[int, float], float]
    sample_count: int
    mean_selected_fraction: float
    encoder_calls: int
    total_clips: int
    timing: dict[str, float] | None = None

    @property
    def calls_per_clip(self) -> float:
        return self.encoder_calls / self.total_clips if self.total_clips else 0.0

    def to_dict(self) -> dict:
        data = {
            "recalls": {f"R@{n},IoU={m}": v for (n, m), v in self.recalls.items()},
            "sample_count": self.sample_count,
            "mean_selected_fraction": self.mean_selected_fraction,
            "encoder_calls": self.encoder_calls,
            "total_clips": self.total_clips,
            "calls_per_clip": self.calls_per_clip,
        }
        if self.timing is not None:
            data["timing"] = self.timing
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def format_table(self) -> str:
        rows = [f"{'metric':<18}{'value':>10}"]
        rows.append("-" * 28)
        for (n, m), v in sorted(self.recalls.items()):
            rows.append(f"{f'R@{n}, IoU={m}':<18}{v:>10.4f}")
        rows.append(f"{'samples':<18}{self.sample_count:>10d}")
        rows.append(f"{'selected frac':<18}{self.mean_selected_fraction:>10.4f}")
        rows.append(f"{'encoder calls':<18}{self.encoder_calls:>10d}")
        rows.append(f"{'calls per clip':<18}{self.calls_per_clip:>10.4f}")
        if self.timing:
            for key, value in self.timing.items():
                rows.append(f"{key:<18}{value:>10.4f}")
        return "\n".join(rows)


@dataclass
class EvaluationResult:
    report: MetricsReport
    predicted_spans: list[list[tuple[float, float]]] = field(default_factory=list)
    selected_fractions: list[float] = field(default_factory=list)


def evaluate_model(
    model: MomentModel,
    prepared: list[PreparedSample],
    gate_cfg: GateConfig | None = None,
    top_n: tuple[int, ...] = DEFAULT_TOP_N,
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS,
    batch_size: int = 64,
    qav_extension: float = 0.25,
) -> EvaluationResult:
    """Deterministic evaluation of a model over prepared samples."""
    from .fusion import clip_pairs_to_times

    all_spans: list[list[tuple[float, float]]] = []
    gts: list[tuple[float, float]] = []
    fractions: list[float] = []
    calls = 0
    total_clips = 0
    k = max(top_n)

    for start in range(0, len(prepared), batch_size):
        chunk = prepared[start : start + batch_size]
        batch = collate(chunk, qav_extension)
        predictions, out = model.predict(batch, k=k, gate_cfg=gate_cfg)
        frac = out.selected_fraction(batch.clip_mask)
        for i, (item, pred) in enumerate(zip(chunk, predictions)):
            all_spans.append(clip_pairs_to_times(pred.top_k, item.geometry, item.duration))
            gts.append(item.gt_seconds)
            fractions.append(float(frac[i]))
        calls += int(out.encoder_calls.sum())
        total_clips += int(batch.clip_mask.sum())

    recalls = {
        (n, m): recall_at(all_spans, gts, n, m) for n in top_n for m in iou_thresholds
    }
    report = MetricsReport(
        recalls=recalls,
        sample_count=len(prepared),
        mean_selected_fraction=(sum(fractions) / len(fractions)) if fractions else 0.0,
        encoder_calls=calls,
        total_clips=total_clips,
    )
    return EvaluationResult(
        report=report, predicted_spans=all_spans, selected_fractions=fractions
    )
