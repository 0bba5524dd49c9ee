"""Counting metrics over per-video results: MAE, RMSE-style MSE, WRAE, density buckets.

"MSE" follows the crowd-counting reporting convention of the root of the mean
squared error, so its magnitude is comparable to MAE; the literal squared
version sits behind a flag.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import ValidationError

DENSITY_BOUNDARIES = (0, 50, 100, 150, 200)


@dataclass(frozen=True)
class VideoResult:
    video_id: str
    predicted: int
    actual: int
    length: int  # sampled-frame count of the sequence

    def __post_init__(self):
        if self.length < 1:
            raise ValidationError(f"video {self.video_id}: length must be >= 1")


def mae_mse(results: list[VideoResult], squared: bool = False) -> tuple[float, float]:
    """Mean absolute error and (root-)mean squared error over videos."""
    if not results:
        raise ValidationError("empty result list")
    abs_errors = [abs(r.actual - r.predicted) for r in results]
    mae = math.fsum(abs_errors) / len(results)
    mean_sq = math.fsum(e * e for e in abs_errors) / len(results)
    return mae, mean_sq if squared else math.sqrt(mean_sq)


def wrae(results: list[VideoResult]) -> float:
    """Length-weighted relative absolute error, in percent."""
    if not results:
        raise ValidationError("empty result list")
    for r in results:
        if r.actual == 0:
            raise ValidationError(
                f"video {r.video_id}: ground-truth total is 0, relative error undefined"
            )
    total_length = math.fsum(r.length for r in results)
    return 100.0 * math.fsum(
        (r.length / total_length) * abs(r.actual - r.predicted) / r.actual for r in results
    )


@dataclass(frozen=True)
class DensityBucket:
    label: str
    low: int
    high: float  # math.inf for the open top bucket
    mae: float
    count: int


def density_breakdown(
    results: list[VideoResult], boundaries: tuple[int, ...] = DENSITY_BOUNDARIES
) -> list[DensityBucket]:
    """Per-bucket MAE keyed on each video's ground-truth total; empty buckets omitted."""
    if list(boundaries) != sorted(boundaries):
        raise ValidationError("bucket boundaries must be sorted")
    edges = list(boundaries) + [math.inf]
    buckets = []
    for b in range(len(boundaries)):
        lo, hi = edges[b], edges[b + 1]
        members = [r for r in results if lo <= r.actual < hi]
        if not members:
            continue
        mae = math.fsum(abs(r.actual - r.predicted) for r in members) / len(members)
        buckets.append(DensityBucket(label=f"D{b}", low=lo, high=hi, mae=mae,
                                     count=len(members)))
    return buckets


@dataclass
class MetricsReport:
    mae: float
    mse: float
    wrae: float
    mse_convention: str
    buckets: list[DensityBucket]
    per_video: list[VideoResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "mse": self.mse,
            "wrae": self.wrae,
            "mse_convention": self.mse_convention,
            "buckets": [
                {
                    "label": b.label,
                    "range": [b.low, None if math.isinf(b.high) else b.high],
                    "mae": b.mae,
                    "count": b.count,
                }
                for b in self.buckets
            ],
            "per_video": [
                {
                    "video_id": r.video_id,
                    "predicted": r.predicted,
                    "actual": r.actual,
                    "deviation": abs(r.actual - r.predicted),
                    "length": r.length,
                }
                for r in self.per_video
            ],
        }


def build_report(results: list[VideoResult], squared_mse: bool = False) -> MetricsReport:
    mae, mse = mae_mse(results, squared=squared_mse)
    return MetricsReport(
        mae=mae,
        mse=mse,
        wrae=wrae(results),
        mse_convention="squared" if squared_mse else "rmse",
        buckets=density_breakdown(results),
        per_video=list(results),
    )


def write_report_json(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_report_csv(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("video_id,predicted,actual,deviation,length\n")
        for r in report.per_video:
            fh.write(f"{r.video_id},{r.predicted},{r.actual},{abs(r.actual - r.predicted)},{r.length}\n")
        fh.write(f"TOTAL,mae={report.mae!r},mse={report.mse!r},wrae={report.wrae!r},\n")


def write_bucket_svg(report: MetricsReport, path) -> None:
    """Minimal deterministic bar chart of per-bucket MAE."""
    buckets = report.buckets
    width, height, margin = 480, 240, 40
    bar_zone = width - 2 * margin
    peak = max((b.mae for b in buckets), default=1.0) or 1.0
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{margin}" y="20" font-size="14">MAE by density bucket</text>',
    ]
    n = max(len(buckets), 1)
    slot = bar_zone / n
    for idx, b in enumerate(buckets):
        bar_h = (height - 2 * margin) * (b.mae / peak)
        x = margin + idx * slot + 0.15 * slot
        y = height - margin - bar_h
        lines.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{0.7 * slot:.2f}" '
            f'height="{bar_h:.2f}" fill="#4878a8"/>'
        )
        lines.append(
            f'<text x="{x:.2f}" y="{height - margin + 16}" font-size="12">{b.label}</text>'
        )
        lines.append(f'<text x="{x:.2f}" y="{y - 4:.2f}" font-size="10">{b.mae:.2f}</text>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
