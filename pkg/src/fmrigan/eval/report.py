"""CSV and SVG writers for evaluation results. Floats are written with a
fixed format so reruns produce byte-identical files."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .contrast import RegionContrast
from .projection import ProjectionResult
from .stats import ClassifierReport

CONTRAST_COLUMNS = ("region", "mean_z_bio", "mean_z_scram", "n_bio_frames", "n_scram_frames", "t_statistic", "p_value")
CLASSIFIER_COLUMNS = ("method", "ce_loss", "accuracy", "f1", "auc", "n_train", "n_test")
PROJECTION_COLUMNS = ("id", "source", "x", "y", "z")

SOURCE_COLORS = {"real": "#1f77b4", "synthetic": "#d62728"}


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return f"{float(value):.9g}"
    return str(value)


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _num(s: str):
    return None if s == "" else float(s)


def write_contrast_csv(path, report: Sequence[RegionContrast]):
    """One row per region: mean z per condition, frame counts, t and p."""
    return _write_rows(path, CONTRAST_COLUMNS, [[getattr(r, c) for c in CONTRAST_COLUMNS] for r in report])


def read_contrast_csv(path) -> list[RegionContrast]:
    _, rows = _read_rows(path)
    return [
        RegionContrast(r[0], float(r[1]), float(r[2]), int(r[3]), int(r[4]), float(r[5]), float(r[6])) for r in rows
    ]


def write_classifier_csv(path, reports: Sequence[ClassifierReport]):
    """One row per augmentation arm; an undefined AUC is left blank."""
    return _write_rows(path, CLASSIFIER_COLUMNS, [[getattr(r, c) for c in CLASSIFIER_COLUMNS] for r in reports])


def read_classifier_csv(path) -> list[ClassifierReport]:
    _, rows = _read_rows(path)
    return [
        ClassifierReport(r[0], float(r[1]), float(r[2]), float(r[3]), _num(r[4]), int(r[5]), int(r[6])) for r in rows
    ]


def write_projection_csv(path, result: ProjectionResult):
    rows = [[i, s, *map(float, xyz)] for i, s, xyz in zip(result.ids, result.sources, result.coords)]
    return _write_rows(path, PROJECTION_COLUMNS, rows)


def read_projection_csv(path):
    _, rows = _read_rows(path)
    return [r[0] for r in rows], [r[1] for r in rows], np.array([[float(v) for v in r[2:5]] for r in rows])


def write_variance_csv(path, ratios):
    rows = [[k + 1, float(r), float(c)] for k, (r, c) in enumerate(zip(ratios, np.cumsum(ratios)))]
    return _write_rows(path, ("component", "explained_variance_ratio", "cumulative"), rows)


def projection_svg(
    ids, sources, coords, axes: tuple[int, int] = (0, 1), size: int = 480, margin: int = 40, title: str = ""
) -> str:
    """Flat scatter of two embedding axes, one colour per source tag."""
    coords = np.asarray(coords, dtype=np.float64)
    a, b = axes
    xs, ys = coords[:, a], coords[:, b]
    span = size - 2 * margin

    def scale(v):
        lo, hi = float(v.min()), float(v.max())
        rng = hi - lo if hi > lo else 1.0
        return (v - lo) / rng * span + margin

    px, py = scale(xs), size - scale(ys)
    names = "xyz"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="#999"/>',
    ]
    if title:
        out.append(f'<text x="{size // 2}" y="{margin // 2}" text-anchor="middle" font-size="14">{title}</text>')
    out.append(
        f'<text x="{size // 2}" y="{size - 8}" text-anchor="middle" font-size="12">{names[a]}</text>'
        f'<text x="12" y="{size // 2}" text-anchor="middle" font-size="12">{names[b]}</text>'
    )
    for i, s, x, y in zip(ids, sources, px, py):
        color = SOURCE_COLORS.get(s, "#555555")
        out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="3" fill="{color}" fill-opacity="0.7"><title>{i}</title></circle>')
    for k, (s, color) in enumerate(sorted(SOURCE_COLORS.items())):
        y = margin + 14 + 16 * k
        out.append(f'<circle cx="{size - margin - 70}" cy="{y - 4}" r="4" fill="{color}"/>')
        out.append(f'<text x="{size - margin - 60}" y="{y}" font-size="12">{s}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_projection_svg(path, result: ProjectionResult, axes=(0, 1), title: str = ""):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(projection_svg(result.ids, result.sources, result.coords, axes, title=title))
    return path
