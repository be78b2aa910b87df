"""CSV, SVG and JSON artefacts for detection curves, feature errors and t-SNE maps.

SVGs are rendered by matplotlib without pyplot state, with a fixed hash
salt and no date stamp, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping

import numpy as np
from matplotlib import colors as mcolors
from matplotlib import rc_context
from matplotlib.figure import Figure

from ..errors import StoreError
from ..features import NUMERIC_FEATURES
from .metrics import EMBEDDING_GROUP, DetectionCurve, FeatureErrorReport

_RC = {"svg.hashsalt": "ueba", "svg.fonttype": "none", "font.size": 9}


def _save_svg(fig, path: Path) -> None:
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise StoreError(f"cannot write {path}: {exc}", path=str(path)) from exc


def _open(path: Path):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise StoreError(f"cannot write {path}: {exc}", path=str(path)) from exc


def write_detection(curves: Mapping[str, DetectionCurve], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    csv_path, svg_path = out_dir / "detection.csv", out_dir / "detection.svg"
    with _open(csv_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["type", "lambda", "rate", "n"])
        for t in sorted(curves):
            c = curves[t]
            for lam, rate, n in zip(c.lam, c.rate, c.n):
                w.writerow([t, f"{lam:.2f}", repr(float(rate)), int(n)])
    with rc_context(_RC):
        fig = Figure(figsize=(6, 4))
        ax = fig.subplots()
        for t in sorted(curves):
            ax.plot(curves[t].lam, curves[t].rate, label=t)
        ax.set_xlabel("anomaly intensity λ")
        ax.set_ylabel("detection rate")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right")
        fig.tight_layout()
        _save_svg(fig, svg_path)
    return [csv_path, svg_path]


def write_feature_errors(reports: Mapping[str, FeatureErrorReport], out_dir, stem: str = "feature_errors") -> list[Path]:
    """One CSV row per (set, feature); one horizontal bar panel per set."""
    out_dir = Path(out_dir)
    csv_path, svg_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.svg"
    names = list(NUMERIC_FEATURES) + [EMBEDDING_GROUP]
    with _open(csv_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set", "feature", "mean_abs_residual", "log_error"])
        for label in sorted(reports):
            rep = reports[label]
            for name, value in rep.named().items():
                w.writerow([label, name, repr(value), repr(float(np.log(value + 1e-12)))])
    with rc_context(_RC):
        k = max(len(reports), 1)
        fig = Figure(figsize=(3.2 * k, 5))
        axes = fig.subplots(1, k, sharey=True, squeeze=False)
        for ax, label in zip(axes[0], sorted(reports)):
            named = reports[label].named()
            ax.barh(range(len(names)), [np.log(named[n] + 1e-12) for n in names])
            ax.set_title(label)
            ax.set_xlabel("log mean |residual|")
        axes[0][0].set_yticks(range(len(names)), names)
        fig.tight_layout()
        _save_svg(fig, svg_path)
    return [csv_path, svg_path]


def write_tsne(points: np.ndarray, labels, out_dir, stem: str = "tsne", lam=None) -> list[Path]:
    """Scatter of a 2-D map coloured by label; ``lam`` (if given) sets marker opacity."""
    out_dir = Path(out_dir)
    csv_path, svg_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.svg"
    labels = np.asarray(labels).astype(str)
    lam = np.ones(len(labels)) if lam is None else np.asarray(lam, dtype=np.float64)
    with _open(csv_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label", "lambda"])
        for (x, y), label, l in zip(points, labels, lam):
            w.writerow([repr(float(x)), repr(float(y)), label, f"{l:.2f}"])
    with rc_context(_RC):
        fig = Figure(figsize=(5, 5))
        ax = fig.subplots()
        for label in sorted(set(labels)):
            rows = labels == label
            colors = np.zeros((rows.sum(), 4))
            colors[:] = mcolors.to_rgba(f"C{sorted(set(labels)).index(label) % 10}")
            colors[:, 3] = 0.15 + 0.85 * np.clip(lam[rows], 0, 1)
            ax.scatter(points[rows, 0], points[rows, 1], s=6, c=colors, label=label)
        ax.legend(loc="best", markerscale=2)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.tight_layout()
        _save_svg(fig, svg_path)
    return [csv_path, svg_path]


def write_json(obj, path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise StoreError(f"cannot write {path}: {exc}", path=str(path)) from exc
    return path
