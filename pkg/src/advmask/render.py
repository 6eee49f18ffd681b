"""Rendering and report serialization: overlays, benchmark figures, JSON/CSV.

The overlay colormap is a fixed lookup table (not a matplotlib colormap) so
golden-image tests stay byte-stable across library versions; the benchmark
figures use matplotlib with pinned metadata for reproducible PNG output.
"""

from __future__ import annotations

import csv
import io
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .core import ImageTensor
from .evaluation import EvaluationReport
from .explainers import SaliencyMap

# heat lookup table anchors: value in [0,1] -> RGB; piecewise-linear,
# black -> violet -> red -> orange -> yellow -> white
_HEAT_ANCHORS = [
    (0.00, (0, 0, 0)),
    (0.20, (80, 0, 140)),
    (0.45, (200, 30, 30)),
    (0.70, (255, 140, 0)),
    (0.90, (255, 220, 0)),
    (1.00, (255, 255, 255)),
]


def heat_lut() -> np.ndarray:
    """(256, 3) uint8 lookup table from the documented anchors."""
    xs = np.array([a[0] for a in _HEAT_ANCHORS])
    cols = np.array([a[1] for a in _HEAT_ANCHORS], dtype=np.float64)
    grid = np.linspace(0.0, 1.0, 256)
    lut = np.stack([np.interp(grid, xs, cols[:, c]) for c in range(3)], axis=1)
    return np.clip(np.rint(lut), 0, 255).astype(np.uint8)


def overlay_png(image: ImageTensor, saliency: SaliencyMap, path, alpha: float = 0.5) -> None:
    """Alpha-blend the heat-mapped normalized saliency over the input image."""
    lut = heat_lut()
    levels = np.clip(np.rint(saliency.normalized() * 255), 0, 255).astype(np.uint8)
    heat = lut[levels].astype(np.float64)  # H x W x 3
    base = image.data.astype(np.float64) * 255.0
    rgb = np.repeat(base, 3, axis=0) if image.channels == 1 else base
    rgb = np.transpose(rgb, (1, 2, 0))
    blended = np.clip(np.rint((1.0 - alpha) * rgb + alpha * heat), 0, 255).astype(np.uint8)
    Image.fromarray(blended, mode="RGB").save(path, format="PNG")


def saliency_binary(saliency: SaliencyMap) -> bytes:
    """Raw H x W grid as little-endian float32, row-major."""
    return saliency.scores.astype("<f4").tobytes()


def saliency_metadata(saliency: SaliencyMap, extra: dict | None = None) -> str:
    meta = {
        "method": saliency.method,
        "variant": saliency.variant.value,
        "shape": list(saliency.scores.shape),
        "dtype": "float32-le",
        "budget": {
            "forward_passes": saliency.budget.forward_passes,
            "batch_calls": saliency.budget.batch_calls,
            "wall_time": saliency.budget.wall_time,
        },
        "flags": saliency.flags,
        "attack": saliency.attack,
    }
    if extra:
        meta.update(extra)
    return json.dumps(meta, indent=2, sort_keys=True)


CSV_COLUMNS = ["method", "variant", "k", "accuracy", "sufficiency", "mean_inferences", "mean_seconds"]


def reports_to_csv(reports: list[EvaluationReport]) -> str:
    """One row per method x variant x k with the table-layout columns.

    mean_inferences per row counts the passes the row actually consumed:
    explanation production plus that k's evaluation attack.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        for k in sorted(rep.per_k):
            total = rep.mean_inferences + rep.mean_eval_attack_passes.get(k, 0.0)
            writer.writerow(
                [
                    rep.method,
                    rep.variant,
                    k,
                    repr(rep.per_k[k]["accuracy"]),
                    repr(rep.per_k[k]["sufficiency"]),
                    repr(total),
                    repr(rep.mean_seconds),
                ]
            )
    return buf.getvalue()


def reports_to_json(reports: list[EvaluationReport], run_info: dict | None = None) -> str:
    doc = {"reports": [rep.to_dict() for rep in reports]}
    if run_info:
        doc["run"] = run_info
    return json.dumps(doc, indent=2, sort_keys=True)


def benchmark_figure(reports: list[EvaluationReport], path) -> None:
    """Accuracy and sufficiency versus k, one line per method/variant pair."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for rep in reports:
        ks = sorted(rep.per_k)
        label = f"{rep.method}-{rep.variant}"
        style = "--" if rep.variant == "adv" else "-"
        axes[0].plot(ks, [rep.per_k[k]["accuracy"] for k in ks], style, marker="o", label=label)
        axes[1].plot(ks, [rep.per_k[k]["sufficiency"] for k in ks], style, marker="o", label=label)
    axes[0].set_xlabel("attacked top-k segments")
    axes[0].set_ylabel("detector accuracy after attack")
    axes[0].set_ylim(-0.02, 1.02)
    axes[1].set_xlabel("attacked top-k segments")
    axes[1].set_ylabel("sufficiency")
    axes[1].set_ylim(-0.02, 1.02)
    for ax in axes:
        ax.set_xticks(sorted({k for rep in reports for k in rep.per_k}))
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    # fixed metadata keeps the PNG byte-stable across runs
    fig.savefig(path, dpi=120, metadata={"Software": "advmask"})
    plt.close(fig)
