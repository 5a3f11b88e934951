from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .core.data import FlatImage, unflatten
from .core.views import ViewSet


def _grid_image(image: FlatImage) -> np.ndarray:
    grid = unflatten(image)
    return grid[:, :, 0] if image.channels == 1 else grid


def save_roc_curves(
    curves: dict[str, Sequence[tuple[float, float]]],
    path: str | Path,
    *,
    aucs: dict[str, float] | None = None,
    title: str = "Detector ROC",
) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 5))
    for tag, points in curves.items():
        fpr, tpr = zip(*points)
        label = f"{tag} (AUC {aucs[tag]:.3f})" if aucs and tag in aucs else tag
        ax.plot(fpr, tpr, label=label)
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    fig.savefig(output, dpi=150)
    plt.close(fig)
    return output


def save_image(image: FlatImage, path: str | Path) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_grid_image(image)).save(output)
    return output


def save_view_gallery(views: ViewSet, path: str | Path, *, class_name: str | None = None) -> Path:
    """Side-by-side z, G1, G2, G3, G* with the generated band of each view outlined."""
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    quarter = views.source.rows // 4
    panels = [("z", views.source, None)]
    panels += [(f"G{k}", view, (k * quarter, (k + 1) * quarter)) for k, view in enumerate((views.g1, views.g2, views.g3), start=1)]
    panels.append(("G*", views.gstar, (quarter, views.source.rows)))
    fig, axes = plt.subplots(1, len(panels), figsize=(2.2 * len(panels), 2.6))
    cmap = "gray" if views.source.channels == 1 else None
    for ax, (name, image, band) in zip(axes, panels):
        ax.imshow(_grid_image(image), cmap=cmap, vmin=0, vmax=255, interpolation="nearest")
        if band is not None:
            top, bottom = band
            ax.add_patch(
                plt.Rectangle((-0.5, top - 0.5), image.cols, bottom - top, fill=False, edgecolor="red", linestyle="--")
            )
        ax.set_title(name)
        ax.axis("off")
    label = class_name if class_name is not None else str(views.label_used)
    fig.suptitle(f"views for label {label}")
    fig.tight_layout()
    fig.savefig(output, dpi=150)
    plt.close(fig)
    return output
