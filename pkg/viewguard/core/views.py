from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
from typing import Sequence

import numpy as np

from .data import FlatImage, unflatten
from .generator import GenerativeModel, generate_rows


logger = logging.getLogger(__name__)

VIEW_COUNT = 3


@dataclass(frozen=True)
class ViewBand:
    k: int
    seed_rows: int
    r_start: int
    r_end: int


@dataclass(frozen=True)
class BandPlan:
    rows: int
    bands: tuple[ViewBand, ViewBand, ViewBand]

    def band(self, k: int) -> ViewBand:
        if not 1 <= k <= VIEW_COUNT:
            raise ValueError(f"View index must be in 1..{VIEW_COUNT}, got {k}")
        return self.bands[k - 1]

    @property
    def top_rows(self) -> int:
        return self.bands[0].seed_rows


@dataclass(frozen=True, eq=False)
class ViewSet:
    g1: FlatImage
    g2: FlatImage
    g3: FlatImage
    gstar: FlatImage
    source: FlatImage
    label_used: int
    rng_seeds: tuple[int, int, int]

    @property
    def views(self) -> tuple[FlatImage, FlatImage, FlatImage, FlatImage]:
        return (self.g1, self.g2, self.g3, self.gstar)


def band_plan(rows: int) -> BandPlan:
    if rows < 4 or rows % 4 != 0:
        raise ValueError(f"Image rows must be a positive multiple of 4, got {rows}")
    quarter = rows // 4
    bands = tuple(
        ViewBand(k=k, seed_rows=k * quarter, r_start=k * quarter + 1, r_end=(k + 1) * quarter)
        for k in range(1, VIEW_COUNT + 1)
    )
    return BandPlan(rows=rows, bands=bands)


def generate_view(
    model: GenerativeModel,
    image: FlatImage,
    label: int,
    k: int,
    rng: np.random.Generator,
) -> FlatImage:
    """View G_k: rows 1..m_k seed the model, band k is resampled, everything else is copied."""
    band = band_plan(image.rows).band(k)
    return generate_rows(model, image, label, band.r_start, band.r_end, rng)


def assemble_gstar(image: FlatImage, g1: FlatImage, g2: FlatImage, g3: FlatImage) -> FlatImage:
    for name, view in (("g1", g1), ("g2", g2), ("g3", g3)):
        if view.shape != image.shape:
            raise ValueError(f"{name} has shape {view.shape}, expected {image.shape}")
    plan = band_plan(image.rows)
    grid = unflatten(image)
    for band, view in zip(plan.bands, (g1, g2, g3)):
        grid[band.r_start - 1 : band.r_end] = unflatten(view)[band.r_start - 1 : band.r_end]
    return image.with_pixels(grid.reshape(-1))


def draw_view_seeds(rng: np.random.Generator) -> tuple[int, int, int]:
    return tuple(int(value) for value in rng.integers(0, 2**32, size=VIEW_COUNT, dtype=np.uint64))


def generate_views(
    model: GenerativeModel,
    image: FlatImage,
    label: int,
    rng: np.random.Generator,
    *,
    view_seeds: Sequence[int] | None = None,
    parallel: bool = True,
) -> ViewSet:
    """Generate G1..G3 from independent per-view streams and splice G*.

    ``view_seeds`` replays a recorded ViewSet; otherwise three seeds are drawn
    from ``rng``.
    """
    seeds = tuple(int(seed) for seed in view_seeds) if view_seeds is not None else draw_view_seeds(rng)
    if len(seeds) != VIEW_COUNT:
        raise ValueError(f"Expected {VIEW_COUNT} view seeds, got {len(seeds)}")
    band_plan(image.rows)

    def _one(k: int) -> FlatImage:
        return generate_view(model, image, label, k, np.random.default_rng(seeds[k - 1]))

    if parallel:
        with ThreadPoolExecutor(max_workers=VIEW_COUNT) as executor:
            g1, g2, g3 = executor.map(_one, range(1, VIEW_COUNT + 1))
    else:
        g1, g2, g3 = (_one(k) for k in range(1, VIEW_COUNT + 1))
    logger.debug("generated views for label %d with seeds %s", label, seeds)
    return ViewSet(
        g1=g1,
        g2=g2,
        g3=g3,
        gstar=assemble_gstar(image, g1, g2, g3),
        source=image,
        label_used=int(label),
        rng_seeds=seeds,
    )
