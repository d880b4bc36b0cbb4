"""Border-enhanced density map construction.

The map fuses two signals over one grid footprint: the normalized projected
point density, and a wall-border vote taken across selected z-slices. Slices
whose occupied area is too small (no border information) or too large
(floor/ceiling clutter) are discarded before voting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geom import GridSpec, OccupancyGrid, PointCloud, project_to_grid, slice_layers


@dataclass(frozen=True)
class LayerSelectParams:
    """Slice count and the occupied-fraction window (delta_b, delta_t)."""

    num_layers: int = 12
    delta_b: float = 1.0 / 15.0
    delta_t: float = 1.0 / 5.0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not (0.0 <= self.delta_b < self.delta_t <= 1.0):
            raise ValueError("require 0 <= delta_b < delta_t <= 1")


@dataclass(frozen=True)
class CombineParams:
    gamma: float = 0.9
    vote_fraction: float = 3.0 / 4.0
    density_norm_percentile: float = 95.0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        if not (0.0 < self.vote_fraction <= 1.0):
            raise ValueError("vote_fraction must lie in (0, 1]")
        if not (0.0 < self.density_norm_percentile <= 100.0):
            raise ValueError("density_norm_percentile must lie in (0, 100]")


@dataclass(frozen=True)
class LayerStats:
    """Per-layer occupied-cell counts, total footprint cells, selection."""

    occupied_per_layer: tuple[int, ...]
    total_cells: int
    selected_indices: tuple[int, ...]

    @property
    def num_selected(self) -> int:
        return len(self.selected_indices)


def _require_shared_spec(grids) -> GridSpec:
    specs = {g.spec for g in grids}
    if len(specs) != 1:
        raise ValueError("all layer grids must share one GridSpec")
    return next(iter(specs))


def select_layers(
    layer_grids: list[OccupancyGrid], params: LayerSelectParams | None = None
) -> tuple[list[OccupancyGrid], LayerStats]:
    """Keep layer k iff delta_b*S < S_k < delta_t*S (strict), order preserved.

    S_k is the layer's occupied-cell count and S the footprint cell count.
    """
    params = params or LayerSelectParams()
    if not layer_grids:
        raise ValueError("layer grid list is empty")
    spec = _require_shared_spec(layer_grids)
    total = spec.num_cells
    occupied = [g.occupied_count() for g in layer_grids]
    selected = [
        k
        for k, s_k in enumerate(occupied)
        if params.delta_b * total < s_k < params.delta_t * total
    ]
    stats = LayerStats(tuple(occupied), total, tuple(selected))
    return [layer_grids[k] for k in selected], stats


def merge_border(
    selected: list[OccupancyGrid],
    vote_fraction: float = 3.0 / 4.0,
    spec: GridSpec | None = None,
) -> OccupancyGrid:
    """Binary border map: cell is 1 iff occupied in >= vote_fraction * M of
    the M selected layers (real-valued threshold, no rounding).

    An empty selection yields an all-zero border map and a warning; spec is
    required in that case to size the output.
    """
    if not selected:
        if spec is None:
            raise ValueError("empty selection requires an explicit GridSpec")
        warnings.warn("no layers selected; border map is all zeros", stacklevel=2)
        return OccupancyGrid(spec, np.zeros((spec.width, spec.height), dtype=np.int64))
    spec = _require_shared_spec(selected)
    votes = np.zeros((spec.width, spec.height), dtype=np.int64)
    for grid in selected:
        votes += grid.cells > 0
    border = (votes >= vote_fraction * len(selected)).astype(np.int64)
    return OccupancyGrid(spec, border)


def normalize_density(counts: OccupancyGrid, percentile: float = 95.0) -> OccupancyGrid:
    """Scale counts into [0, 1] by the given percentile of the occupied-cell
    counts, clamped to 1. Robust against local point pileups."""
    if not counts.is_counts:
        raise ValueError("normalize_density expects a count grid")
    cells = counts.cells.astype(np.float64)
    positive = cells[cells > 0]
    if positive.size == 0:
        return OccupancyGrid(counts.spec, np.zeros_like(cells))
    scale = float(np.percentile(positive, percentile))
    if scale <= 0:
        scale = float(positive.max())
    return OccupancyGrid(counts.spec, np.clip(cells / scale, 0.0, 1.0))


def combine(
    den_norm: OccupancyGrid, border: OccupancyGrid, gamma: float = 0.9
) -> OccupancyGrid:
    """Weighted fusion gamma*density + (1-gamma)*border, output in [0, 1]."""
    if den_norm.spec != border.spec:
        raise ValueError("density and border grids must share one GridSpec")
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("gamma must lie in [0, 1]")
    den = den_norm.cells.astype(np.float64)
    if den.size and (den.min() < 0.0 or den.max() > 1.0):
        raise ValueError("density values must lie in [0, 1]")
    bor = (border.cells > 0).astype(np.float64)
    return OccupancyGrid(den_norm.spec, gamma * den + (1.0 - gamma) * bor)


@dataclass(frozen=True)
class DensityMapResult:
    """All intermediate maps of the fusion, for inspection and export."""

    density: OccupancyGrid = field(repr=False)
    density_norm: OccupancyGrid = field(repr=False)
    border: OccupancyGrid = field(repr=False)
    combined: OccupancyGrid = field(repr=False)
    stats: LayerStats


def build_density_map(
    cloud: PointCloud,
    spec: GridSpec | None = None,
    select_params: LayerSelectParams | None = None,
    combine_params: CombineParams | None = None,
) -> DensityMapResult:
    """Full pipeline: slice, project, select, vote-merge, normalize, fuse."""
    select_params = select_params or LayerSelectParams()
    combine_params = combine_params or CombineParams()
    if spec is None:
        spec = GridSpec.from_cloud(cloud)
    layers = slice_layers(cloud, select_params.num_layers)
    layer_grids = [project_to_grid(layer, spec) for layer in layers]
    selected, stats = select_layers(layer_grids, select_params)
    with warnings.catch_warnings():
        if not selected:
            warnings.simplefilter("always")
        border = merge_border(selected, combine_params.vote_fraction, spec=spec)
    density = project_to_grid(cloud, spec)
    den_norm = normalize_density(density, combine_params.density_norm_percentile)
    combined = combine(den_norm, border, combine_params.gamma)
    return DensityMapResult(density, den_norm, border, combined, stats)
