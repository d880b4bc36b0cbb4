"""Point-cloud and grid primitives: PLY I/O, z-slicing, occupancy projection.

Conventions: coordinates are meters, the up-axis is z (an ingest flag can
swap y/z for y-up files), grids are indexed cells[i, j] with i along x and
j along y.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class PlyError(Exception):
    """Base class for PLY parsing failures."""


class PlyHeaderError(PlyError):
    """Malformed or incomplete PLY header."""


class PlyDataError(PlyError):
    """Payload shorter than the header declares, or unparseable values."""


class PlyUnsupportedError(PlyError):
    """Valid PLY that this reader does not support (format or layout)."""


@dataclass(frozen=True)
class Aabb3:
    """Axis-aligned 3D box, min <= max componentwise."""

    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        mn = tuple(float(v) for v in self.min)
        mx = tuple(float(v) for v in self.max)
        if any(a > b for a, b in zip(mn, mx)):
            raise ValueError(f"Aabb3 min {mn} exceeds max {mx}")
        object.__setattr__(self, "min", mn)
        object.__setattr__(self, "max", mx)

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(b - a for a, b in zip(self.min, self.max))

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple((a + b) / 2.0 for a, b in zip(self.min, self.max))


@dataclass(frozen=True)
class PointCloud:
    """Immutable point set with optional per-point uint8 RGB colors."""

    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3).copy()
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3).copy()
            if len(col) != len(pts):
                raise ValueError(
                    f"color count {len(col)} does not match point count {len(pts)}"
                )
            col.setflags(write=False)
            object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return len(self.points)

    def aabb(self) -> Aabb3:
        if len(self) == 0:
            raise ValueError("empty cloud has no bounding box")
        return Aabb3(tuple(self.points.min(axis=0)), tuple(self.points.max(axis=0)))

    def subset(self, mask: np.ndarray) -> "PointCloud":
        """New cloud with the selected points (boolean mask or index array)."""
        colors = self.colors[mask] if self.colors is not None else None
        return PointCloud(self.points[mask], colors)


@dataclass(frozen=True)
class GridSpec:
    """Raster layout over the xy-plane: origin corner, cell size, cell counts."""

    origin: tuple[float, float]
    cell_size: float
    width: int
    height: int

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have at least one cell per axis")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def from_cloud(cls, cloud: PointCloud, cell_size: float = 0.05, pad_cells: int = 1) -> "GridSpec":
        """Footprint covering the cloud's xy AABB, padded by pad_cells per side."""
        box = cloud.aabb()
        ox = box.min[0] - pad_cells * cell_size
        oy = box.min[1] - pad_cells * cell_size
        width = int(np.ceil((box.max[0] - ox) / cell_size)) + 1 + pad_cells
        height = int(np.ceil((box.max[1] - oy) / cell_size)) + 1 + pad_cells
        return cls((ox, oy), cell_size, width, height)

    @property
    def num_cells(self) -> int:
        return self.width * self.height

    def cell_indices(self, xy: np.ndarray) -> np.ndarray:
        """Map (n, 2) xy coordinates to integer (i, j) cells by the floor rule."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        rel = (xy - np.asarray(self.origin)) / self.cell_size
        return np.floor(rel).astype(np.int64)

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin[0] + (i + 0.5) * self.cell_size,
            self.origin[1] + (j + 0.5) * self.cell_size,
        )

    def contains_cells(self, ij: np.ndarray) -> np.ndarray:
        ij = np.asarray(ij).reshape(-1, 2)
        return (
            (ij[:, 0] >= 0)
            & (ij[:, 0] < self.width)
            & (ij[:, 1] >= 0)
            & (ij[:, 1] < self.height)
        )


@dataclass(frozen=True)
class OccupancyGrid:
    """Grid of per-cell point counts (ints >= 0) or values in [0, 1]."""

    spec: GridSpec
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.shape != (self.spec.width, self.spec.height):
            raise ValueError(
                f"cell array shape {cells.shape} does not match spec "
                f"{(self.spec.width, self.spec.height)}"
            )
        if np.issubdtype(cells.dtype, np.integer):
            cells = cells.astype(np.int64)
            if cells.min(initial=0) < 0:
                raise ValueError("count grids must be non-negative")
        else:
            cells = cells.astype(np.float64)
            if not np.all(np.isfinite(cells)):
                raise ValueError("value grids must be finite")
            if cells.size and (cells.min() < 0.0 or cells.max() > 1.0):
                raise ValueError("value grids must lie in [0, 1]")
        cells = cells.copy()
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def is_counts(self) -> bool:
        return np.issubdtype(self.cells.dtype, np.integer)

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.cells))

    def binarize(self) -> "OccupancyGrid":
        """0/1 count grid: 1 wherever this grid is nonzero."""
        return OccupancyGrid(self.spec, (self.cells > 0).astype(np.int64))

    def to_image_array(self) -> np.ndarray:
        """uint8 image (rows = decreasing y) with counts scaled to 0-255."""
        cells = self.cells.astype(np.float64)
        if self.is_counts:
            peak = cells.max() if cells.size else 0.0
            scaled = cells * (255.0 / peak) if peak > 0 else cells
        else:
            scaled = cells * 255.0
        img = np.flipud(np.round(scaled).astype(np.uint8).T)
        return img

    def save_pgm(self, path) -> None:
        img = self.to_image_array()
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(img.tobytes())

    def save_png(self, path) -> None:
        from PIL import Image

        Image.fromarray(self.to_image_array(), mode="L").save(path)


def swap_up_axis(points: np.ndarray) -> np.ndarray:
    """Swap the y and z columns (used when ingesting y-up files)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts[:, [0, 2, 1]]


_PLY_SCALAR_SIZES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh):
    magic = fh.readline()
    if magic.strip() not in (b"ply",):
        raise PlyHeaderError("file does not start with 'ply'")
    fmt = None
    elements = []  # list of (name, count, [(ptype, pname) ...]); ptype None for lists
    while True:
        line = fh.readline()
        if not line:
            raise PlyHeaderError("header ended without 'end_header'")
        tokens = line.decode("ascii", errors="replace").strip().split()
        if not tokens or tokens[0] == "comment" or tokens[0] == "obj_info":
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "format":
            if len(tokens) < 2:
                raise PlyHeaderError("malformed format line")
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise PlyHeaderError(f"malformed element line: {line!r}")
            try:
                count = int(tokens[2])
            except ValueError as exc:
                raise PlyHeaderError(f"bad element count in {line!r}") from exc
            elements.append((tokens[1], count, []))
        elif tokens[0] == "property":
            if not elements:
                raise PlyHeaderError("property before any element")
            if tokens[1] == "list":
                elements[-1][2].append((None, tokens[-1]))
            else:
                if len(tokens) != 3:
                    raise PlyHeaderError(f"malformed property line: {line!r}")
                elements[-1][2].append((tokens[1], tokens[2]))
        else:
            raise PlyHeaderError(f"unrecognized header line: {line!r}")
    if fmt is None:
        raise PlyHeaderError("header has no format line")
    if fmt == "ascii":
        binary = False
    elif fmt == "binary_little_endian":
        binary = True
    elif fmt == "binary_big_endian":
        raise PlyUnsupportedError("binary_big_endian PLY is not supported")
    else:
        raise PlyHeaderError(f"unknown PLY format {fmt!r}")
    return binary, elements


def load_point_cloud(path, up_axis: str = "z") -> PointCloud:
    """Read a PLY point cloud (ASCII or binary-little-endian vertices).

    up_axis="y" swaps the y and z columns on ingest so z is up internally.
    Fails with distinct errors: FileNotFoundError, PlyHeaderError (bad or
    incomplete header), PlyDataError (truncated or unparseable payload),
    PlyUnsupportedError (format or element layout this reader cannot take).
    """
    if up_axis not in ("z", "y"):
        raise ValueError(f"up_axis must be 'z' or 'y', got {up_axis!r}")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such point cloud file: {path}")
    with open(path, "rb") as fh:
        binary, elements = _parse_ply_header(fh)
        vertex_names = [name for name, _, _ in elements if name == "vertex"]
        if not vertex_names:
            raise PlyUnsupportedError("PLY has no vertex element")

        pts = colors = None
        for name, count, props in elements:
            if name != "vertex":
                if pts is not None:
                    break  # payload after the vertices is irrelevant
                _skip_element(fh, binary, count, props)
                continue
            pnames = [p for _, p in props]
            for axis in ("x", "y", "z"):
                if axis not in pnames:
                    raise PlyUnsupportedError(f"vertex element lacks property {axis!r}")
            if any(t is None for t, _ in props):
                raise PlyUnsupportedError("list property inside vertex element")
            if binary:
                table = _read_binary_rows(fh, count, props)
            else:
                table = _read_ascii_rows(fh, count, props)
            pts = np.stack([table["x"], table["y"], table["z"]], axis=1).astype(np.float64)
            if all(c in table for c in ("red", "green", "blue")):
                colors = np.stack(
                    [table["red"], table["green"], table["blue"]], axis=1
                )
                if colors.dtype.kind == "f":
                    colors = np.clip(np.round(colors * 255.0), 0, 255)
                colors = colors.astype(np.uint8)
        if pts is None:
            raise PlyUnsupportedError("PLY has no vertex element")
    if up_axis == "y":
        pts = swap_up_axis(pts)
    return PointCloud(pts, colors)


def _skip_element(fh, binary, count, props):
    if count == 0:
        return
    if binary:
        if any(t is None for t, _ in props):
            raise PlyUnsupportedError(
                "cannot skip variable-length binary element before vertices"
            )
        row = sum(np.dtype(_PLY_SCALAR_SIZES[t]).itemsize for t, _ in props)
        data = fh.read(row * count)
        if len(data) != row * count:
            raise PlyDataError("truncated payload while skipping element")
    else:
        for _ in range(count):
            if not fh.readline():
                raise PlyDataError("truncated payload while skipping element")


def _read_binary_rows(fh, count, props):
    for t, _ in props:
        if t not in _PLY_SCALAR_SIZES:
            raise PlyUnsupportedError(f"unsupported property type {t!r}")
    dt = np.dtype([(p, "<" + _PLY_SCALAR_SIZES[t]) for t, p in props])
    data = fh.read(dt.itemsize * count)
    if len(data) != dt.itemsize * count:
        raise PlyDataError(
            f"truncated vertex payload: expected {dt.itemsize * count} bytes, "
            f"got {len(data)}"
        )
    rows = np.frombuffer(data, dtype=dt)
    return {p: rows[p] for _, p in props}


def _read_ascii_rows(fh, count, props):
    for t, _ in props:
        if t not in _PLY_SCALAR_SIZES:
            raise PlyUnsupportedError(f"unsupported property type {t!r}")
    names = [p for _, p in props]
    out = {p: np.empty(count, dtype=np.float64) for p in names}
    for k in range(count):
        line = fh.readline()
        if not line:
            raise PlyDataError(f"truncated vertex payload at row {k} of {count}")
        tokens = line.split()
        if len(tokens) < len(names):
            raise PlyDataError(f"vertex row {k} has {len(tokens)} of {len(names)} values")
        try:
            for p, tok in zip(names, tokens):
                out[p][k] = float(tok)
        except ValueError as exc:
            raise PlyDataError(f"unparseable vertex value on row {k}") from exc
    # Preserve declared integer types (matters for uchar colors).
    return {
        p: out[p].astype(_PLY_SCALAR_SIZES[t]) if _PLY_SCALAR_SIZES[t][0] in "iu" else out[p]
        for t, p in props
    }


def save_point_cloud(path, cloud: PointCloud, binary: bool = False) -> None:
    """Write a PLY file. Binary uses double precision so coordinates
    round-trip exactly; ASCII uses repr() which also round-trips floats."""
    has_color = cloud.colors is not None
    with open(path, "wb") as fh:
        lines = ["ply"]
        lines.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
        lines.append(f"element vertex {len(cloud)}")
        lines += ["property double x", "property double y", "property double z"]
        if has_color:
            lines += ["property uchar red", "property uchar green", "property uchar blue"]
        lines.append("end_header")
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if has_color:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            rows = np.empty(len(cloud), dtype=np.dtype(fields))
            rows["x"], rows["y"], rows["z"] = cloud.points.T
            if has_color:
                rows["red"], rows["green"], rows["blue"] = cloud.colors.T
            fh.write(rows.tobytes())
        else:
            for k in range(len(cloud)):
                x, y, z = cloud.points[k]
                parts = [repr(float(x)), repr(float(y)), repr(float(z))]
                if has_color:
                    parts += [str(int(v)) for v in cloud.colors[k]]
                fh.write((" ".join(parts) + "\n").encode("ascii"))


def slice_layers(cloud: PointCloud, num_slices: int) -> list[PointCloud]:
    """Split a cloud into num_slices equal z-bands, bottom to top.

    Band k is [z_min + k*dz, z_min + (k+1)*dz); the global z-maximum joins
    the top band so every point lands in exactly one slice.
    """
    if num_slices < 1:
        raise ValueError("num_slices must be >= 1")
    if len(cloud) == 0:
        raise ValueError("cannot slice an empty cloud")
    z = cloud.points[:, 2]
    z_min, z_max = float(z.min()), float(z.max())
    dz = (z_max - z_min) / num_slices
    if dz == 0.0:
        idx = np.full(len(cloud), num_slices - 1, dtype=np.int64)
    else:
        idx = np.floor((z - z_min) / dz).astype(np.int64)
        np.clip(idx, 0, num_slices - 1, out=idx)
    return [cloud.subset(idx == k) for k in range(num_slices)]


def project_to_grid(cloud: PointCloud, spec: GridSpec) -> OccupancyGrid:
    """Count points per grid cell by the floor binning rule."""
    counts = np.zeros((spec.width, spec.height), dtype=np.int64)
    if len(cloud) > 0:
        ij = spec.cell_indices(cloud.points[:, :2])
        inside = spec.contains_cells(ij)
        if not np.all(inside):
            bad = cloud.points[~inside][0]
            raise ValueError(
                f"point ({bad[0]:.3f}, {bad[1]:.3f}) falls outside the grid footprint"
            )
        np.add.at(counts, (ij[:, 0], ij[:, 1]), 1)
    return OccupancyGrid(spec, counts)
