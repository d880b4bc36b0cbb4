"""Object layer: class-agnostic box proposals, density-based filtering of
box crops, normalization, and open-vocabulary labeling.

The DBSCAN here is the deterministic variant: clusters are the connected
components of core points under the eps-radius graph, and border points
attach to the cluster of their nearest core point (ties to the lowest core
index). Neighbor queries run over a voxel hash, so large crops stay cheap.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingBackend, cosine_similarity_matrix
from .geom import Aabb3, PointCloud


@dataclass(frozen=True)
class Box3:
    """Oriented (yaw about z) 3D box; size is full extent per axis."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if any(s <= 0 for s in size):
            raise ValueError(f"box size must be positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(self.center)
        if self.yaw != 0.0:
            c, s = np.cos(-self.yaw), np.sin(-self.yaw)
            x = c * pts[:, 0] - s * pts[:, 1]
            y = s * pts[:, 0] + c * pts[:, 1]
            pts = np.column_stack([x, y, pts[:, 2]])
        half = np.asarray(self.size) / 2.0
        return np.all(np.abs(pts) <= half + 1e-12, axis=1)

    def aabb(self) -> Aabb3:
        """Enclosing axis-aligned box (exact for yaw 0)."""
        half = np.asarray(self.size) / 2.0
        if self.yaw != 0.0:
            c, s = abs(np.cos(self.yaw)), abs(np.sin(self.yaw))
            half = np.array(
                [c * half[0] + s * half[1], s * half[0] + c * half[1], half[2]]
            )
        center = np.asarray(self.center)
        return Aabb3(tuple(center - half), tuple(center + half))

    def to_dict(self) -> dict:
        return {"center": list(self.center), "size": list(self.size), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3":
        return cls(tuple(d["center"]), tuple(d["size"]), float(d.get("yaw", 0.0)))


@dataclass(frozen=True)
class Detection:
    box: Box3
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError("detection score must lie in [0, 1]")


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.08
    min_pts: int = 10
    num_points: int = 1024  # fixed output size expected by point encoders

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.num_points < 8:
            raise ValueError("num_points must be >= 8")


@dataclass(frozen=True)
class ObjectPoints:
    """Fixed-size point set for the classifier; normalized means centroid at
    the origin and max point norm 1."""

    points: np.ndarray = field(repr=False)
    normalized: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3).copy()
        if len(pts) == 0:
            raise ValueError("object point set is empty")
        if self.normalized:
            centroid = pts.mean(axis=0)
            if np.abs(centroid).max() > 1e-9:
                raise ValueError("normalized points must be centered")
            peak = np.linalg.norm(pts, axis=1).max()
            if peak > 0 and abs(peak - 1.0) > 1e-9:
                raise ValueError("normalized points must have max norm 1")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def _voxel_hash(points: np.ndarray, cell: float) -> dict[tuple[int, int, int], list[int]]:
    keys = np.floor(points / cell).astype(np.int64)
    table: dict[tuple[int, int, int], list[int]] = defaultdict(list)
    for idx, key in enumerate(map(tuple, keys)):
        table[key].append(idx)
    return table


def _radius_neighbors(points: np.ndarray, radius: float):
    """Neighbor index lists (including self) within radius, via voxel hash."""
    table = _voxel_hash(points, radius)
    keys = np.floor(points / radius).astype(np.int64)
    neighbors = []
    r2 = radius * radius
    for idx in range(len(points)):
        kx, ky, kz = keys[idx]
        found = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    bucket = table.get((kx + dx, ky + dy, kz + dz))
                    if not bucket:
                        continue
                    cand = np.asarray(bucket)
                    diff = points[cand] - points[idx]
                    close = (diff * diff).sum(axis=1) <= r2
                    found.extend(int(c) for c in cand[close])
        neighbors.append(sorted(found))
    return neighbors


def dbscan_labels(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Deterministic DBSCAN labels: -1 for noise, clusters numbered by the
    lowest member index. Neighborhoods count the point itself."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    neighbors = _radius_neighbors(pts, eps)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for start in range(n):
        if not core[start] or labels[start] != -1:
            continue
        labels[start] = cluster
        stack = [start]
        while stack:
            p = stack.pop()
            for q in neighbors[p]:
                if core[q] and labels[q] == -1:
                    labels[q] = cluster
                    stack.append(q)
        cluster += 1
    # border points: nearest core neighbor within eps decides the cluster
    for idx in range(n):
        if labels[idx] != -1 or not neighbors[idx]:
            continue
        best = None
        for q in neighbors[idx]:
            if not core[q]:
                continue
            d = float(np.linalg.norm(pts[idx] - pts[q]))
            if best is None or d < best[0] - 1e-15 or (abs(d - best[0]) <= 1e-15 and q < best[1]):
                best = (d, q)
        if best is not None:
            labels[idx] = labels[best[1]]
    return labels


def detect_boxes(
    room_cloud: PointCloud,
    params: DbscanParams | None = None,
    link_radius: float = 0.10,
    floor_margin: float = 0.05,
    min_extent: float = 0.05,
    pad: float = 0.02,
) -> list[Detection]:
    """Reference class-agnostic box proposer.

    Strips the floor and ceiling bands (within floor_margin of the 1st/99th
    z-percentiles), single-linkage clusters the rest at link_radius, and
    boxes every cluster with at least min_pts points and a real extent on
    two or more axes. Score is cluster size relative to the largest.
    """
    params = params or DbscanParams()
    if len(room_cloud) == 0:
        raise ValueError("room cloud is empty")
    z = room_cloud.points[:, 2]
    p1, p99 = np.percentile(z, [1, 99])
    keep = (np.abs(z - p1) > floor_margin) & (np.abs(z - p99) > floor_margin)
    pts = room_cloud.points[keep]
    if len(pts) == 0:
        return []

    labels = _single_linkage(pts, link_radius)
    detections = []
    sizes = []
    for cid in range(labels.max() + 1):
        members = pts[labels == cid]
        if len(members) < params.min_pts:
            continue
        lo, hi = members.min(axis=0), members.max(axis=0)
        if int(np.sum(hi - lo >= min_extent)) < 2:
            continue
        center = (lo + hi) / 2.0
        size = (hi - lo) + 2 * pad
        detections.append((Box3(tuple(center), tuple(size)), len(members)))
        sizes.append(len(members))
    if not detections:
        return []
    peak = max(sizes)
    out = [Detection(box, count / peak) for box, count in detections]
    out.sort(key=lambda d: (-d.score, d.box.center))
    return out


def _single_linkage(points: np.ndarray, radius: float) -> np.ndarray:
    """Connected components of the radius graph (grid-hash flood fill)."""
    n = len(points)
    neighbors = _radius_neighbors(points, radius)
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for start in range(n):
        if labels[start] != -1:
            continue
        labels[start] = cluster
        stack = [start]
        while stack:
            p = stack.pop()
            for q in neighbors[p]:
                if labels[q] == -1:
                    labels[q] = cluster
                    stack.append(q)
        cluster += 1
    return labels


def filter_object_points(
    room_cloud: PointCloud,
    box: Box3,
    params: DbscanParams | None = None,
    seed: int = 0,
) -> ObjectPoints:
    """Crop the box, keep the dominant DBSCAN cluster, resample to the fixed
    point count.

    The largest cluster wins (ties: centroid nearest the box center); if
    DBSCAN finds no cluster the whole crop is kept, so an object is never
    empty. Resampling subsamples without replacement above the target and
    samples with replacement below it, seeded for reproducibility.
    """
    params = params or DbscanParams()
    inside = box.contains(room_cloud.points)
    crop = room_cloud.points[inside]
    if len(crop) == 0:
        raise ValueError("box does not intersect the cloud")
    labels = dbscan_labels(crop, params.eps, params.min_pts)
    if labels.max() < 0:
        kept = crop
    else:
        center = np.asarray(box.center)
        best = None
        for cid in range(labels.max() + 1):
            members = crop[labels == cid]
            dist = float(np.linalg.norm(members.mean(axis=0) - center))
            key = (-len(members), dist, cid)
            if best is None or key < best[0]:
                best = (key, members)
        kept = best[1]
    rng = np.random.default_rng(seed)
    n = params.num_points
    if len(kept) > n:
        idx = np.sort(rng.choice(len(kept), size=n, replace=False))
    elif len(kept) < n:
        idx = np.sort(rng.choice(len(kept), size=n, replace=True))
    else:
        idx = np.arange(n)
    return ObjectPoints(kept[idx], normalized=False)


def normalize_points(obj: ObjectPoints | np.ndarray) -> ObjectPoints:
    """Center on the centroid and scale so the farthest point has norm 1."""
    pts = obj.points if isinstance(obj, ObjectPoints) else np.asarray(obj, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("cannot normalize an empty point set")
    centered = pts - pts.mean(axis=0)
    peak = float(np.linalg.norm(centered, axis=1).max())
    if peak > 0:
        centered = centered / peak
        centered -= centered.mean(axis=0)  # re-center after scaling rounds
    return ObjectPoints(centered, normalized=True)


def classify_object(
    obj: ObjectPoints, categories: list[str], backend: EmbeddingBackend
) -> tuple[str, list[tuple[str, float]]]:
    """Label by embedding alignment: argmax cosine against category texts.

    Returns the label and the full ranking (score descending, ties broken
    lexicographically).
    """
    if not categories:
        raise ValueError("category list is empty")
    if not obj.normalized:
        raise ValueError("classify_object expects normalized points")
    vec = backend.embed_points(obj)
    text_vecs = [backend.embed_text(c) for c in categories]
    sims = cosine_similarity_matrix([vec], text_vecs)[0]
    ranked = sorted(zip(categories, map(float, sims)), key=lambda cs: (-cs[1], cs[0]))
    return ranked[0][0], ranked


@dataclass(frozen=True)
class ObjectRecord:
    """Classified object as persisted per room: box, detector score, label,
    full ranking, and the pre-normalization centroid."""

    object_id: int
    box: Box3
    score: float
    label: str
    ranked_scores: tuple[tuple[str, float], ...]
    centroid: tuple[float, float, float]
    num_points: int

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "box": self.box.to_dict(),
            "score": self.score,
            "label": self.label,
            "ranked_scores": [[c, s] for c, s in self.ranked_scores],
            "centroid": list(self.centroid),
            "num_points": self.num_points,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectRecord":
        return cls(
            int(d["object_id"]),
            Box3.from_dict(d["box"]),
            float(d["score"]),
            str(d["label"]),
            tuple((str(c), float(s)) for c, s in d["ranked_scores"]),
            tuple(float(v) for v in d["centroid"]),
            int(d["num_points"]),
        )


def records_to_json(records: list[ObjectRecord]) -> str:
    return json.dumps([r.to_dict() for r in records], sort_keys=True)


def records_from_json(text: str) -> list[ObjectRecord]:
    return [ObjectRecord.from_dict(d) for d in json.loads(text)]
