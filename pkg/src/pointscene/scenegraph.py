"""Hierarchical scene graph: floor, rooms, objects, and the navigation graph
with per-node anchors, plus open-vocabulary query resolution against it.

Serialization is canonical JSON (sorted keys, floats rounded to 1e-6), so
equal graphs always produce byte-identical documents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingBackend
from .geom import Aabb3, GridSpec
from .lookup import RoomLabelResult
from .navgraph import NavBuildResult, NavEdge, NavGraph, _line_of_sight
from .objects import Box3, ObjectRecord
from .roomseg import RoomSegmentation
from .util import canonical_json, rle_decode, rle_encode

SCHEMA_VERSION = "1"


class SchemaError(ValueError):
    """Scene graph document violates the schema or referential integrity."""


class VersionError(SchemaError):
    """Scene graph document carries an incompatible version tag."""


@dataclass(frozen=True)
class FloorNode:
    floor_id: str
    z_range: tuple[float, float]
    bbox: Aabb3


@dataclass(frozen=True)
class RoomNode:
    room_id: int
    label: str
    confidence: float
    centroid: tuple[float, float, float]
    bbox: Aabb3
    nav_anchor: int
    votes: dict[str, int] = field(default_factory=dict)
    mean_similarity: dict[str, float] = field(default_factory=dict)
    mask_rle: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class ObjectNode:
    object_id: int
    room_id: int
    label: str
    score: float
    box: Box3
    centroid: tuple[float, float, float]
    nav_anchor: int
    ranked_scores: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not self.box.contains(np.asarray(self.centroid).reshape(1, 3))[0]:
            raise ValueError("object centroid lies outside its box")


@dataclass(frozen=True)
class QuerySpec:
    object_text: str
    room_text: str | None = None

    def __post_init__(self):
        if not self.object_text or not self.object_text.strip():
            raise ValueError("object_text must be non-empty")


@dataclass(frozen=True)
class NavTarget:
    room_id: int
    object_id: int | None
    nav_node: int
    position: tuple[float, float]
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class SceneGraph:
    floor: FloorNode
    grid: GridSpec
    rooms: tuple[RoomNode, ...]
    objects: tuple[ObjectNode, ...]
    nav: NavGraph
    meta: dict = field(default_factory=dict)
    version: str = SCHEMA_VERSION

    def __post_init__(self):
        room_ids = [r.room_id for r in self.rooms]
        if len(set(room_ids)) != len(room_ids):
            raise SchemaError("duplicate room ids")
        object_ids = [o.object_id for o in self.objects]
        if len(set(object_ids)) != len(object_ids):
            raise SchemaError("duplicate object ids")
        known = set(room_ids)
        for obj in self.objects:
            if obj.room_id not in known:
                raise SchemaError(f"object {obj.object_id} references missing room {obj.room_id}")
        num_nodes = len(self.nav.nodes)
        for r in self.rooms:
            if not (0 <= r.nav_anchor < num_nodes):
                raise SchemaError(f"room {r.room_id} anchor {r.nav_anchor} is not a nav node")
        for o in self.objects:
            if not (0 <= o.nav_anchor < num_nodes):
                raise SchemaError(f"object {o.object_id} anchor {o.nav_anchor} is not a nav node")

    def room(self, room_id: int) -> RoomNode:
        for r in self.rooms:
            if r.room_id == room_id:
                return r
        raise KeyError(room_id)


def _nearest_anchor(position, nav: NavBuildResult) -> int:
    """Nearest nav node with a straight free-space segment; plain nearest as
    the fallback."""
    nodes = nav.graph.nodes
    if len(nodes) == 0:
        raise ValueError("navigation graph has no nodes")
    pos = np.asarray(position[:2], dtype=float)
    order = np.argsort(np.linalg.norm(nodes - pos, axis=1), kind="stable")
    free = nav.eroded.cells > 0
    for k in order:
        if _line_of_sight(free, nav.eroded.spec, pos, nodes[k]):
            return int(k)
    return int(order[0])


def assemble_graph(
    seg: RoomSegmentation,
    room_labels: dict[int, RoomLabelResult],
    objects_per_room: dict[int, list[ObjectRecord]],
    nav: NavBuildResult,
    z_range: tuple[float, float],
    meta: dict | None = None,
) -> SceneGraph:
    """Join segmentation, labels, objects, and the navigation graph.

    An object's parent is the room whose mask holds its centroid cell; if
    that cell is wall or unassigned, the room with the smallest cell
    distance to its mask wins (ties to the lower room id).
    """
    if not seg.masks and any(objects_per_room.values()):
        raise ValueError("objects cannot be attached to an empty room set")
    spec = seg.spec
    label_grid = seg.label_grid()

    rooms = []
    for mask in seg.masks:
        result = room_labels[mask.room_id]
        cells = mask.cells
        cx = spec.origin[0] + (cells[:, 0].mean() + 0.5) * spec.cell_size
        cy = spec.origin[1] + (cells[:, 1].mean() + 0.5) * spec.cell_size
        bbox = Aabb3(
            (
                spec.origin[0] + cells[:, 0].min() * spec.cell_size,
                spec.origin[1] + cells[:, 1].min() * spec.cell_size,
                z_range[0],
            ),
            (
                spec.origin[0] + (cells[:, 0].max() + 1) * spec.cell_size,
                spec.origin[1] + (cells[:, 1].max() + 1) * spec.cell_size,
                z_range[1],
            ),
        )
        centroid = (cx, cy, z_range[0])
        rooms.append(
            RoomNode(
                room_id=mask.room_id,
                label=result.label,
                confidence=mask.confidence,
                centroid=centroid,
                bbox=bbox,
                nav_anchor=_nearest_anchor(centroid, nav),
                votes=dict(result.votes),
                mean_similarity={k: float(v) for k, v in result.mean_similarity.items()},
                mask_rle=tuple(
                    (int(a), int(b))
                    for a, b in rle_encode(
                        sorted(int(i) * spec.height + int(j) for i, j in cells)
                    )
                ),
            )
        )

    objects = []
    next_id = 0
    for room_id in sorted(objects_per_room):
        for rec in objects_per_room[room_id]:
            parent = _parent_room(rec.centroid, label_grid, seg)
            if parent is None:
                parent = room_id
            objects.append(
                ObjectNode(
                    object_id=next_id,
                    room_id=parent,
                    label=rec.label,
                    score=rec.score,
                    box=rec.box,
                    centroid=rec.centroid,
                    nav_anchor=_nearest_anchor(rec.centroid, nav),
                    ranked_scores=rec.ranked_scores,
                )
            )
            next_id += 1

    z0, z1 = float(z_range[0]), float(z_range[1])
    floor = FloorNode(
        "floor_0",
        (z0, z1),
        Aabb3(
            (spec.origin[0], spec.origin[1], z0),
            (
                spec.origin[0] + spec.width * spec.cell_size,
                spec.origin[1] + spec.height * spec.cell_size,
                z1,
            ),
        ),
    )
    return SceneGraph(floor, spec, tuple(rooms), tuple(objects), nav.graph, dict(meta or {}))


def _parent_room(centroid, label_grid, seg: RoomSegmentation) -> int | None:
    spec = seg.spec
    ij = spec.cell_indices(np.asarray(centroid[:2]).reshape(1, 2))[0]
    if not spec.contains_cells(ij.reshape(1, 2))[0]:
        return None
    owner = int(label_grid[ij[0], ij[1]])
    if owner >= 0:
        return owner
    best = None
    for mask in seg.masks:
        d = np.abs(mask.cells - ij).max(axis=1).min()  # cell (chebyshev) distance
        if best is None or d < best[0] or (d == best[0] and mask.room_id < best[1]):
            best = (d, mask.room_id)
    return best[1] if best else None


def resolve_query(graph: SceneGraph, query: QuerySpec, backend: EmbeddingBackend) -> NavTarget:
    """Hierarchical open-vocabulary lookup: best room by label similarity
    (when room text is given), then best object inside it; without room text
    the object search is global. Exact similarity ties resolve to the lowest
    id and attach an ambiguity warning."""
    if not graph.rooms:
        raise ValueError("scene graph has no rooms")
    warnings: list[str] = []

    if query.room_text is not None and query.room_text.strip():
        q_room = backend.embed_text(query.room_text)
        scored = sorted(
            (
                (-float(q_room @ backend.embed_text(r.label)), r.room_id)
                for r in graph.rooms
            ),
        )
        best_sim = scored[0][0]
        tied = [rid for s, rid in scored if abs(s - best_sim) <= 1e-9]
        if len(tied) > 1:
            warnings.append(
                f"ambiguous match: rooms {sorted(tied)} tie for {query.room_text!r}; "
                f"choosing room {min(tied)}"
            )
        room_id = min(tied)
        candidates = [o for o in graph.objects if o.room_id == room_id]
    else:
        room_id = -1
        candidates = list(graph.objects)

    if not candidates:
        room = graph.room(room_id)
        warnings.append(
            f"room {room_id} has no objects; returning the room anchor"
        )
        return NavTarget(
            room_id,
            None,
            room.nav_anchor,
            tuple(np.round(graph.nav.nodes[room.nav_anchor], 9)),
            tuple(warnings),
        )

    q_obj = backend.embed_text(query.object_text)
    scored_obj = sorted(
        ((-float(q_obj @ backend.embed_text(o.label)), o.object_id) for o in candidates)
    )
    best = scored_obj[0][0]
    tied_obj = [oid for s, oid in scored_obj if abs(s - best) <= 1e-9]
    if len(tied_obj) > 1:
        warnings.append(
            f"ambiguous match: objects {sorted(tied_obj)} tie for {query.object_text!r}; "
            f"choosing object {min(tied_obj)}"
        )
    obj = next(o for o in graph.objects if o.object_id == min(tied_obj))
    return NavTarget(
        obj.room_id,
        obj.object_id,
        obj.nav_anchor,
        tuple(np.round(graph.nav.nodes[obj.nav_anchor], 9)),
        tuple(warnings),
    )


# ------------------------------------------------------------- serialization


def _aabb_to_list(box: Aabb3):
    return [list(box.min), list(box.max)]


def serialize(graph: SceneGraph) -> bytes:
    doc = {
        "version": graph.version,
        "meta": graph.meta,
        "floor": {
            "id": graph.floor.floor_id,
            "z_range": list(graph.floor.z_range),
            "bbox": _aabb_to_list(graph.floor.bbox),
        },
        "grid": {
            "origin": list(graph.grid.origin),
            "cell_size": graph.grid.cell_size,
            "width": graph.grid.width,
            "height": graph.grid.height,
        },
        "rooms": [
            {
                "id": r.room_id,
                "label": r.label,
                "confidence": r.confidence,
                "centroid": list(r.centroid),
                "bbox": _aabb_to_list(r.bbox),
                "nav_anchor": r.nav_anchor,
                "votes": dict(sorted(r.votes.items())),
                "mean_similarity": dict(sorted(r.mean_similarity.items())),
                "mask_rle": [list(run) for run in r.mask_rle],
            }
            for r in graph.rooms
        ],
        "objects": [
            {
                "id": o.object_id,
                "room": o.room_id,
                "label": o.label,
                "score": o.score,
                "box": o.box.to_dict(),
                "centroid": list(o.centroid),
                "nav_anchor": o.nav_anchor,
                "ranked_scores": [[c, s] for c, s in o.ranked_scores],
            }
            for o in graph.objects
        ],
        "nav": {
            "nodes": graph.nav.nodes.tolist(),
            "edges": [
                {"a": e.a, "b": e.b, "length": e.length, "polyline": e.polyline.tolist()}
                for e in graph.nav.edges
            ],
        },
    }
    return canonical_json(doc)


def deserialize(blob: bytes | str) -> SceneGraph:
    try:
        doc = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise SchemaError("document lacks a version tag")
    if doc["version"] != SCHEMA_VERSION:
        raise VersionError(
            f"scene graph version {doc['version']!r} != supported {SCHEMA_VERSION!r}"
        )
    try:
        grid = GridSpec(
            tuple(doc["grid"]["origin"]),
            float(doc["grid"]["cell_size"]),
            int(doc["grid"]["width"]),
            int(doc["grid"]["height"]),
        )
        floor = FloorNode(
            doc["floor"]["id"],
            tuple(doc["floor"]["z_range"]),
            Aabb3(tuple(doc["floor"]["bbox"][0]), tuple(doc["floor"]["bbox"][1])),
        )
        rooms = tuple(
            RoomNode(
                room_id=int(r["id"]),
                label=r["label"],
                confidence=float(r["confidence"]),
                centroid=tuple(r["centroid"]),
                bbox=Aabb3(tuple(r["bbox"][0]), tuple(r["bbox"][1])),
                nav_anchor=int(r["nav_anchor"]),
                votes={k: int(v) for k, v in r["votes"].items()},
                mean_similarity={k: float(v) for k, v in r["mean_similarity"].items()},
                mask_rle=tuple((int(a), int(b)) for a, b in r["mask_rle"]),
            )
            for r in doc["rooms"]
        )
        objects = tuple(
            ObjectNode(
                object_id=int(o["id"]),
                room_id=int(o["room"]),
                label=o["label"],
                score=float(o["score"]),
                box=Box3.from_dict(o["box"]),
                centroid=tuple(o["centroid"]),
                nav_anchor=int(o["nav_anchor"]),
                ranked_scores=tuple((str(c), float(s)) for c, s in o["ranked_scores"]),
            )
            for o in doc["objects"]
        )
        nav = NavGraph(
            np.asarray(doc["nav"]["nodes"], dtype=float).reshape(-1, 2),
            [
                NavEdge(int(e["a"]), int(e["b"]), np.asarray(e["polyline"]), float(e["length"]))
                for e in doc["nav"]["edges"]
            ],
        )
        meta = doc.get("meta", {})
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed scene graph document: {exc}") from exc
    return SceneGraph(floor, grid, rooms, objects, nav, meta)


def room_mask_cells(graph: SceneGraph, room_id: int) -> np.ndarray:
    """Decode a room's mask back to (k, 2) cell indices."""
    room = graph.room(room_id)
    flat = rle_decode(room.mask_rle)
    h = graph.grid.height
    return np.array([(k // h, k % h) for k in flat], dtype=np.int64).reshape(-1, 2)


def to_dot(graph: SceneGraph) -> str:
    """Hierarchy export: floor -> rooms -> objects."""
    lines = ["digraph scenegraph {", '  rankdir=TB;']
    lines.append(f'  floor [label="{graph.floor.floor_id}" shape=box];')
    for r in graph.rooms:
        lines.append(f'  room_{r.room_id} [label="room {r.room_id}\\n{r.label}"];')
        lines.append(f"  floor -> room_{r.room_id};")
    for o in graph.objects:
        lines.append(
            f'  obj_{o.object_id} [label="obj {o.object_id}\\n{o.label}" shape=ellipse];'
        )
        lines.append(f"  room_{o.room_id} -> obj_{o.object_id};")
    lines.append("}")
    return "\n".join(lines)
