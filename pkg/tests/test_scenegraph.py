import numpy as np
import pytest

from pointscene.embedding import StubEmbeddingBackend
from pointscene.geom import GridSpec, OccupancyGrid
from pointscene.lookup import RoomLabelResult
from pointscene.navgraph import NavParams, build_navgraph
from pointscene.objects import Box3, ObjectRecord
from pointscene.roomseg import RegionMask, RoomSegmentation
from pointscene.scenegraph import (
    NavTarget,
    QuerySpec,
    SceneGraph,
    SchemaError,
    VersionError,
    assemble_graph,
    deserialize,
    resolve_query,
    room_mask_cells,
    serialize,
    to_dot,
)

CELL = 0.1


def toy_world(labels=("kitchen", "hallway"), objects=None):
    """Two 3x3 m rooms side by side over a 7x4 m footprint, with a straight
    corridor-style nav graph along y = 2."""
    spec = GridSpec((0.0, 0.0), CELL, 70, 40)

    def rect_cells(x0, y0, x1, y1):
        cells = []
        for i in range(spec.width):
            for j in range(spec.height):
                cx, cy = spec.cell_center(i, j)
                if x0 < cx < x1 and y0 < cy < y1:
                    cells.append((i, j))
        return np.array(cells)

    masks = (
        RegionMask(0, rect_cells(0.3, 0.5, 3.2, 3.5), 1.0),
        RegionMask(1, rect_cells(3.8, 0.5, 6.7, 3.5), 0.9),
    )
    seg = RoomSegmentation(spec, masks, np.empty((0, 2), dtype=np.int64))

    room_labels = {
        rid: RoomLabelResult(label, {label: 4}, {label: 0.9}, (label,) * 4, np.zeros((4, 1)))
        for rid, label in enumerate(labels)
    }

    free_cells = np.zeros((70, 40), dtype=np.int64)
    free_cells[4:66, 12:28] = 1
    free = OccupancyGrid(spec, free_cells)
    nav = build_navgraph(free, NavParams(robot_radius=0.3, trim_len=0.3))

    if objects is None:
        objects = {
            0: [record(0, "table", (1.5, 2.0, 0.4))],
            1: [record(0, "water station", (5.2, 2.0, 0.5))],
        }
    graph = assemble_graph(seg, room_labels, objects, nav, (0.0, 2.5))
    return graph, seg, nav


def record(oid, label, centroid, score=0.8):
    return ObjectRecord(
        object_id=oid,
        box=Box3(centroid, (0.6, 0.6, 0.8)),
        score=score,
        label=label,
        ranked_scores=((label, 0.95),),
        centroid=centroid,
        num_points=128,
    )


@pytest.fixture(scope="module")
def world():
    return toy_world()


# ------------------------------------------------------------------ assembly


def test_object_inside_mask_becomes_child(world):
    graph, _, _ = world
    table = next(o for o in graph.objects if o.label == "table")
    assert table.room_id == 0
    station = next(o for o in graph.objects if o.label == "water station")
    assert station.room_id == 1


def test_object_on_unassigned_cell_goes_to_nearest_mask():
    # centroid in the gap between the two rooms: room 0 boundary is closer
    objects = {0: [record(0, "chair", (3.45, 2.0, 0.4))]}
    graph, _, _ = toy_world(objects=objects)
    assert graph.objects[0].room_id == 0
    objects = {0: [record(0, "chair", (3.65, 2.0, 0.4))]}
    graph, _, _ = toy_world(objects=objects)
    assert graph.objects[0].room_id == 1


def test_anchors_reference_existing_nodes(world):
    graph, _, _ = world
    for r in graph.rooms:
        assert 0 <= r.nav_anchor < len(graph.nav.nodes)
    for o in graph.objects:
        assert 0 <= o.nav_anchor < len(graph.nav.nodes)


def test_random_scenes_have_single_parent_and_valid_anchors():
    rng = np.random.default_rng(0)
    for trial in range(12):
        labels = ("kitchen", "office")
        objs = {
            rid: [
                record(
                    k,
                    "box",
                    (float(rng.uniform(0.8, 6.0)), float(rng.uniform(0.8, 3.0)), 0.4),
                )
                for k in range(int(rng.integers(0, 3)))
            ]
            for rid in (0, 1)
        }
        graph, _, _ = toy_world(labels=labels, objects=objs)
        ids = [o.object_id for o in graph.objects]
        assert len(set(ids)) == len(ids)
        room_ids = {r.room_id for r in graph.rooms}
        for o in graph.objects:
            assert o.room_id in room_ids
            assert 0 <= o.nav_anchor < len(graph.nav.nodes)


def test_assemble_rejects_objects_without_rooms():
    spec = GridSpec((0.0, 0.0), CELL, 10, 10)
    seg = RoomSegmentation(spec, (), np.empty((0, 2), dtype=np.int64))
    free = OccupancyGrid(spec, np.ones((10, 10), dtype=np.int64))
    nav = build_navgraph(free, NavParams(robot_radius=0.2, trim_len=0.1))
    with pytest.raises(ValueError):
        assemble_graph(seg, {}, {0: [record(0, "x", (0.5, 0.5, 0.1))]}, nav, (0, 1))


# ------------------------------------------------------------------- queries


def test_hierarchical_query_returns_object_anchor(world):
    graph, _, _ = world
    backend = StubEmbeddingBackend()
    target = resolve_query(graph, QuerySpec("water station", room_text="hallway"), backend)
    station = next(o for o in graph.objects if o.label == "water station")
    assert target.object_id == station.object_id
    assert target.nav_node == station.nav_anchor
    assert target.warnings == ()


def test_global_query_without_room(world):
    graph, _, _ = world
    backend = StubEmbeddingBackend()
    target = resolve_query(graph, QuerySpec("table"), backend)
    table = next(o for o in graph.objects if o.label == "table")
    assert target.object_id == table.object_id


def test_duplicate_room_labels_warn_and_pick_lowest_id():
    objects = {
        0: [record(0, "chair", (1.5, 2.0, 0.4))],
        1: [record(0, "chair", (5.2, 2.0, 0.5))],
    }
    graph, _, _ = toy_world(labels=("classroom", "classroom"), objects=objects)
    backend = StubEmbeddingBackend()
    target = resolve_query(graph, QuerySpec("chair", room_text="classroom"), backend)
    assert target.room_id == 0
    assert any("ambiguous" in w for w in target.warnings)


def test_room_without_objects_falls_back_to_room_anchor():
    objects = {1: [record(0, "chair", (5.2, 2.0, 0.5))]}
    graph, _, _ = toy_world(objects=objects)
    backend = StubEmbeddingBackend()
    target = resolve_query(graph, QuerySpec("chair", room_text="kitchen"), backend)
    assert target.object_id is None
    assert target.room_id == 0
    assert any("no objects" in w for w in target.warnings)
    assert target.nav_node == graph.room(0).nav_anchor


def test_query_deterministic_under_storage_order(world):
    graph, _, _ = world
    backend = StubEmbeddingBackend()
    reordered = SceneGraph(
        graph.floor,
        graph.grid,
        tuple(reversed(graph.rooms)),
        tuple(reversed(graph.objects)),
        graph.nav,
        dict(graph.meta),
    )
    a = resolve_query(graph, QuerySpec("water station", room_text="hallway"), backend)
    b = resolve_query(reordered, QuerySpec("water station", room_text="hallway"), backend)
    assert (a.room_id, a.object_id, a.nav_node) == (b.room_id, b.object_id, b.nav_node)


def test_query_requires_rooms():
    spec = GridSpec((0.0, 0.0), CELL, 10, 10)
    seg = RoomSegmentation(spec, (), np.empty((0, 2), dtype=np.int64))
    free = OccupancyGrid(spec, np.ones((10, 10), dtype=np.int64))
    nav = build_navgraph(free, NavParams(robot_radius=0.2, trim_len=0.1))
    graph = assemble_graph(seg, {}, {}, nav, (0, 1))
    with pytest.raises(ValueError):
        resolve_query(graph, QuerySpec("chair"), StubEmbeddingBackend())


# ------------------------------------------------------------- serialization


def test_round_trip_preserves_graph(world):
    graph, _, _ = world
    blob = serialize(graph)
    back = deserialize(blob)
    assert back.version == graph.version
    assert len(back.rooms) == len(graph.rooms)
    assert len(back.objects) == len(graph.objects)
    assert serialize(back) == blob  # canonical form is a fixpoint
    for a, b in zip(graph.rooms, back.rooms):
        assert a.room_id == b.room_id and a.label == b.label
        assert a.nav_anchor == b.nav_anchor
    np.testing.assert_allclose(back.nav.nodes, graph.nav.nodes, atol=1e-6)


def test_serialization_is_byte_identical(world):
    graph, _, _ = world
    assert serialize(graph) == serialize(graph)


def test_mask_round_trip(world):
    graph, seg, _ = world
    cells = room_mask_cells(graph, 0)
    np.testing.assert_array_equal(cells, seg.masks[0].cells)


def test_version_mismatch_rejected(world):
    graph, _, _ = world
    import json

    doc = json.loads(serialize(graph))
    doc["version"] = "999"
    with pytest.raises(VersionError):
        deserialize(json.dumps(doc))


def test_dangling_reference_rejected(world):
    graph, _, _ = world
    import json

    doc = json.loads(serialize(graph))
    doc["objects"][0]["room"] = 77
    with pytest.raises(SchemaError):
        deserialize(json.dumps(doc))


def test_missing_field_rejected(world):
    graph, _, _ = world
    import json

    doc = json.loads(serialize(graph))
    del doc["rooms"][0]["label"]
    with pytest.raises(SchemaError):
        deserialize(json.dumps(doc))
    with pytest.raises(SchemaError):
        deserialize(b"this is not json")


def test_dot_export(world):
    graph, _, _ = world
    dot = to_dot(graph)
    assert "floor" in dot and "room_0" in dot and "obj_0" in dot
