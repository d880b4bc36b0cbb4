import numpy as np
import pytest

from oracles import naive_dbscan, partitions_equal
from pointscene.archetypes import object_shape_points
from pointscene.embedding import StubEmbeddingBackend
from pointscene.geom import PointCloud
from pointscene.objects import (
    Box3,
    DbscanParams,
    Detection,
    ObjectPoints,
    ObjectRecord,
    classify_object,
    dbscan_labels,
    detect_boxes,
    filter_object_points,
    normalize_points,
    records_from_json,
    records_to_json,
)


def floor_plane(rng, n=800, size=6.0, z=0.0):
    return np.column_stack(
        [rng.uniform(0, size, n), rng.uniform(0, size, n), np.full(n, z)]
    )


def room_shell(rng, n=800, size=6.0, height=2.5):
    """Floor plus ceiling, so percentile plane removal has real planes."""
    return np.vstack([floor_plane(rng, n, size), floor_plane(rng, n, size, z=height)])


def blob(rng, center, n=200, sigma=0.03):
    return rng.normal(0, sigma, size=(n, 3)) + np.asarray(center)


# ------------------------------------------------------------------- dbscan


def test_dbscan_excludes_far_outliers_and_matches_oracle():
    rng = np.random.default_rng(0)
    cluster = blob(rng, (0, 0, 0), n=200, sigma=0.02)
    outliers = blob(rng, (1.0, 1.0, 0.0), n=5, sigma=0.01)
    pts = np.vstack([cluster, outliers])
    labels = dbscan_labels(pts, eps=0.08, min_pts=10)
    assert set(labels[:200]) == {0}
    assert set(labels[200:]) == {-1}
    assert partitions_equal(labels, naive_dbscan(pts, 0.08, 10))


def test_dbscan_chained_points_form_one_cluster():
    pts = np.column_stack([np.arange(30) * 0.05, np.zeros(30), np.zeros(30)])
    labels = dbscan_labels(pts, eps=0.08, min_pts=3)
    assert set(labels) == {0}


def test_dbscan_no_cluster_when_min_pts_unreachable():
    pts = np.random.default_rng(1).normal(size=(6, 3))
    labels = dbscan_labels(pts, eps=0.08, min_pts=10)
    assert set(labels) == {-1}


@pytest.mark.parametrize("seed", range(8))
def test_dbscan_matches_naive_oracle_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 300))
    pts = rng.uniform(0, 1.5, size=(n, 3))
    eps = float(rng.uniform(0.02, 0.2))
    min_pts = int(rng.integers(3, 20))
    assert partitions_equal(
        dbscan_labels(pts, eps, min_pts), naive_dbscan(pts, eps, min_pts)
    )


# -------------------------------------------------------------- detect_boxes


def test_detector_recovers_two_planted_clusters():
    rng = np.random.default_rng(3)
    a = blob(rng, (1.0, 1.0, 0.4), n=300, sigma=0.05)
    b = blob(rng, (3.5, 3.0, 0.5), n=250, sigma=0.05)
    cloud = PointCloud(np.vstack([room_shell(rng), a, b]))
    dets = detect_boxes(cloud)
    assert len(dets) == 2
    for planted in (a, b):
        captured = max(det.box.contains(planted).mean() for det in dets)
        assert captured >= 0.95


def test_detector_empty_cloud_errors_floor_only_empty():
    with pytest.raises(ValueError):
        detect_boxes(PointCloud(np.empty((0, 3))))
    rng = np.random.default_rng(0)
    assert detect_boxes(PointCloud(room_shell(rng))) == []


def test_detector_translation_equivariance():
    rng = np.random.default_rng(5)
    base = np.vstack([room_shell(rng), blob(rng, (2, 2, 0.5), n=250)])
    shift = np.array([1.0, 2.0, 0.0])
    dets_a = detect_boxes(PointCloud(base))
    dets_b = detect_boxes(PointCloud(base + shift))
    assert len(dets_a) == len(dets_b) == 1
    np.testing.assert_allclose(
        np.asarray(dets_b[0].box.center) - np.asarray(dets_a[0].box.center),
        shift,
        atol=1e-9,
    )


def test_detector_scores_rank_by_cluster_size():
    rng = np.random.default_rng(7)
    big = blob(rng, (1, 1, 0.5), n=400)
    small = blob(rng, (4, 4, 0.5), n=100)
    dets = detect_boxes(PointCloud(np.vstack([room_shell(rng), big, small])))
    assert len(dets) == 2
    assert dets[0].score == 1.0 and dets[1].score < 1.0


# ------------------------------------------------------- filter_object_points


def test_filter_keeps_dense_cluster_drops_outliers():
    rng = np.random.default_rng(11)
    cluster = blob(rng, (0, 0, 0.5), n=200, sigma=0.02)
    stray = blob(rng, (0.9, 0.0, 0.5), n=5, sigma=0.01)
    cloud = PointCloud(np.vstack([cluster, stray]))
    box = Box3((0.45, 0.0, 0.5), (2.0, 1.0, 1.2))
    params = DbscanParams(eps=0.08, min_pts=10, num_points=128)
    obj = filter_object_points(cloud, box, params)
    assert len(obj) == 128
    # every kept point comes from the dense cluster, not the strays
    assert obj.points[:, 0].max() < 0.5


def test_filter_single_chained_cluster_resamples_to_n():
    pts = np.column_stack([np.arange(50) * 0.05, np.zeros(50), np.full(50, 0.5)])
    cloud = PointCloud(pts)
    box = Box3((1.2, 0.0, 0.5), (3.0, 0.5, 0.5))
    obj = filter_object_points(cloud, box, DbscanParams(num_points=64, min_pts=3))
    assert len(obj) == 64


def test_filter_noise_fallback_keeps_crop():
    pts = np.random.default_rng(2).uniform(0, 1, size=(6, 3))
    cloud = PointCloud(pts)
    box = Box3((0.5, 0.5, 0.5), (1.2, 1.2, 1.2))
    obj = filter_object_points(cloud, box, DbscanParams(min_pts=10, num_points=32))
    assert len(obj) == 32
    kept = {tuple(np.round(p, 9)) for p in obj.points}
    assert kept <= {tuple(np.round(p, 9)) for p in pts}
    assert len(kept) == 6  # all six originals appear, repeated


def test_filter_deterministic_per_seed():
    rng = np.random.default_rng(4)
    cloud = PointCloud(blob(rng, (0, 0, 0), n=300))
    box = Box3((0, 0, 0), (1, 1, 1))
    a = filter_object_points(cloud, box, seed=9)
    b = filter_object_points(cloud, box, seed=9)
    np.testing.assert_array_equal(a.points, b.points)


def test_filter_empty_crop_errors():
    cloud = PointCloud([[0.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        filter_object_points(cloud, Box3((5, 5, 5), (0.5, 0.5, 0.5)))


# ----------------------------------------------------------- normalize_points


def test_normalize_centroid_and_max_norm():
    pts = np.random.default_rng(0).normal(2.0, 1.0, size=(100, 3))
    obj = normalize_points(pts)
    assert obj.normalized
    np.testing.assert_allclose(obj.points.mean(axis=0), 0.0, atol=1e-9)
    assert abs(np.linalg.norm(obj.points, axis=1).max() - 1.0) < 1e-9


def test_normalize_idempotent():
    pts = np.random.default_rng(1).normal(size=(50, 3))
    once = normalize_points(pts)
    twice = normalize_points(once)
    np.testing.assert_allclose(once.points, twice.points, atol=1e-12)


def test_normalize_degenerate_single_point():
    obj = normalize_points(np.array([[3.0, 4.0, 5.0]]))
    np.testing.assert_allclose(obj.points, [[0.0, 0.0, 0.0]], atol=1e-12)


# ------------------------------------------------------------ classification


def test_classify_pole_archetype():
    backend = StubEmbeddingBackend()
    pole = object_shape_points("pole", 600, np.random.default_rng(8))
    obj = normalize_points(pole)
    label, ranked = classify_object(obj, ["pole", "slab"], backend)
    assert label == "pole"
    assert ranked[0][0] == "pole" and ranked[0][1] > ranked[1][1]


def test_classify_single_category():
    backend = StubEmbeddingBackend()
    obj = normalize_points(np.random.default_rng(0).normal(size=(50, 3)))
    label, ranked = classify_object(obj, ["thing"], backend)
    assert label == "thing" and len(ranked) == 1


def test_classify_ranking_matches_recompute():
    backend = StubEmbeddingBackend()
    obj = normalize_points(object_shape_points("chair", 500, np.random.default_rng(2)))
    cats = ["pole", "slab", "chair", "table"]
    label, ranked = classify_object(obj, cats, backend)
    vec = backend.embed_points(obj)
    expected = sorted(
        ((c, float(vec @ backend.embed_text(c))) for c in cats),
        key=lambda cs: (-cs[1], cs[0]),
    )
    assert [c for c, _ in ranked] == [c for c, _ in expected]
    for (_, a), (_, b) in zip(ranked, expected):
        assert a == pytest.approx(b, abs=1e-12)
    assert label == expected[0][0]


def test_classify_rotation_about_z_invariant_for_stub():
    backend = StubEmbeddingBackend()
    pts = object_shape_points("water station", 500, np.random.default_rng(3))
    theta = 1.1
    rot = np.array(
        [
            [np.cos(theta), -np.sin(theta), 0],
            [np.sin(theta), np.cos(theta), 0],
            [0, 0, 1],
        ]
    )
    a, _ = classify_object(normalize_points(pts), ["pole", "water station", "sofa"], backend)
    b, _ = classify_object(normalize_points(pts @ rot.T), ["pole", "water station", "sofa"], backend)
    assert a == b == "water station"


def test_classify_requires_normalized_and_categories():
    backend = StubEmbeddingBackend()
    raw = ObjectPoints(np.random.default_rng(0).normal(size=(20, 3)))
    with pytest.raises(ValueError):
        classify_object(raw, ["x"], backend)
    with pytest.raises(ValueError):
        classify_object(normalize_points(raw.points), [], backend)


# ------------------------------------------------------------------- records


def test_object_record_json_round_trip():
    rec = ObjectRecord(
        3,
        Box3((1, 2, 0.5), (0.4, 0.4, 1.0)),
        0.75,
        "chair",
        (("chair", 0.9), ("table", 0.4)),
        (1.0, 2.0, 0.5),
        1024,
    )
    back = records_from_json(records_to_json([rec]))
    assert back == [rec]


def test_box_contains_with_yaw():
    box = Box3((0, 0, 0.5), (2.0, 0.5, 1.0), yaw=np.pi / 2)
    # after 90-degree yaw the long side lies along y
    assert box.contains(np.array([[0.0, 0.9, 0.5]]))[0]
    assert not box.contains(np.array([[0.9, 0.0, 0.5]]))[0]
    aabb = box.aabb()
    assert aabb.extent[1] == pytest.approx(2.0, abs=1e-9)


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection(Box3((0, 0, 0), (1, 1, 1)), 1.5)
    with pytest.raises(ValueError):
        Box3((0, 0, 0), (0.0, 1, 1))
