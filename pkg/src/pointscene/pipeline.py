"""Config-driven end-to-end pipeline: point cloud in, scene graph plus
navigation graph and per-stage artifacts out.

Every knob lives in PipelineConfig; the effective config (defaults resolved)
is written next to the outputs and its hash is stamped into the scene graph,
so a run can be reproduced from its own artifacts. Identical config and seed
produce a byte-identical scene graph document.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import densitymap, geom, lookup, navgraph, objects, roomseg, scenegraph, snap
from .embedding import EmbeddingBackend, make_backend
from .synth import OBJECT_CATEGORIES, ROOM_CATEGORIES
from .util import canonical_json, derive_seed

ENV_REMOTE_URL = "POINTSCENE_EMBED_URL"


class StageError(RuntimeError):
    """Pipeline stage failure, carrying the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    input_path: str = ""
    output_dir: str = "pointscene_out"
    up_axis: str = "z"
    cell_size: float = 0.05
    # density map
    num_layers: int = 12
    delta_b: float = 1.0 / 15.0
    delta_t: float = 1.0 / 5.0
    gamma: float = 0.9
    vote_fraction: float = 0.75
    density_norm_percentile: float = 95.0
    # room segmentation
    wall_threshold: float = 0.15
    seed_distance: float = 0.6
    min_region_area: float = 1.5
    # snapshots and lookup
    num_views: int = 8
    image_size: int = 336
    splat_radius: int = 2
    eye_height: float = 1.5
    num_representatives: int = 0  # 0 resolves to min(4, num_views)
    # objects
    eps: float = 0.08
    min_pts: int = 10
    num_points: int = 1024
    # navigation
    h_robot: float = 1.2
    robot_radius: float = 0.3
    trim_len: float = 0.5
    d_sep: float = 0.2
    nav_floor_clearance: float = 0.1
    # embeddings
    backend: str = "stub"
    remote_url: str = ""
    room_categories: list[str] = field(default_factory=lambda: list(ROOM_CATEGORIES))
    object_categories: list[str] = field(default_factory=lambda: list(OBJECT_CATEGORIES))
    seed: int = 0

    def validate(self) -> None:
        densitymap.LayerSelectParams(self.num_layers, self.delta_b, self.delta_t)
        densitymap.CombineParams(self.gamma, self.vote_fraction, self.density_norm_percentile)
        objects.DbscanParams(self.eps, self.min_pts, self.num_points)
        navgraph.NavParams(self.h_robot, self.robot_radius, self.trim_len, self.d_sep)
        snap.SnapParams(self.num_views, self.image_size, self.image_size, self.splat_radius)
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if not (0.0 <= self.wall_threshold <= 1.0):
            raise ValueError("wall_threshold must lie in [0, 1]")
        if self.backend not in ("stub", "remote"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not self.room_categories or not self.object_categories:
            raise ValueError("category lists must be non-empty")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self) -> str:
        """Hash of the parameters that shape the result; where artifacts get
        written does not change what gets computed."""
        data = self.to_dict()
        data.pop("output_dir", None)
        return hashlib.sha256(canonical_json(data)).hexdigest()[:16]

    def snap_params(self) -> snap.SnapParams:
        return snap.SnapParams(
            num_views=self.num_views,
            width=self.image_size,
            height=self.image_size,
            splat_radius=self.splat_radius,
            eye_height=self.eye_height,
        )

    def resolve_backend(self) -> EmbeddingBackend:
        url = self.remote_url or os.environ.get(ENV_REMOTE_URL, "")
        return make_backend(self.backend, url=url or None, seed=self.seed)


@dataclass
class BuildResult:
    graph: scenegraph.SceneGraph
    paths: dict[str, str]
    timings: dict[str, float]
    seg: roomseg.RoomSegmentation
    nav: navgraph.NavBuildResult


def build_scene_graph(config: PipelineConfig) -> BuildResult:
    """Run the full pipeline and write all artifacts into the output dir."""
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    paths: dict[str, str] = {}

    def stage(name):
        class _Timer:
            def __enter__(self):
                self.t0 = time.monotonic()

            def __exit__(self, exc_type, exc, tb):
                timings[name] = round(time.monotonic() - self.t0, 4)
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc

        return _Timer()

    def emit(name, path):
        paths[name] = str(path)
        return path

    with stage("load"):
        if not os.path.exists(config.input_path):
            raise FileNotFoundError(f"input point cloud not found: {config.input_path}")
        cloud = geom.load_point_cloud(config.input_path, up_axis=config.up_axis)
        if len(cloud) == 0:
            raise ValueError("input cloud is empty")
        spec = geom.GridSpec.from_cloud(cloud, cell_size=config.cell_size)
        z = cloud.points[:, 2]
        z_range = (float(z.min()), float(z.max()))

    with stage("density_map"):
        dm = densitymap.build_density_map(
            cloud,
            spec,
            densitymap.LayerSelectParams(config.num_layers, config.delta_b, config.delta_t),
            densitymap.CombineParams(
                config.gamma, config.vote_fraction, config.density_norm_percentile
            ),
        )
        dm.density_norm.save_pgm(emit("density_pgm", out / "density.pgm"))
        dm.border.save_pgm(emit("border_pgm", out / "border.pgm"))
        dm.combined.save_png(emit("combined_png", out / "combined.png"))

    with stage("room_segmentation"):
        seg = roomseg.detect_regions(
            dm.combined,
            roomseg.RoomSegParams(
                config.wall_threshold, config.seed_distance, config.min_region_area
            ),
        )
        emit("segmentation_json", out / "segmentation.json").write_text(
            roomseg.seg_to_json(seg)
        )
        roomseg.seg_to_png(seg, emit("segmentation_png", out / "segmentation.png"))
        room_clouds = roomseg.extract_rooms(cloud, seg)

    backend = config.resolve_backend()
    snap_params = config.snap_params()

    with stage("room_classification"):
        room_labels: dict[int, lookup.RoomLabelResult] = {}
        for room_id, room_cloud in room_clouds:
            if len(room_cloud) == 0:
                room_labels[room_id] = lookup.RoomLabelResult(
                    config.room_categories[0], {}, {}, (), np.zeros((0, 0))
                )
                continue
            poses = snap.camera_ring(room_cloud.aabb(), snap_params)
            views = [
                backend.embed_image(snap.render_snapshot(room_cloud, pose, snap_params))
                for pose in poses
            ]
            reps = lookup.kmeans_representatives(
                views,
                lookup.LookupParams(
                    num_representatives=config.num_representatives,
                    seed=derive_seed(config.seed, "lookup", room_id),
                ),
            )
            room_labels[room_id] = lookup.classify_room(
                reps, list(config.room_categories), backend
            )
        emit("room_labels_json", out / "room_labels.json").write_text(
            json.dumps(
                {str(rid): res.to_dict() for rid, res in room_labels.items()},
                sort_keys=True,
                indent=2,
            )
        )

    with stage("object_detection"):
        dbscan_params = objects.DbscanParams(config.eps, config.min_pts, config.num_points)
        objects_per_room: dict[int, list[objects.ObjectRecord]] = {}
        for room_id, room_cloud in room_clouds:
            records = []
            if len(room_cloud) > 0:
                for k, det in enumerate(objects.detect_boxes(room_cloud, dbscan_params)):
                    filtered = objects.filter_object_points(
                        room_cloud,
                        det.box,
                        dbscan_params,
                        seed=derive_seed(config.seed, "object", room_id, k),
                    )
                    centroid = tuple(filtered.points.mean(axis=0))
                    normalized = objects.normalize_points(filtered)
                    label, ranked = objects.classify_object(
                        normalized, list(config.object_categories), backend
                    )
                    records.append(
                        objects.ObjectRecord(
                            object_id=k,
                            box=det.box,
                            score=det.score,
                            label=label,
                            ranked_scores=tuple(ranked),
                            centroid=centroid,
                            num_points=len(filtered),
                        )
                    )
            objects_per_room[room_id] = records
        emit("objects_json", out / "objects.json").write_text(
            json.dumps(
                {
                    str(rid): [r.to_dict() for r in recs]
                    for rid, recs in objects_per_room.items()
                },
                sort_keys=True,
                indent=2,
            )
        )

    with stage("navigation_graph"):
        nav_params = navgraph.NavParams(
            config.h_robot, config.robot_radius, config.trim_len, config.d_sep
        )
        # the floor sheet itself is not an obstacle at robot height
        above_floor = cloud.subset(cloud.points[:, 2] > z_range[0] + config.nav_floor_clearance)
        free = navgraph.build_free_space_map(above_floor, nav_params, spec)
        nav = navgraph.build_navgraph(free, nav_params)
        free.save_pgm(emit("nav_free_pgm", out / "nav_free.pgm"))
        nav.eroded.save_pgm(emit("nav_eroded_pgm", out / "nav_eroded.pgm"))
        nav.boundary.save_pgm(emit("nav_boundary_pgm", out / "nav_boundary.pgm"))
        emit("navgraph_json", out / "navgraph.json").write_text(nav.graph.to_json())
        emit("navgraph_dot", out / "navgraph.dot").write_text(nav.graph.to_dot())

    with stage("assemble"):
        graph = scenegraph.assemble_graph(
            seg,
            room_labels,
            objects_per_room,
            nav,
            z_range,
            meta={"config_hash": config.config_hash(), "seed": config.seed},
        )
        blob = scenegraph.serialize(graph)
        emit("scene_graph_json", out / "scene_graph.json").write_bytes(blob)
        emit("scene_graph_dot", out / "scene_graph.dot").write_text(scenegraph.to_dot(graph))

    effective = dict(config.to_dict())
    (out / "effective_config.json").write_text(json.dumps(effective, sort_keys=True, indent=2))
    paths["effective_config"] = str(out / "effective_config.json")
    (out / "timings.json").write_text(json.dumps(timings, sort_keys=True, indent=2))
    paths["timings"] = str(out / "timings.json")
    return BuildResult(graph, paths, timings, seg, nav)
