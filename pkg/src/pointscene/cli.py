"""Command line interface.

Subcommands: build (full pipeline), synth (generate fixtures), query, snaps,
rooms segment|classify, objects detect|classify, navgraph build, and
eval rooms|objects|labels. Every pipeline config key is exposed as a flag and
overrides the config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import densitymap, geom, lookup, navgraph, objects, roomseg, scenegraph, snap, synth
from .metrics import classification_report, detection_ap, segmentation_metrics
from .pipeline import PipelineConfig, StageError, build_scene_graph
from .util import derive_seed

_LIST_FIELDS = {"room_categories", "object_categories"}


def _add_config_flags(parser: argparse.ArgumentParser, exclude: set | None = None) -> None:
    parser.add_argument("--config", help="pipeline config JSON file")
    for f in dataclasses.fields(PipelineConfig):
        if exclude and f.name in exclude:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.name in _LIST_FIELDS:
            parser.add_argument(flag, default=None, help=f"{f.name} (comma separated)")
        elif f.type in ("int", int):
            parser.add_argument(flag, type=int, default=None)
        elif f.type in ("float", float):
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, default=None)


def _config_from_args(args) -> PipelineConfig:
    config = (
        PipelineConfig.from_json_file(args.config) if args.config else PipelineConfig()
    )
    for f in dataclasses.fields(PipelineConfig):
        value = getattr(args, f.name, None)
        if value is None:
            continue
        if f.name in _LIST_FIELDS:
            value = [c.strip() for c in value.split(",") if c.strip()]
        elif f.type in ("int", int):
            value = int(value)
        elif f.type in ("float", float):
            value = float(value)
        setattr(config, f.name, value)
    return config


def _load_seg(path) -> roomseg.RoomSegmentation:
    return roomseg.seg_from_json(Path(path).read_text())


def cmd_build(args) -> int:
    config = _config_from_args(args)
    result = build_scene_graph(config)
    for stage_name, seconds in sorted(result.timings.items()):
        print(f"  {stage_name}: {seconds:.2f}s")
    print(f"scene graph: {result.paths['scene_graph_json']}")
    print(f"rooms: {len(result.graph.rooms)}, objects: {len(result.graph.objects)}")
    return 0


def cmd_synth(args) -> int:
    labels = tuple(s.strip() for s in args.labels.split(",")) if args.labels else None
    if args.duplicate_labels:
        spec = synth.duplicate_label_spec(seed=args.seed)
    else:
        spec = synth.ApartmentSpec(
            labels=labels or synth.DEFAULT_ROOM_LABELS,
            door_width=args.door_width,
            seed=args.seed,
        )
    cloud, gt = synth.generate_apartment(spec)
    geom.save_point_cloud(args.output, cloud, binary=True)
    Path(args.gt).write_text(gt.to_json())
    print(f"wrote {args.output} ({len(cloud)} points) and {args.gt}")
    return 0


def cmd_query(args) -> int:
    graph = scenegraph.deserialize(Path(args.graph).read_bytes())
    config = _config_from_args(args)
    backend = config.resolve_backend()
    target = scenegraph.resolve_query(
        graph, scenegraph.QuerySpec(args.object, args.room), backend
    )
    for warning in target.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(
        json.dumps(
            {
                "room_id": target.room_id,
                "object_id": target.object_id,
                "nav_node": target.nav_node,
                "position": list(target.position),
                "warnings": list(target.warnings),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_snaps(args) -> int:
    config = _config_from_args(args)
    cloud = geom.load_point_cloud(args.input, up_axis=config.up_axis)
    seg = _load_seg(args.seg)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = config.snap_params()
    for room_id, room_cloud in roomseg.extract_rooms(cloud, seg):
        if len(room_cloud) == 0:
            continue
        images = [
            snap.render_snapshot(room_cloud, pose, params)
            for pose in snap.camera_ring(room_cloud.aabb(), params)
        ]
        sheet = snap.contact_sheet(images)
        sheet.save_png(out / f"room_{room_id}_views.png")
        print(f"room {room_id}: {out / f'room_{room_id}_views.png'}")
    return 0


def cmd_rooms_segment(args) -> int:
    config = _config_from_args(args)
    cloud = geom.load_point_cloud(args.input, up_axis=config.up_axis)
    spec = geom.GridSpec.from_cloud(cloud, cell_size=config.cell_size)
    dm = densitymap.build_density_map(
        cloud,
        spec,
        densitymap.LayerSelectParams(config.num_layers, config.delta_b, config.delta_t),
        densitymap.CombineParams(config.gamma, config.vote_fraction, config.density_norm_percentile),
    )
    seg = roomseg.detect_regions(
        dm.combined,
        roomseg.RoomSegParams(config.wall_threshold, config.seed_distance, config.min_region_area),
    )
    Path(args.output).write_text(roomseg.seg_to_json(seg))
    if args.png:
        roomseg.seg_to_png(seg, args.png)
    print(f"{len(seg.masks)} rooms -> {args.output}")
    return 0


def cmd_rooms_classify(args) -> int:
    config = _config_from_args(args)
    cloud = geom.load_point_cloud(args.input, up_axis=config.up_axis)
    seg = _load_seg(args.seg)
    backend = config.resolve_backend()
    params = config.snap_params()
    report = {}
    for room_id, room_cloud in roomseg.extract_rooms(cloud, seg):
        if len(room_cloud) == 0:
            continue
        views = [
            backend.embed_image(snap.render_snapshot(room_cloud, pose, params))
            for pose in snap.camera_ring(room_cloud.aabb(), params)
        ]
        reps = lookup.kmeans_representatives(
            views,
            lookup.LookupParams(
                num_representatives=config.num_representatives,
                seed=derive_seed(config.seed, "lookup", room_id),
            ),
        )
        result = lookup.classify_room(reps, list(config.room_categories), backend)
        report[str(room_id)] = result.to_dict()
        print(f"room {room_id}: {result.label}")
    Path(args.output).write_text(json.dumps(report, sort_keys=True, indent=2))
    return 0


def _detect_and_classify(args, classify: bool):
    config = _config_from_args(args)
    cloud = geom.load_point_cloud(args.input, up_axis=config.up_axis)
    if args.seg:
        room_clouds = roomseg.extract_rooms(cloud, _load_seg(args.seg))
    else:
        room_clouds = [(0, cloud)]
    backend = config.resolve_backend() if classify else None
    params = objects.DbscanParams(config.eps, config.min_pts, config.num_points)
    dump_dir = Path(args.dump_ply) if getattr(args, "dump_ply", None) else None
    if dump_dir:
        dump_dir.mkdir(parents=True, exist_ok=True)
    out = {}
    for room_id, room_cloud in room_clouds:
        records = []
        if len(room_cloud) == 0:
            out[str(room_id)] = records
            continue
        for k, det in enumerate(objects.detect_boxes(room_cloud, params)):
            entry = {"box": det.box.to_dict(), "score": det.score}
            if classify:
                filtered = objects.filter_object_points(
                    room_cloud, det.box, params, seed=derive_seed(config.seed, "object", room_id, k)
                )
                label, ranked = objects.classify_object(
                    objects.normalize_points(filtered), list(config.object_categories), backend
                )
                entry.update(
                    {"label": label, "ranked_scores": [[c, s] for c, s in ranked]}
                )
                if dump_dir:
                    geom.save_point_cloud(
                        dump_dir / f"room{room_id}_obj{k}.ply",
                        geom.PointCloud(filtered.points),
                        binary=True,
                    )
            records.append(entry)
        out[str(room_id)] = records
    Path(args.output).write_text(json.dumps(out, sort_keys=True, indent=2))
    total = sum(len(v) for v in out.values())
    print(f"{total} objects -> {args.output}")
    return 0


def cmd_objects_detect(args) -> int:
    return _detect_and_classify(args, classify=False)


def cmd_objects_classify(args) -> int:
    return _detect_and_classify(args, classify=True)


def cmd_navgraph_build(args) -> int:
    config = _config_from_args(args)
    cloud = geom.load_point_cloud(args.input, up_axis=config.up_axis)
    spec = geom.GridSpec.from_cloud(cloud, cell_size=config.cell_size)
    params = navgraph.NavParams(config.h_robot, config.robot_radius, config.trim_len, config.d_sep)
    z_min = float(cloud.points[:, 2].min())
    above = cloud.subset(cloud.points[:, 2] > z_min + config.nav_floor_clearance)
    free = navgraph.build_free_space_map(above, params, spec)
    result = navgraph.build_navgraph(free, params)
    Path(args.output).write_text(result.graph.to_json())
    if args.dot:
        Path(args.dot).write_text(result.graph.to_dot())
    print(
        f"{len(result.graph.nodes)} nodes, {len(result.graph.edges)} edges, "
        f"total length {result.graph.total_length():.1f} m -> {args.output}"
    )
    return 0


def _print_metrics_table(rows):
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"  {name:<{width}}  {value:.4f}")


def cmd_eval_rooms(args) -> int:
    config = _config_from_args(args)
    seg = _load_seg(args.pred)
    gt = synth.SceneGroundTruth.from_json(Path(args.gt).read_text())
    masks = gt.room_masks(seg.spec)
    out = segmentation_metrics(
        [m.cells for m in seg.masks], [m.confidence for m in seg.masks], masks
    )
    del config
    doc = {"ap50": out["ap"], "miou": out["miou"]}
    Path(args.output).write_text(json.dumps(doc, sort_keys=True, indent=2))
    _print_metrics_table([("AP50", out["ap"]), ("mIoU", out["miou"])])
    return 0


def cmd_eval_objects(args) -> int:
    preds_doc = json.loads(Path(args.pred).read_text())
    gt = synth.SceneGroundTruth.from_json(Path(args.gt).read_text())
    preds: dict[str, list] = {}
    for records in preds_doc.values():
        for rec in records:
            label = rec.get("label", "object")
            preds.setdefault(label, []).append(
                (objects.Box3.from_dict(rec["box"]), float(rec["score"]))
            )
    gts: dict[str, list] = {}
    for obj in gt.objects:
        gts.setdefault(obj.category, []).append(obj.box)
    doc = {}
    rows = []
    for thresh, tag in ((0.25, "ap25"), (0.5, "ap50")):
        out = detection_ap(preds, gts, thresh)
        doc[tag] = out["mean_ap"]
        doc[f"{tag}_per_class"] = out["per_class"]
        rows.append((tag.upper(), out["mean_ap"]))
    Path(args.output).write_text(json.dumps(doc, sort_keys=True, indent=2))
    _print_metrics_table(rows)
    return 0


def cmd_eval_labels(args) -> int:
    pred_doc = json.loads(Path(args.pred).read_text())
    gt_doc = json.loads(Path(args.gt).read_text())
    keys = sorted(gt_doc)
    preds = [pred_doc[k]["label"] for k in keys]
    confs = [float(pred_doc[k].get("confidence", 1.0)) for k in keys]
    gts = [gt_doc[k] for k in keys]
    out = classification_report(preds, confs, gts)
    doc = {k: out[k] for k in ("precision", "recall", "f1", "map", "macro_accuracy")}
    Path(args.output).write_text(json.dumps(doc, sort_keys=True, indent=2))
    _print_metrics_table(list(doc.items()))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointscene",
        description="Hierarchical 3D scene graphs and navigation graphs from indoor point clouds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="run the full pipeline")
    _add_config_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("synth", help="generate a synthetic apartment and ground truth")
    p.add_argument("--output", required=True, help="output PLY path")
    p.add_argument("--gt", required=True, help="ground truth JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--door-width", type=float, default=0.9)
    p.add_argument("--labels", help="four room labels, comma separated")
    p.add_argument("--duplicate-labels", action="store_true", help="two rooms share a label")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("query", help="resolve a hierarchical location query")
    p.add_argument("--graph", required=True, help="scene graph JSON")
    p.add_argument("--object", required=True)
    p.add_argument("--room", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("snaps", help="write per-room snapshot contact sheets")
    p.add_argument("--input", required=True)
    p.add_argument("--seg", required=True)
    p.add_argument("--output-dir", required=True)
    _add_config_flags(p, exclude={"output_dir"})
    p.set_defaults(func=cmd_snaps)

    rooms = sub.add_parser("rooms", help="room operations").add_subparsers(
        dest="rooms_command", required=True
    )
    p = rooms.add_parser("segment")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--png", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_rooms_segment)
    p = rooms.add_parser("classify")
    p.add_argument("--input", required=True)
    p.add_argument("--seg", required=True)
    p.add_argument("--output", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_rooms_classify)

    objs = sub.add_parser("objects", help="object operations").add_subparsers(
        dest="objects_command", required=True
    )
    for name, func in (("detect", cmd_objects_detect), ("classify", cmd_objects_classify)):
        p = objs.add_parser(name)
        p.add_argument("--input", required=True)
        p.add_argument("--seg", default=None)
        p.add_argument("--output", required=True)
        if name == "classify":
            p.add_argument("--dump-ply", default=None, help="directory for per-object PLY dumps")
        _add_config_flags(p)
        p.set_defaults(func=func)

    nav = sub.add_parser("navgraph", help="navigation graph operations").add_subparsers(
        dest="navgraph_command", required=True
    )
    p = nav.add_parser("build")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dot", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_navgraph_build)

    ev = sub.add_parser("eval", help="metric computation").add_subparsers(
        dest="eval_command", required=True
    )
    p = ev.add_parser("rooms")
    p.add_argument("--pred", required=True, help="segmentation JSON")
    p.add_argument("--gt", required=True, help="scene ground truth JSON")
    p.add_argument("--output", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval_rooms)
    p = ev.add_parser("objects")
    p.add_argument("--pred", required=True, help="objects JSON")
    p.add_argument("--gt", required=True, help="scene ground truth JSON")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_eval_objects)
    p = ev.add_parser("labels")
    p.add_argument("--pred", required=True, help="predicted labels JSON")
    p.add_argument("--gt", required=True, help="truth labels JSON")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_eval_labels)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, scenegraph.SchemaError, navgraph.PathNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
