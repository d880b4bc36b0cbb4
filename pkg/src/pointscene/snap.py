"""Room snapshotting: elliptical camera ring and an offscreen point renderer.

Cameras sit evenly on the ellipse inscribed in the room's xy bounding box,
all facing the room center at a fixed height, and each view is rendered by
z-buffered point splatting through a pinhole model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import Aabb3, PointCloud


@dataclass(frozen=True)
class CameraPose:
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    vfov: float = 1.047  # radians

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        tgt = np.asarray(self.look_at, dtype=np.float64)
        view = tgt - pos
        if np.linalg.norm(view) < 1e-12:
            raise ValueError("camera position must differ from look_at")
        up = np.asarray(self.up, dtype=np.float64)
        if np.linalg.norm(np.cross(view, up)) < 1e-9 * np.linalg.norm(view) * np.linalg.norm(up):
            raise ValueError("up vector is parallel to the view direction")
        if not (0.0 < self.vfov < math.pi):
            raise ValueError("vfov must lie in (0, pi)")
        object.__setattr__(self, "position", tuple(float(v) for v in pos))
        object.__setattr__(self, "look_at", tuple(float(v) for v in tgt))
        object.__setattr__(self, "up", tuple(float(v) for v in up))


@dataclass(frozen=True)
class SnapParams:
    num_views: int = 8
    width: int = 336
    height: int = 336
    splat_radius: int = 2
    background: tuple[int, int, int] = (255, 255, 255)
    eye_height: float = 1.5  # camera height above the room floor, clamped to the room

    def __post_init__(self):
        if self.num_views < 1:
            raise ValueError("num_views must be >= 1")
        if self.width < 16 or self.height < 16:
            raise ValueError("image dimensions must be >= 16")
        if self.splat_radius < 0:
            raise ValueError("splat_radius must be >= 0")


@dataclass(frozen=True)
class SnapshotImage:
    """Row-major RGB image; pixels has shape (height, width, 3) uint8."""

    width: int
    height: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel array shape {px.shape} != {(self.height, self.width, 3)}"
            )
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def save_png(self, path) -> None:
        from PIL import Image

        Image.fromarray(self.pixels, mode="RGB").save(path)


def camera_ring(room_bbox: Aabb3, params: SnapParams | None = None) -> list[CameraPose]:
    """Poses evenly spaced on the ellipse inscribed in the room footprint.

    Pose t sits at angle 2*pi*t/num_views on the ellipse with semi-axes
    (L/2, W/2) about the room center, at a fixed height, facing the center.
    """
    params = params or SnapParams()
    ext = room_bbox.extent
    if ext[0] <= 0.0 or ext[1] <= 0.0:
        raise ValueError("room bounding box is degenerate in x or y")
    cx, cy, _ = room_bbox.center
    z_c = min(max(room_bbox.min[2] + params.eye_height, room_bbox.min[2]), room_bbox.max[2])
    poses = []
    for t in range(params.num_views):
        theta = 2.0 * math.pi * t / params.num_views
        pos = (
            cx + (ext[0] / 2.0) * math.cos(theta),
            cy + (ext[1] / 2.0) * math.sin(theta),
            z_c,
        )
        poses.append(CameraPose(pos, (cx, cy, z_c)))
    return poses


def _camera_frame(pose: CameraPose):
    pos = np.asarray(pose.position)
    fwd = np.asarray(pose.look_at) - pos
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(pose.up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    up = np.cross(right, fwd)
    return pos, fwd, right, up


def render_snapshot(
    cloud: PointCloud, pose: CameraPose, params: SnapParams | None = None
) -> SnapshotImage:
    """Pinhole z-buffered splat rendering of a point cloud.

    Points behind the camera are culled. Each surviving point paints a disk
    of splat_radius pixels; the nearest point wins per pixel. Point colors
    are used when present, otherwise depth-shaded gray (near = dark).
    """
    params = params or SnapParams()
    if len(cloud) == 0:
        raise ValueError("cannot render an empty cloud")
    w, h = params.width, params.height
    pos, fwd, right, up = _camera_frame(pose)

    rel = cloud.points - pos
    depth = rel @ fwd
    front = depth > 1e-9
    rel = rel[front]
    depth = depth[front]
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = np.asarray(params.background, dtype=np.uint8)
    if len(depth) == 0:
        return SnapshotImage(w, h, img)

    focal = (h / 2.0) / math.tan(pose.vfov / 2.0)
    px = np.floor(w / 2.0 + focal * (rel @ right) / depth).astype(np.int64)
    py = np.floor(h / 2.0 - focal * (rel @ up) / depth).astype(np.int64)

    r = params.splat_radius
    near = (px >= -r) & (px < w + r) & (py >= -r) & (py < h + r)
    px, py, depth = px[near], py[near], depth[near]
    if len(depth) == 0:
        return SnapshotImage(w, h, img)

    if cloud.colors is not None:
        colors = cloud.colors[front][near]
    else:
        in_frame = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        if in_frame.any():
            d_min = float(depth[in_frame].min())
            d_max = float(depth[in_frame].max())
        else:
            d_min, d_max = float(depth.min()), float(depth.max())
        span = d_max - d_min
        shade = np.full(len(depth), 100.0) if span <= 0 else (depth - d_min) / span * 200.0
        colors = np.repeat(np.round(shade).astype(np.uint8)[:, None], 3, axis=1)

    offsets = [
        (dx, dy)
        for dx in range(-r, r + 1)
        for dy in range(-r, r + 1)
        if dx * dx + dy * dy <= r * r
    ]
    zbuf = np.full((h, w), np.inf)
    for dx, dy in offsets:
        qx, qy = px + dx, py + dy
        ok = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
        np.minimum.at(zbuf, (qy[ok], qx[ok]), depth[ok])
    for dx, dy in offsets:
        qx, qy = px + dx, py + dy
        ok = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
        qx, qy = qx[ok], qy[ok]
        win = zbuf[qy, qx] == depth[ok]
        img[qy[win], qx[win]] = colors[ok][win]
    return SnapshotImage(w, h, img)


def contact_sheet(images: list[SnapshotImage], cols: int = 4, margin: int = 4) -> SnapshotImage:
    """Tile snapshots into one image for quick per-room inspection."""
    if not images:
        raise ValueError("no images to tile")
    w, h = images[0].width, images[0].height
    cols = max(1, min(cols, len(images)))
    rows = (len(images) + cols - 1) // cols
    sheet = np.full(
        (rows * (h + margin) + margin, cols * (w + margin) + margin, 3), 255, dtype=np.uint8
    )
    for k, im in enumerate(images):
        rr, cc = divmod(k, cols)
        y0 = margin + rr * (h + margin)
        x0 = margin + cc * (w + margin)
        sheet[y0 : y0 + h, x0 : x0 + w] = im.pixels
    return SnapshotImage(sheet.shape[1], sheet.shape[0], sheet)
