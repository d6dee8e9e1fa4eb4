"""Weak-perspective camera, first-hit rasterization and manual-image rendering.

Projection is ``s * (R v)[:2] + t`` with no depth division.  ``R`` is built
from ``euler = (roll, yaw, pitch)`` in degrees as ``Rz(roll) @ Rx(pitch) @
Ry(yaw)``: the world is first spun about its vertical axis, then tilted so a
positive pitch looks down on it.  The viewer sits on the camera's +z side, so
the first surface hit by a pixel ray is the one with the largest camera z.

Rasters live in projection coordinates: pixel (col u, row v) has its centre at
``(u + 0.5, v + 0.5)``.  Images written to disk are flipped vertically so the
world's up direction points up on screen.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .catalog import HU

_EPS_DIR = 1e-12


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


@dataclass(frozen=True)
class CameraParams:
    """Scaled orthographic camera; ``s`` is pixels per grid unit."""

    s: float
    t: tuple[float, float] = (0.0, 0.0)
    euler: tuple[float, float, float] = (0.0, 0.0, 0.0)
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"camera scale must be positive, got {self.s}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))
        object.__setattr__(self, "euler", tuple(float(v) for v in self.euler))

    @cached_property
    def rotation(self) -> np.ndarray:
        roll, yaw, pitch = np.radians(self.euler)
        return _rz(roll) @ _rx(pitch) @ _ry(yaw)

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "s": self.s,
            "t": list(self.t),
            "euler": list(self.euler),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CameraParams":
        return cls(float(d["s"]), tuple(d["t"]), tuple(d["euler"]), int(d["width"]), int(d["height"]))


def save_camera(cam: CameraParams, path) -> None:
    Path(path).write_text(json.dumps(cam.to_json(), indent=1))


def load_camera(path) -> CameraParams:
    return CameraParams.from_json(json.loads(Path(path).read_text()))


def project(cam: CameraParams, v) -> np.ndarray:
    """Project grid-unit point(s) (...,3) to pixel coordinates (...,2)."""
    v = np.asarray(v, dtype=float)
    cv = v @ cam.rotation.T
    return cam.s * cv[..., :2] + np.asarray(cam.t)


def project_offset(cam: CameraParams, d) -> np.ndarray:
    """Image-plane displacement of a 3D displacement; camera translation drops out."""
    d = np.asarray(d, dtype=float)
    return cam.s * (d @ cam.rotation.T)[..., :2]


def fit_camera(world, cam: CameraParams, margin: int = 2) -> CameraParams:
    """Resize and re-centre ``cam`` so the world's occupied bbox fills the image."""
    occ = world.occupied()
    if len(occ) == 0:
        return cam
    lo, hi = occ.min(axis=0) / HU, (occ.max(axis=0) + 1) / HU
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    p = project_offset(cam, corners)
    pmin, pmax = p.min(axis=0), p.max(axis=0)
    w = int(np.ceil(pmax[0] - pmin[0])) + 2 * margin
    h = int(np.ceil(pmax[1] - pmin[1])) + 2 * margin
    return replace(cam, t=(margin - pmin[0], margin - pmin[1]), width=max(w, 1), height=max(h, 1))


def center_camera(cam: CameraParams, lo, hi, offset=(0.0, 0.0)) -> CameraParams:
    """Translate ``cam`` so the centre of the grid-unit box lo..hi lands mid-image."""
    c = (np.asarray(lo, float) + np.asarray(hi, float)) / 2
    pc = project_offset(cam, c)
    t = (cam.width / 2 - pc[0] + offset[0], cam.height / 2 - pc[1] + offset[1])
    return replace(cam, t=t)


# ---------------------------------------------------------------------------
# rasterization


@dataclass
class Raster:
    """Per-pixel first-hit label (-1 background), depth and hit-face axis."""

    ids: np.ndarray
    depth: np.ndarray
    face: np.ndarray

    @property
    def shape(self):
        return self.ids.shape

    def mask(self, label: int) -> np.ndarray:
        return self.ids == label

    @classmethod
    def empty(cls, cam: CameraParams) -> "Raster":
        shape = (cam.height, cam.width)
        return cls(np.full(shape, -1, np.int32), np.full(shape, np.inf), np.full(shape, -1, np.int8))


def _box_region(cam: CameraParams, lo, hi):
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    p = project(cam, corners)
    c0 = max(int(np.ceil(p[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.floor(p[:, 0].max() - 0.5)), cam.width - 1)
    r0 = max(int(np.ceil(p[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.floor(p[:, 1].max() - 0.5)), cam.height - 1)
    if c1 < c0 or r1 < r0:
        return None
    return r0, r1 + 1, c0, c1 + 1


def cast_box(cam: CameraParams, lo, hi):
    """Ray-cast one axis-aligned box (grid units) against the pixel grid.

    Returns ``(region, hit, depth, face)`` where region is (r0, r1, c0, c1)
    or ``None`` when the box is off-screen.  Depth is ``-z`` of the entry point
    in camera coordinates, so smaller is nearer.
    """
    region = _box_region(cam, lo, hi)
    if region is None:
        return None
    r0, r1, c0, c1 = region
    R = cam.rotation
    a = (np.arange(c0, c1) + 0.5 - cam.t[0]) / cam.s
    b = (np.arange(r0, r1) + 0.5 - cam.t[1]) / cam.s
    A, B = np.meshgrid(a, b)
    d = R[2]
    enter = np.full(A.shape, -np.inf)
    exit_ = np.full(A.shape, np.inf)
    face = np.zeros(A.shape, np.int8)
    inside = np.ones(A.shape, bool)
    for k in range(3):
        o = A * R[0, k] + B * R[1, k]
        if abs(d[k]) < _EPS_DIR:
            inside &= (o >= lo[k]) & (o < hi[k])
            continue
        t1 = (lo[k] - o) / d[k]
        t2 = (hi[k] - o) / d[k]
        tmin, tmax = np.minimum(t1, t2), np.maximum(t1, t2)
        enter = np.maximum(enter, tmin)
        closer = tmax < exit_
        face[closer] = k
        exit_ = np.minimum(exit_, tmax)
    hit = inside & (enter < exit_)
    return region, hit, -exit_, face


def draw_boxes(cam: CameraParams, raster: Raster, boxes: np.ndarray, labels: Sequence[int]) -> Raster:
    """Z-buffer boxes (P,2,3 grid units) into ``raster`` in place; ties keep the earlier draw."""
    for (lo, hi), lab in zip(boxes, labels):
        res = cast_box(cam, lo, hi)
        if res is None:
            continue
        (r0, r1, c0, c1), hit, depth, face = res
        cur = raster.depth[r0:r1, c0:c1]
        win = hit & (depth < cur)
        cur[win] = depth[win]
        raster.ids[r0:r1, c0:c1][win] = lab
        raster.face[r0:r1, c0:c1][win] = face[win]
    return raster


STUD_RADIUS = 0.3  # grid units, square stud footprint half-width
STUD_HEIGHT = 0.2


def render_boxes(shape) -> np.ndarray:
    """Boxes (grid units) drawn for a shape: its bricks plus one small box per stud.

    Studs make rotations that only differ in stud layout distinguishable in
    images. A covered stud sits inside the brick above and never shows.
    """
    bodies = shape.boxes / HU
    if len(shape.studs) == 0:
        return bodies
    c = shape.studs / HU
    lo = c - (STUD_RADIUS, 0.0, STUD_RADIUS)
    hi = c + (STUD_RADIUS, STUD_HEIGHT, STUD_RADIUS)
    return np.concatenate([bodies, np.stack([lo, hi], axis=1)])


def instance_boxes(world, subset: Optional[Iterable[int]] = None):
    """World render boxes in grid units with their instance labels, in id order."""
    ids = sorted(world.instances) if subset is None else sorted(set(subset))
    boxes, labels = [], []
    for i in ids:
        b = render_boxes(world.instances[i].shape)
        boxes.append(b)
        labels.extend([i] * len(b))
    if not boxes:
        return np.zeros((0, 2, 3)), []
    return np.concatenate(boxes), labels


def rasterize(cam: CameraParams, world, subset: Optional[Iterable[int]] = None) -> Raster:
    """First-hit instance raster of the world (or of ``subset`` on its own)."""
    boxes, labels = instance_boxes(world, subset)
    return draw_boxes(cam, Raster.empty(cam), boxes, labels)


def occluded_mask(cam: CameraParams, scene: Raster, boxes_grid: np.ndarray):
    """Pixels where ``boxes_grid`` would be the first hit in front of ``scene``.

    Returns ``(region, mask)`` with ``mask`` covering only ``region``, or
    ``None`` when nothing lands on screen.
    """
    regions = []
    casts = []
    for lo, hi in boxes_grid:
        res = cast_box(cam, lo, hi)
        if res is not None:
            casts.append(res)
            regions.append(res[0])
    if not casts:
        return None
    r0 = min(r[0] for r in regions)
    r1 = max(r[1] for r in regions)
    c0 = min(r[2] for r in regions)
    c1 = max(r[3] for r in regions)
    depth = np.full((r1 - r0, c1 - c0), np.inf)
    for (a0, a1, b0, b1), hit, d, _ in casts:
        sub = depth[a0 - r0:a1 - r0, b0 - c0:b1 - c0]
        np.minimum(sub, np.where(hit, d, np.inf), out=sub)
    mask = depth < scene.depth[r0:r1, c0:c1]
    return (r0, r1, c0, c1), mask


# ---------------------------------------------------------------------------
# manual rendering

BACKGROUND = np.array([255, 255, 255], np.uint8)
HIGHLIGHT = np.array([255, 64, 32], np.float64)
OUTLINE = np.array([230, 0, 0], np.uint8)
EDGE = np.array([40, 40, 40], np.uint8)
_SHADE = {0: 0.72, 1: 1.0, 2: 0.86}


def type_color(type_id: str) -> np.ndarray:
    """Stable flat color for a component type."""
    h = hashlib.sha256(type_id.encode()).digest()
    return np.array([60 + h[0] % 160, 60 + h[1] % 160, 60 + h[2] % 160], np.float64)


def render_manual(cam: CameraParams, world, new_instances: Iterable[int] = (), raster: Optional[Raster] = None) -> np.ndarray:
    """Flat-shaded RGB manual image with new instances tinted and outlined."""
    new = set(new_instances)
    r = rasterize(cam, world) if raster is None else raster
    img = np.empty(r.ids.shape + (3,), np.float64)
    img[:] = BACKGROUND
    for iid in np.unique(r.ids[r.ids >= 0]).tolist():
        m = r.ids == iid
        color = type_color(world.instances[iid].type_id)
        if iid in new:
            color = 0.45 * color + 0.55 * HIGHLIGHT
        for axis, k in _SHADE.items():
            mk = m & (r.face == axis)
            img[mk] = color * k
    out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    # brick edges: label or face changes between neighbours
    key = r.ids.astype(np.int64) * 4 + r.face
    edge = np.zeros(key.shape, bool)
    edge[:, 1:] |= key[:, 1:] != key[:, :-1]
    edge[1:, :] |= key[1:, :] != key[:-1, :]
    out[edge & (r.ids >= 0)] = EDGE
    for iid in sorted(new):
        m = r.ids == iid
        if m.any():
            ring = m & ~ndimage.binary_erosion(m)
            out[ring] = OUTLINE
    return out


def write_png(path, rgb: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(rgb[::-1])).save(path, format="PNG", optimize=False)


def write_pgm16(path, labels: np.ndarray) -> None:
    """16-bit binary PGM; background is 0, instance ``i`` is stored as ``i + 1``."""
    data = (labels[::-1].astype(np.int64) + 1).clip(0, 65535).astype(">u2")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(data.tobytes())


def read_pgm16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    data = np.frombuffer(parts[3], dtype=">u2").reshape(h, w)
    return data[::-1].astype(np.int32) - 1
