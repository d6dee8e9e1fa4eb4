"""Stage-1 observations: per component type, keypoints, instance masks, rotation class.

The oracle reads them off the ground-truth scene; the noisy detector perturbs
an oracle observation to probe how robust pose inference is.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .camera import CameraParams, Raster, project, rasterize
from .catalog import Component, Pose, component_keypoint, symmetry_decode, symmetry_encode
from .world import VoxelWorld

MAX_TYPES = 5


@dataclass
class Detection:
    keypoint: tuple[float, float]
    mask: np.ndarray  # bool (H, W), raster orientation
    rotation_class: Optional[int] = None


@dataclass
class StepObservation:
    """Detections grouped by component name, each list in canonical order."""

    detections: dict[str, list[Detection]] = field(default_factory=dict)
    image_shape: tuple[int, int] = (512, 512)

    def counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.detections.items()}

    def validate(self, counts: Optional[dict[str, int]] = None) -> None:
        if len(self.detections) > MAX_TYPES:
            raise ValueError(f"{len(self.detections)} component types in one step (max {MAX_TYPES})")
        if counts is not None and self.counts() != dict(counts):
            raise ValueError(f"detection counts {self.counts()} differ from declared {dict(counts)}")
        for name, dets in self.detections.items():
            union = np.zeros(self.image_shape, bool)
            for d in dets:
                if (union & d.mask).any():
                    raise ValueError(f"overlapping masks within type {name!r}")
                union |= d.mask


@dataclass(frozen=True)
class NoiseSpec:
    keypoint_sigma: float = 0.0
    rotation_flip_prob: float = 0.0
    mask_morph_radius: int = 0
    mask_morph: str = "erode"  # or "dilate"
    flip_orders: tuple[int, ...] = (1, 2)
    seed: int = 0

    def __post_init__(self):
        if self.keypoint_sigma < 0 or self.mask_morph_radius < 0:
            raise ValueError("noise magnitudes must be nonnegative")
        if not 0 <= self.rotation_flip_prob <= 1:
            raise ValueError("rotation_flip_prob must lie in [0, 1]")
        if self.mask_morph not in ("erode", "dilate"):
            raise ValueError(f"mask_morph must be 'erode' or 'dilate', got {self.mask_morph!r}")


def canonical_order(keypoints: Sequence[Sequence[float]]) -> list[int]:
    """Indices sorted by projected keypoint (y, x)."""
    return sorted(range(len(keypoints)), key=lambda i: (round(keypoints[i][1], 9), round(keypoints[i][0], 9), i))


def posed_keypoint(component: Component, pose: Pose) -> np.ndarray:
    """World keypoint (grid units) of a posed component, tie-break applied after rotation."""
    kp, _ = component_keypoint(component, pose.rotation)
    return kp + np.asarray(pose.translation)


def oracle_detect(
    base: VoxelWorld,
    additions: Sequence[tuple[Component, Pose]],
    cam: CameraParams,
    scene: Optional[Raster] = None,
) -> StepObservation:
    """Exact observations of ``additions`` placed on top of ``base``.

    Masks are occlusion-clipped: a pixel belongs to an addition only where it
    is the first hit in the complete target scene.
    """
    world = base.copy()
    ids = [world.place(c, p, require_connection=False) for c, p in additions]
    if scene is None:
        scene = rasterize(cam, world)
    grouped: dict[str, list[tuple[Component, Pose, int]]] = {}
    for (c, p), iid in zip(additions, ids):
        grouped.setdefault(c.name, []).append((c, p, iid))
    obs = StepObservation(image_shape=(cam.height, cam.width))
    for name in sorted(grouped):
        dets = []
        for c, p, iid in grouped[name]:
            kp = project(cam, posed_keypoint(c, p))
            rot = symmetry_encode(c, p.rotation) if c.is_primitive else None
            dets.append(Detection((float(kp[0]), float(kp[1])), scene.ids == iid, rot))
        order = canonical_order([d.keypoint for d in dets])
        obs.detections[name] = [dets[i] for i in order]
    return obs


def _morph(mask: np.ndarray, radius: int, op: str) -> np.ndarray:
    if radius == 0 or not mask.any():
        return mask.copy()
    y, x = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    disk = x * x + y * y <= radius * radius
    f = ndimage.binary_erosion if op == "erode" else ndimage.binary_dilation
    return f(mask, structure=disk)


def noisy_detect(obs: StepObservation, spec: NoiseSpec, rng: Optional[np.random.Generator] = None) -> StepObservation:
    """Seeded perturbation of an observation; zero noise returns an exact copy."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    out = StepObservation(image_shape=obs.image_shape)
    for name in sorted(obs.detections):
        dets = []
        for d in obs.detections[name]:
            dx, dy = rng.normal(0.0, spec.keypoint_sigma, size=2) if spec.keypoint_sigma > 0 else (0.0, 0.0)
            rot = d.rotation_class
            flip = rng.random() < spec.rotation_flip_prob
            if rot is not None and flip:
                order, _ = symmetry_decode(rot)
                family = [c for c in range(7) if symmetry_decode(c)[0] == order and c != rot]
                if family and order in spec.flip_orders:
                    rot = int(family[rng.integers(len(family))])
            mask = _morph(d.mask, spec.mask_morph_radius, spec.mask_morph)
            dets.append(Detection((d.keypoint[0] + dx, d.keypoint[1] + dy), mask, rot))
        order = canonical_order([d.keypoint for d in dets])
        out.detections[name] = [dets[i] for i in order]
    return out


# ---------------------------------------------------------------------------
# JSON with run-length masks


def rle_encode(mask: np.ndarray) -> list[int]:
    """Alternating run lengths over the row-major mask, starting with background."""
    flat = np.asarray(mask, bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return runs


def rle_decode(runs: Sequence[int], shape: tuple[int, int]) -> np.ndarray:
    flat = np.zeros(shape[0] * shape[1], bool)
    pos, val = 0, False
    for n in runs:
        if val:
            flat[pos:pos + n] = True
        pos += n
        val = not val
    if pos != flat.size:
        raise ValueError(f"run lengths cover {pos} pixels, expected {flat.size}")
    return flat.reshape(shape)


def observation_to_json(obs: StepObservation) -> dict:
    return {
        "schema": 1,
        "shape": list(obs.image_shape),
        "detections": {
            name: [
                {"kp": list(d.keypoint), "mask_rle": rle_encode(d.mask), "rot": d.rotation_class}
                for d in dets
            ]
            for name, dets in obs.detections.items()
        },
    }


def observation_from_json(d: dict) -> StepObservation:
    if d.get("schema") != 1:
        raise ValueError(f"unsupported observation schema {d.get('schema')!r}")
    shape = tuple(d["shape"])
    obs = StepObservation(image_shape=shape)
    for name, dets in d["detections"].items():
        obs.detections[name] = [
            Detection(tuple(x["kp"]), rle_decode(x["mask_rle"], shape), x.get("rot")) for x in dets
        ]
    return obs


def save_observation(obs: StepObservation, path) -> None:
    Path(path).write_text(json.dumps(observation_to_json(obs)))


def load_observation(path) -> StepObservation:
    return observation_from_json(json.loads(Path(path).read_text()))
