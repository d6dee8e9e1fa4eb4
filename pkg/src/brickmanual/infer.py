"""Second stage: 3D poses from 2D observations.

Translations come from matching a component's projected anti-studs against
the base's projected studs (and the reverse pairing for components that hook
underneath an overhang); every match implies one lattice translation and
matches vote.  Submodule rotations are chosen by rendering each candidate in
the scene and keeping the best mask IoU.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .camera import CameraParams, Raster, draw_boxes, occluded_mask, project, project_offset, rasterize, render_boxes
from .catalog import HU, Component, Pose, Shape, reduced_rotations, symmetry_decode
from .detector import StepObservation
from .world import VoxelWorld

TAU_FACTOR = 0.35
RANKINGS = ("reproj", "votes")
DELTAS = (0.0, -0.5, 0.5, -1.0, 1.0)


class NoCandidate(Exception):
    """No lattice translation is consistent with the observation."""


@dataclass(frozen=True)
class TranslationCandidate:
    translation: tuple[float, float, float]
    votes: int
    reproj_err: float

    @property
    def hu(self) -> tuple[int, int, int]:
        return tuple(int(round(v * HU)) for v in self.translation)


@dataclass(frozen=True)
class PoseHypothesis:
    pose: Pose
    iou: Optional[float]
    topmost_choice: int = 0
    votes: int = 0
    reproj_err: float = 0.0


def default_tau(cam: CameraParams) -> float:
    return TAU_FACTOR * cam.s


# ---------------------------------------------------------------------------
# connector geometry


def _covered(voxels: set, x: int, y: int, z: int) -> bool:
    return any((x + dx, y, z + dz) in voxels for dx in (-1, 0) for dz in (-1, 0))


def exposed_connectors(shape: Shape) -> tuple[np.ndarray, np.ndarray]:
    """Studs and anti-studs of a shape that its own voxels do not cover."""
    vox = set(map(tuple, shape.voxels.tolist()))
    studs = [s for s in shape.studs.tolist() if not _covered(vox, s[0], s[1], s[2])]
    antis = [a for a in shape.anti_studs.tolist() if not _covered(vox, a[0], a[1] - 1, a[2])]
    return np.asarray(studs, np.int64).reshape(-1, 3), np.asarray(antis, np.int64).reshape(-1, 3)


def antistud_offsets_2d(c: Component, r: int, cam: CameraParams, keypoint_choice: int = 0) -> np.ndarray:
    """Image offsets from the keypoint to each anti-stud of ``c`` rotated by ``r``."""
    shape = c.shape.rotated(r)
    kp = shape.keypoints_hu()[keypoint_choice]
    return project_offset(cam, (shape.anti_studs - kp) / HU)


@dataclass
class BaseConnectors:
    """Free connectors of a base world and their projections, computed once per world state."""

    studs: np.ndarray
    antis: np.ndarray
    studs_2d: np.ndarray
    antis_2d: np.ndarray

    @classmethod
    def of(cls, base: VoxelWorld, cam: CameraParams) -> "BaseConnectors":
        studs, _ = base.free_studs_hu()
        antis, _ = base.free_anti_studs_hu()
        studs = studs[np.lexsort(studs.T[::-1])] if len(studs) else studs
        antis = antis[np.lexsort(antis.T[::-1])] if len(antis) else antis
        return cls(studs, antis, project(cam, studs / HU).reshape(-1, 2), project(cam, antis / HU).reshape(-1, 2))


def _nearest_within(query: np.ndarray, targets: np.ndarray, tau: float):
    """For each query point, index of the nearest target within tau (or -1)."""
    if len(query) == 0 or len(targets) == 0:
        return np.full(len(query), -1)
    d = np.linalg.norm(query[:, None, :] - targets[None, :, :], axis=2)
    j = d.argmin(axis=1)
    j[d[np.arange(len(query)), j] > tau] = -1
    return j


# ---------------------------------------------------------------------------
# translation


def _ground_candidates(
    keypoint, shape: Shape, kp_hu: np.ndarray, base: VoxelWorld, cam: CameraParams, tau: float
) -> list[TranslationCandidate]:
    v = shape.voxels
    vmin, vmax = v.min(axis=0), v.max(axis=0)
    dims = np.asarray(base.dims)
    xs = np.arange(-vmin[0], dims[0] - vmax[0])
    zs = np.arange(-vmin[2], dims[2] - vmax[2])
    ty = -int(vmin[1])
    if len(xs) == 0 or len(zs) == 0 or vmax[1] + ty >= dims[1]:
        return []
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    T = np.stack([X.ravel(), np.full(X.size, ty), Z.ravel()], axis=1)
    p = project(cam, (kp_hu + T) / HU)
    err = np.round(np.linalg.norm(p - np.asarray(keypoint, float), axis=1), 9)
    order = np.lexsort((T[:, 2], T[:, 1], T[:, 0], err))
    keep = err[order] <= max(tau, err[order[0]])
    _, antis = exposed_connectors(shape)
    votes = max(int((antis[:, 1] == vmin[1]).sum()), 1)
    out = []
    for i in order[keep]:
        t = T[i]
        cand = TranslationCandidate(tuple(float(x) / HU for x in t), votes, float(err[i]))
        out.append(cand)
    return out


def infer_translation(
    keypoint: Sequence[float],
    c: Component,
    r: int,
    base: VoxelWorld,
    cam: CameraParams,
    keypoint_choice: int = 0,
    tau: Optional[float] = None,
    connectors: Optional[BaseConnectors] = None,
    ranking: str = "reproj",
) -> list[TranslationCandidate]:
    """Ranked lattice translations for ``c`` at rotation ``r`` given its observed keypoint.

    ``ranking="reproj"`` orders by keypoint reprojection error, then votes,
    then lexicographic translation.  ``ranking="votes"`` puts votes first.
    Reprojection comes first by default because lattice offsets nearly
    parallel to the viewing ray (for instance (-3.5, -2, 3.5) at yaw 225,
    pitch 22) project to a few thousandths of a pixel: a deeper placement with
    more studs under it can then outvote the true one while only an exact
    keypoint tells them apart.  On an empty base the ground plane is searched
    instead and the ranking is by reprojection error alone.
    """
    if ranking not in RANKINGS:
        raise ValueError(f"ranking must be one of {RANKINGS}, got {ranking!r}")
    tau = default_tau(cam) if tau is None else tau
    keypoint = np.asarray(keypoint, float)
    shape = c.shape.rotated(r)
    kp_hu = shape.keypoints_hu()[keypoint_choice]
    if base.is_empty():
        cands = _ground_candidates(keypoint, shape, kp_hu, base, cam, tau)
        if not cands:
            raise NoCandidate(f"{c.name}: no ground position fits the world")
        return cands

    conn = BaseConnectors.of(base, cam) if connectors is None else connectors
    studs, antis = exposed_connectors(shape)
    votes: dict[tuple, int] = {}
    # component anti-studs onto base studs
    a2d = keypoint + project_offset(cam, (antis - kp_hu) / HU).reshape(-1, 2)
    for a, j in zip(antis, _nearest_within(a2d, conn.studs_2d, tau)):
        if j >= 0:
            t = tuple((conn.studs[j] - a).tolist())
            votes[t] = votes.get(t, 0) + 1
    # component studs into base anti-studs (hooking under an overhang)
    s2d = keypoint + project_offset(cam, (studs - kp_hu) / HU).reshape(-1, 2)
    for s, j in zip(studs, _nearest_within(s2d, conn.antis_2d, tau)):
        if j >= 0:
            t = tuple((conn.antis[j] - s).tolist())
            votes[t] = votes.get(t, 0) + 1
    if not votes:
        raise NoCandidate(f"{c.name}: no stud within {tau:.3g} px of any projected connector")

    p0 = project(cam, kp_hu / HU)
    out = []
    for t, n in votes.items():
        pose = Pose.from_hu(t, r)
        if not base.can_place(c, pose, require_connection=True):
            continue
        err = float(np.linalg.norm(p0 + project_offset(cam, np.asarray(t) / HU) - keypoint))
        out.append(TranslationCandidate(pose.translation, n, round(err, 9)))
    if not out:
        raise NoCandidate(f"{c.name}: every matched translation collides or leaves the world")
    if ranking == "votes":
        out.sort(key=lambda k: (-k.votes, k.reproj_err, k.hu))
    else:
        out.sort(key=lambda k: (k.reproj_err, -k.votes, k.hu))
    return out


# ---------------------------------------------------------------------------
# rotation by synthesis


def mask_iou(obs: np.ndarray, region, mask: np.ndarray) -> float:
    """IoU between a full-frame observed mask and a windowed hypothesis mask."""
    n_obs = int(obs.sum())
    if region is None:
        return 0.0
    r0, r1, c0, c1 = region
    n_hyp = int(mask.sum())
    inter = int((obs[r0:r1, c0:c1] & mask).sum())
    union = n_obs + n_hyp - inter
    return inter / union if union else 0.0


def _synthesis_candidates(c: Component, keypoint, base, cam, tau, connectors, rotations, ranking):
    for r in rotations:
        n_alt = len(c.shape.rotated(r).keypoints_hu())
        for k in range(n_alt):
            try:
                cands = infer_translation(keypoint, c, r, base, cam, k, tau, connectors, ranking)
            except NoCandidate:
                continue
            for cand in cands:
                yield r, k, cand


def infer_rotation_by_synthesis(
    c: Component,
    keypoint: Sequence[float],
    obs_mask: np.ndarray,
    base: VoxelWorld,
    cam: CameraParams,
    scene: Optional[Raster] = None,
    tau: Optional[float] = None,
    connectors: Optional[BaseConnectors] = None,
    rotations: Optional[Sequence[int]] = None,
    ranking: str = "reproj",
) -> PoseHypothesis:
    """Best pose over rotations, topmost-brick choices and translation candidates, by mask IoU.

    ``scene`` is the raster of ``base``; each hypothesis is rendered behind
    whatever of the base is nearer the camera.  Equal IoU falls back to the
    translation ranking (reprojection error and votes, in ``ranking`` order),
    then lexicographic pose.
    """
    tau = default_tau(cam) if tau is None else tau
    scene = rasterize(cam, base) if scene is None else scene
    if connectors is None and not base.is_empty():
        connectors = BaseConnectors.of(base, cam)
    rotations = reduced_rotations(c.symmetry_order) if rotations is None else rotations
    best, best_key = None, None
    for r, k, cand in _synthesis_candidates(c, keypoint, base, cam, tau, connectors, rotations, ranking):
        pose = Pose(cand.translation, r)
        boxes = render_boxes(c.shape.posed(pose))
        res = occluded_mask(cam, scene, boxes)
        iou = mask_iou(obs_mask, *(res if res is not None else (None, None)))
        tie = (-cand.votes, cand.reproj_err) if ranking == "votes" else (cand.reproj_err, -cand.votes)
        key = (-round(iou, 12), *tie, pose.translation, r, k)
        if best_key is None or key < best_key:
            best_key = key
            best = PoseHypothesis(pose, iou, k, cand.votes, cand.reproj_err)
    if best is None:
        raise NoCandidate(f"{c.name}: no rotation admits a translation candidate")
    return best


# ---------------------------------------------------------------------------
# one step


@dataclass
class DetectionResult:
    type_id: str
    keypoint: tuple[float, float]
    pose: Optional[Pose] = None
    votes: Optional[int] = None
    iou: Optional[float] = None
    error: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "type": self.type_id,
            "kp": [float(v) for v in self.keypoint],
            "pose": self.pose.to_json() if self.pose else None,
            "votes": self.votes,
            "iou": self.iou,
            "error": self.error,
        }


@dataclass
class StepInference:
    results: list[DetectionResult] = field(default_factory=list)
    placed: list[tuple[Component, Pose]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.pose is not None for r in self.results)

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "detections": [r.to_json() for r in self.results],
            "status": "ok" if self.ok else "failed",
        }


def _hypothesis(c, det, scratch, cam, scene, tau, conn, fixed_r: Optional[int], ranking: str) -> PoseHypothesis:
    r = fixed_r
    if det.rotation_class is not None:
        _, r = symmetry_decode(det.rotation_class)
    if r is None:
        return infer_rotation_by_synthesis(c, det.keypoint, det.mask, scratch, cam, scene, tau, conn, ranking=ranking)
    cand = infer_translation(det.keypoint, c, r, scratch, cam, 0, tau, conn, ranking)[0]
    return PoseHypothesis(Pose(cand.translation, r), None, 0, cand.votes, cand.reproj_err)


def infer_step_report(
    obs: StepObservation,
    base: VoxelWorld,
    components: dict[str, Component],
    cam: CameraParams,
    counts: Optional[dict[str, int]] = None,
    tau: Optional[float] = None,
    synthesis: bool = True,
    rng: Optional[np.random.Generator] = None,
    ranking: str = "reproj",
) -> StepInference:
    """Infer every detection of a step, committing the most certain one first.

    Each round computes the best hypothesis of every pending detection against
    the scratch world (base plus poses accepted so far) and accepts the one
    with the smallest keypoint reprojection error; ties go to primitives
    before submodules, then type name, then canonical detection order.  This
    lets a component stacked on a same-step component wait for its support.
    """
    if counts is not None and obs.counts() != dict(counts):
        raise ValueError(f"detection counts {obs.counts()} differ from declared {dict(counts)}")
    tau = default_tau(cam) if tau is None else tau
    rng = np.random.default_rng(0) if rng is None else rng
    names = sorted(obs.detections, key=lambda n: (not components[n].is_primitive, n))
    pending = [(n, i) for n in names for i in range(len(obs.detections[n]))]
    rank = {key: j for j, key in enumerate(pending)}
    results = {key: DetectionResult(key[0], tuple(obs.detections[key[0]][key[1]].keypoint)) for key in pending}
    scratch = base.copy()
    scene = rasterize(cam, scratch)
    out = StepInference()
    # random rotations are drawn once per detection so retries do not consume the stream
    fixed_r = {key: int(rng.integers(4)) for key in pending} if not synthesis else {}

    while pending:
        conn = None if scratch.is_empty() else BaseConnectors.of(scratch, cam)
        best, best_key = None, None
        for key in pending:
            c = components[key[0]]
            det = obs.detections[key[0]][key[1]]
            try:
                hyp = _hypothesis(c, det, scratch, cam, scene, tau, conn, fixed_r.get(key), ranking)
            except NoCandidate as e:
                results[key].error = str(e)
                continue
            results[key].error = None
            k = (round(hyp.reproj_err, 9), rank[key])
            if best_key is None or k < best_key:
                best, best_key = (key, hyp), k
        if best is None:
            break
        key, hyp = best
        c = components[key[0]]
        iid = scratch.place(c, hyp.pose, require_connection=True)
        boxes = render_boxes(scratch.instances[iid].shape)
        draw_boxes(cam, scene, boxes, [iid] * len(boxes))
        res = results[key]
        res.pose, res.votes, res.iou, res.error = hyp.pose, hyp.votes, hyp.iou, None
        out.placed.append((c, hyp.pose))
        pending.remove(key)

    out.results = [results[key] for key in sorted(results, key=rank.get)]
    return out


def infer_step(
    obs: StepObservation,
    base: VoxelWorld,
    components: dict[str, Component],
    cam: CameraParams,
    counts: Optional[dict[str, int]] = None,
    **kw,
) -> list[tuple[Component, Pose]]:
    """Poses for all detections of a step; failed detections are left out."""
    return infer_step_report(obs, base, components, cam, counts, **kw).placed


# ---------------------------------------------------------------------------
# baselines


def round_half(x) -> np.ndarray:
    """Round to the nearest multiple of 0.5, halves going up."""
    return np.floor(np.asarray(x, float) * 2 + 0.5) / 2


def quantize_pose_baseline(raw: Sequence[float], c: Component, r: int, base: VoxelWorld) -> Pose:
    """Snap a continuous translation to the closest valid lattice pose nearby.

    The rounded translation is displaced by every combination of the offsets
    in ``DELTAS``; the valid candidate nearest the rounded point wins, earlier
    offsets in ``DELTAS`` order breaking ties.  With no valid candidate the
    rounded pose is returned.
    """
    t0 = round_half(raw)
    best, best_d = None, None
    for d in itertools.product(DELTAS, repeat=3):
        pose = Pose(tuple(t0 + d), r)
        dist = d[0] ** 2 + d[1] ** 2 + d[2] ** 2
        if best_d is not None and dist >= best_d:
            continue
        if base.can_place(c, pose, require_connection=True):
            best, best_d = pose, dist
    return best if best is not None else Pose(tuple(t0), r)


def craft_candidates(base: VoxelWorld) -> np.ndarray:
    """Empty unit cells on the ground or face-adjacent to an occupied unit cell, sorted."""
    occ = base.cells[::HU, ::HU, ::HU] >= 0
    dims = np.asarray(occ.shape)
    full = np.argwhere(occ)
    steps = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
    near = (full[:, None, :] + steps[None]).reshape(-1, 3)
    near = near[((near >= 0) & (near < dims)).all(axis=1)]
    cand = np.zeros(occ.shape, bool)
    cand[:, 0, :] = True
    cand[near[:, 0], near[:, 1], near[:, 2]] = True
    return np.argwhere(cand & ~occ)


def craft_infer_translation(keypoint: Sequence[float], base: VoxelWorld, cam: CameraParams) -> tuple[int, int, int]:
    """Unit cell whose projected centre lies nearest the keypoint; ties lexicographic."""
    cells = craft_candidates(base)
    if len(cells) == 0:
        raise NoCandidate("no free cell on the ground or next to a brick")
    p = project(cam, cells + 0.5)
    d = np.round(np.linalg.norm(p - np.asarray(keypoint, float), axis=1), 9)
    i = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0], d))[0]
    return tuple(int(v) for v in cells[i])
