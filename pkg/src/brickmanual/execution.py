"""Running plans and scoring predicted poses against the ground truth."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .catalog import HU, Component, CompositionError, Pose, rotations_equivalent
from .detector import NoiseSpec, StepObservation, load_observation, noisy_detect, oracle_detect
from .infer import infer_step_report
from .mangen import AssemblyPlan, StepSpec, submodule_from_world
from .world import PlacementError, VoxelWorld

CHAMFER_SCALE = 1e5
MODES = ("autoregressive", "teacher")


class CountMismatch(ValueError):
    pass


class EmptyShape(ValueError):
    pass


# ---------------------------------------------------------------------------
# pose accuracy


def match_poses(
    pred: Sequence[tuple[Component, Pose]], gt: Sequence[tuple[Component, Pose]]
) -> list[bool]:
    """Correctness of each ground-truth component after optimal same-name matching.

    A pair is correct when translations agree exactly, rotations agree up to
    the ground truth's symmetry and both have the same shape.  Components of
    one name are paired to maximise the number of correct pairs, then to
    minimise total L1 translation distance; ranking correctness first keeps
    the result independent of input order when translations tie.  Unmatched
    ground-truth components count as wrong.
    """
    ok = [False] * len(gt)
    names = sorted({c.name for c, _ in gt})
    for name in names:
        gi = [i for i, (c, _) in enumerate(gt) if c.name == name]
        pi = [i for i, (c, _) in enumerate(pred) if c.name == name]
        if not pi:
            continue
        good = np.array([[_pair_correct(pred[p], gt[g]) for p in pi] for g in gi])
        dist = np.array(
            [[np.abs(np.subtract(pred[p][1].translation, gt[g][1].translation)).sum() for p in pi] for g in gi]
        )
        cost = (~good) * (dist.sum() + 1.0) + dist
        rows, cols = linear_sum_assignment(cost)
        for r, k in zip(rows, cols):
            ok[gi[r]] = bool(good[r, k])
    return ok


def _pair_correct(pred: tuple[Component, Pose], gt: tuple[Component, Pose]) -> bool:
    (pc, pp), (gc, gp) = pred, gt
    return (
        pp.hu == gp.hu
        and rotations_equivalent(pp.rotation, gp.rotation, gc.symmetry_order)
        and (pc is gc or pc.shape.same_as(gc.shape))
    )


def pose_accuracy(
    pred: Sequence[tuple[Component, Pose]], gt: Sequence[tuple[Component, Pose]]
) -> tuple[float, bool]:
    """(componentwise fraction correct, whole step correct)."""
    count = lambda xs: sorted(c.name for c, _ in xs)  # noqa: E731
    if count(pred) != count(gt):
        raise CountMismatch(f"predicted components {count(pred)} differ from ground truth {count(gt)}")
    if not gt:
        return 1.0, True
    ok = match_poses(pred, gt)
    return sum(ok) / len(ok), all(ok)


# ---------------------------------------------------------------------------
# Chamfer distance


def _voxels(shape_like) -> np.ndarray:
    if isinstance(shape_like, VoxelWorld):
        return shape_like.occupied()
    return np.asarray(shape_like, np.int64).reshape(-1, 3)


def boundary_faces(voxels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exposed voxel faces as (cell, direction) rows; direction indexes +-x, +-y, +-z."""
    occ = set(map(tuple, voxels.tolist()))
    cells, dirs = [], []
    steps = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
    for v in sorted(occ):
        for d, s in enumerate(steps):
            if (v[0] + s[0], v[1] + s[1], v[2] + s[2]) not in occ:
                cells.append(v)
                dirs.append(d)
    return np.asarray(cells, np.int64).reshape(-1, 3), np.asarray(dirs, np.int64)


def sample_surface_points(voxels, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples (grid units) on the boundary of a voxel union; all faces have equal area."""
    cells, dirs = boundary_faces(_voxels(voxels))
    if len(cells) == 0:
        raise EmptyShape("cannot sample an empty shape")
    pick = rng.integers(len(cells), size=n)
    uv = rng.random((n, 2))
    axis = dirs[pick] // 2
    side = 1 - dirs[pick] % 2  # + faces sit on the far side of the cell
    pts = cells[pick].astype(float)
    for a in range(3):
        on = axis == a
        others = [b for b in range(3) if b != a]
        pts[on, a] += side[on]
        pts[on, others[0]] += uv[on, 0]
        pts[on, others[1]] += uv[on, 1]
    return pts / HU


def _bbox(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return v.min(axis=0) / HU, (v.max(axis=0) + 1) / HU


def normalize_points(p: np.ndarray, lo, hi) -> np.ndarray:
    """Map the box lo..hi into the unit cube, keeping the aspect ratio."""
    return (p - np.asarray(lo)) / float(np.max(np.asarray(hi) - np.asarray(lo)))


@dataclass(frozen=True)
class ChamferResult:
    squared: float
    unsquared: float

    @property
    def scaled(self) -> float:
        return self.squared * CHAMFER_SCALE


def chamfer_points(pa: np.ndarray, pb: np.ndarray) -> ChamferResult:
    """Sum of the two directional mean nearest-neighbour distances."""
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return ChamferResult(float(np.mean(da**2) + np.mean(db**2)), float(np.mean(da) + np.mean(db)))


def chamfer_full(a, b, n_points: int = 10000, seed: int = 0, reference: str = "union") -> ChamferResult:
    """Chamfer distance between two voxel shapes after normalising to a unit cube.

    ``reference`` picks the box mapped to the unit cube: ``"union"`` (both
    shapes, keeps the metric symmetric), ``"a"`` or ``"b"``.  Both sides
    are sampled from generators seeded identically, so identical shapes give
    identical samples and exactly zero.
    """
    va, vb = _voxels(a), _voxels(b)
    if len(va) == 0 and len(vb) == 0:
        return ChamferResult(0.0, 0.0)
    if len(va) == 0 or len(vb) == 0:
        raise EmptyShape("Chamfer distance between an empty and a nonempty shape")
    if reference == "union":
        lo, hi = _bbox(np.concatenate([va, vb]))
    elif reference in ("a", "b"):
        lo, hi = _bbox(va if reference == "a" else vb)
    else:
        raise ValueError(f"unknown reference {reference!r}")
    pa = normalize_points(sample_surface_points(va, n_points, np.random.default_rng(seed)), lo, hi)
    pb = normalize_points(sample_surface_points(vb, n_points, np.random.default_rng(seed)), lo, hi)
    return chamfer_points(pa, pb)


def chamfer(a, b, n_points: int = 10000, seed: int = 0, reference: str = "union") -> float:
    """Squared Chamfer distance, unscaled (multiply by CHAMFER_SCALE for reporting)."""
    return chamfer_full(a, b, n_points, seed, reference).squared


# ---------------------------------------------------------------------------
# pose sources


PoseSource = Callable[..., tuple[list[tuple[Component, Pose]], list[str]]]


def ground_truth_source(plan, step, base, gt_before, components):
    return [(components.get(c.name) or c, p) for c, p in step.additions], []


def _step_seed(seed: int, step_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(step_id.encode())]))


@dataclass
class InferenceSource:
    """Stage-1 observations (oracle, noisy, or loaded from files) fed to infer_step."""

    detector: str = "oracle"  # oracle | noisy | file
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    synthesis: bool = True
    ranking: str = "reproj"
    seed: int = 0
    obs_dir: Optional[str] = None
    tau: Optional[float] = None
    reports: dict = field(default_factory=dict, repr=False, compare=False)  # step id -> StepInference

    def __post_init__(self):
        if self.detector not in ("oracle", "noisy", "file"):
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.detector == "file" and self.obs_dir is None:
            raise ValueError("file detector needs obs_dir")

    def observe(self, plan: AssemblyPlan, step: StepSpec, gt_before: VoxelWorld) -> StepObservation:
        if self.detector == "file":
            return load_observation(Path(self.obs_dir) / "steps" / f"{step.id}.obs.json")
        obs = oracle_detect(gt_before, step.additions, plan.camera)
        if self.detector == "noisy":
            obs = noisy_detect(obs, self.noise, _step_seed(self.noise.seed, step.id))
        return obs

    def __call__(self, plan, step, base, gt_before, components):
        obs = self.observe(plan, step, gt_before)
        comps, errors = {}, []
        gt_comps = {c.name: c for c, _ in step.additions}
        for name in obs.detections:
            c = components.get(name, gt_comps.get(name))
            if c is None:
                errors.append(f"{name}: component unavailable")
            else:
                comps[name] = c
        missing = set(obs.detections) - set(comps)
        for name in missing:
            del obs.detections[name]
        rep = infer_step_report(
            obs, base, comps, plan.camera, tau=self.tau, synthesis=self.synthesis,
            rng=_step_seed(self.seed, step.id), ranking=self.ranking,
        )
        self.reports[step.id] = rep
        errors += [f"{r.type_id}: {r.error}" for r in rep.results if r.error]
        return rep.placed, errors


# ---------------------------------------------------------------------------
# plan execution


@dataclass
class StepResult:
    id: str
    plan: str
    correct: list[bool]
    predicted: list[tuple[Component, Pose]]
    errors: list[str] = field(default_factory=list)
    component_cd: list[float] = field(default_factory=list)
    step_cd: float = 0.0

    @property
    def ok(self) -> bool:
        return all(self.correct) and not self.errors

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "plan": self.plan,
            "status": "ok" if self.ok else ("failed" if self.errors else "wrong"),
            "correct": self.correct,
            "predicted": [{"component": c.name, **p.to_json()} for c, p in self.predicted],
            "errors": self.errors,
            "component_cd": self.component_cd,
            "step_cd": self.step_cd,
        }


@dataclass
class ExecutionReport:
    mode: str
    steps: list[StepResult]
    final_world: VoxelWorld
    gt_world: VoxelWorld
    setwise_cd: Optional[float] = None

    @property
    def componentwise_acc(self) -> float:
        flags = [f for s in self.steps for f in s.correct]
        return sum(flags) / len(flags) if flags else 1.0

    @property
    def stepwise_acc(self) -> float:
        return sum(s.ok for s in self.steps) / len(self.steps) if self.steps else 1.0

    @property
    def mtc(self) -> Optional[float]:
        """Share of steps with any wrong pose; defined under teacher forcing."""
        if self.mode != "teacher":
            return None
        return 1.0 - self.stepwise_acc

    @property
    def componentwise_cd(self) -> float:
        cds = [d for s in self.steps for d in s.component_cd]
        return float(np.mean(cds)) if cds else 0.0

    @property
    def stepwise_cd(self) -> float:
        return float(np.mean([s.step_cd for s in self.steps])) if self.steps else 0.0

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "mode": self.mode,
            "componentwise_acc": self.componentwise_acc,
            "stepwise_acc": self.stepwise_acc,
            "componentwise_cd": self.componentwise_cd * CHAMFER_SCALE,
            "stepwise_cd": self.stepwise_cd * CHAMFER_SCALE,
            "setwise_cd": None if self.setwise_cd is None else self.setwise_cd * CHAMFER_SCALE,
            "mtc": self.mtc,
            "steps": [s.to_json() for s in self.steps],
        }


def _shape_voxels(items: Sequence[tuple[Component, Pose]]) -> np.ndarray:
    if not items:
        return np.zeros((0, 3), np.int64)
    return np.concatenate([c.shape.posed(p).voxels for c, p in items])


def _same_voxels(a: np.ndarray, b: np.ndarray) -> bool:
    return len(a) == len(b) and set(map(tuple, a.tolist())) == set(map(tuple, b.tolist()))


def _cd(a: np.ndarray, b: np.ndarray, n_points: int, seed: int) -> float:
    if _same_voxels(a, b):
        return 0.0  # identical shapes with mirrored samples
    if len(a) == 0 or len(b) == 0:
        return float("nan")
    return chamfer(a, b, n_points, seed)


def _score_step(pred, gt, n_points: int, seed: int) -> tuple[list[bool], list[float], float]:
    correct = match_poses(pred, gt)
    comp_cd = []
    for name in sorted({c.name for c, _ in gt}):
        g = [x for x in gt if x[0].name == name]
        p = [x for x in pred if x[0].name == name]
        for gi in g:
            # nearest predicted instance of the same name by voxel-set Chamfer
            best = min((_cd(_shape_voxels([pi]), _shape_voxels([gi]), n_points, seed) for pi in p), default=float("nan"))
            comp_cd.append(best)
    step_cd = _cd(_shape_voxels(pred), _shape_voxels(gt), n_points, seed)
    return correct, comp_cd, step_cd


def execute_plan(
    plan: AssemblyPlan,
    source: PoseSource = ground_truth_source,
    mode: str = "autoregressive",
    n_points: int = 10000,
    seed: int = 0,
    score_chamfer: bool = True,
) -> ExecutionReport:
    """Run every step of ``plan`` (sub-plans first) with poses from ``source``.

    Autoregressive mode feeds each step the predicted world so far and builds
    submodules from their own predicted sub-plans; teacher mode feeds the
    ground-truth world and submodules.  Placement failures are recorded and
    the offending component skipped.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    steps: list[StepResult] = []
    components: dict[str, Optional[Component]] = {}
    for name, sub in sorted(plan.submodules.items()):
        sub_rep = execute_plan(sub, source, mode, n_points, seed, score_chamfer)
        steps.extend(sub_rep.steps)
        if mode == "teacher":
            components[name] = plan.components[name]
        else:
            try:
                components[name] = submodule_from_world(name, sub_rep.final_world)
            except (CompositionError, ValueError):
                components[name] = None
    avail = {k: v for k, v in components.items() if v is not None}
    missing = {k for k, v in components.items() if v is None}

    gt_world = VoxelWorld(plan.dims)
    pred_world = VoxelWorld(plan.dims)
    for step in plan.steps:
        gt_before = gt_world.copy()
        base = gt_before if mode == "teacher" else pred_world
        errors = [f"{n}: sub-plan did not yield a valid submodule" for n in sorted(missing) if n in step.counts()]
        pred, errs = source(plan, step, base.copy(), gt_before, avail)
        errors += errs
        placed = []
        target = pred_world if mode == "autoregressive" else base.copy()
        for c, p in pred:
            try:
                target.place(c, p, require_connection=True)
                placed.append((c, p))
            except PlacementError as e:
                errors.append(f"{c.name}: {e}")
        if score_chamfer:
            correct, comp_cd, step_cd = _score_step(placed, step.additions, n_points, seed)
        else:
            correct, comp_cd, step_cd = match_poses(placed, step.additions), [], 0.0
        steps.append(StepResult(step.id, plan.name, correct, placed, errors, comp_cd, step_cd))
        for c, p in step.additions:
            gt_world.place(c, p, require_connection=False)

    final = pred_world if mode == "autoregressive" else gt_world
    setwise = None
    if mode == "autoregressive" and score_chamfer:
        setwise = _cd(final.occupied(), gt_world.occupied(), n_points, seed)
    return ExecutionReport(mode, steps, final, gt_world, setwise)


def evaluate_plan(plan: AssemblyPlan, source: PoseSource = ground_truth_source, n_points: int = 10000, seed: int = 0) -> dict:
    """Table-style metrics: teacher-forced accuracies, Chamfer and MTC plus autoregressive setwise Chamfer."""
    teacher = execute_plan(plan, source, "teacher", n_points, seed)
    auto = execute_plan(plan, source, "autoregressive", n_points, seed)
    return {
        "schema": 1,
        "componentwise_acc": teacher.componentwise_acc,
        "stepwise_acc": teacher.stepwise_acc,
        "componentwise_cd": teacher.componentwise_cd * CHAMFER_SCALE,
        "stepwise_cd": teacher.stepwise_cd * CHAMFER_SCALE,
        "setwise_cd": auto.setwise_cd * CHAMFER_SCALE,
        "mtc": teacher.mtc,
        "steps": len(teacher.steps),
    }
