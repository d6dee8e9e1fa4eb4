"""Synthetic manuals: build a random model forward, then take it apart into steps.

The forward stage cuts a random bounding box into smaller boxes and fills
each with bricks dropped from above.  The backward stage repeatedly lifts off
a chunk of removable, visible components; read in reverse the chunks are the
manual's steps.  Submodules get their own sub-manuals.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .camera import CameraParams, center_camera, render_manual, write_png
from .catalog import (
    HU,
    Catalog,
    Component,
    CompositionError,
    Pose,
    catalog_to_json,
    default_catalog,
    parse_catalog,
)
from .detector import oracle_detect, save_observation
from .world import (
    DEFAULT_DIMS,
    PlacementError,
    VoxelWorld,
    removable,
    removable_visible,
    visibility_cameras,
    world_to_json,
)

log = logging.getLogger(__name__)


class GenerationExhausted(RuntimeError):
    def __init__(self, seed, what: str):
        super().__init__(f"generation budget exhausted ({what}); seed {seed}")
        self.seed = seed


class PlanError(ValueError):
    """A plan that does not replay or breaks a chunk limit."""


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    length: tuple[int, int] = (4, 8)  # bbox x extent, grid units, inclusive range
    width: tuple[int, int] = (4, 8)
    height: tuple[int, int] = (2, 5)
    min_box: int = 2
    fill_attempts: int = 10
    edge_grow_prob: float = 0.5
    # single primitive, random-stacked submodule, repeated stack of one primitive
    strategy_weights: tuple[float, float, float] = (0.6, 0.15, 0.25)
    submodule_reuse: float = 0.5
    submodule_box: int = 3
    submodule_parts: tuple[int, int] = (2, 4)
    submodule_height: int = 3
    stack_count: tuple[int, int] = (2, 3)
    max_instances: int = 10
    max_types: int = 5
    chunk_radius: float = 2.5
    visibility_threshold: float = 0.5
    scale_range: tuple[float, float] = (1.0, 5.0)
    pixels_per_unit: float = 8.0
    ndc_jitter: float = 0.1
    roll: float = 0.0
    yaw: tuple[float, float] = (215.0, 235.0)
    pitch: tuple[float, float] = (20.0, 40.0)
    image_size: int = 512
    bridge_attempts: int = 300
    retry_budget: int = 20
    types: Optional[tuple[str, ...]] = None
    dims: tuple[int, int, int] = DEFAULT_DIMS

    def __post_init__(self):
        for name in ("length", "width", "height", "submodule_parts", "stack_count", "scale_range", "yaw", "pitch"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range {lo}..{hi}")
        if min(self.length[0], self.width[0], self.height[0], self.min_box) < 1:
            raise ValueError("box extents must be positive")
        if self.max_instances < 1 or self.max_types < 1 or self.retry_budget < 1:
            raise ValueError("limits must be positive")
        if len(self.strategy_weights) != 3 or min(self.strategy_weights) < 0 or sum(self.strategy_weights) <= 0:
            raise ValueError("strategy_weights needs three nonnegative weights with a positive sum")
        if self.scale_range[0] <= 0:
            raise ValueError("scales must be positive")
        if 2 * max(self.length[1], self.width[1]) > min(self.dims[0], self.dims[2]) or 2 * self.height[1] > self.dims[1]:
            raise ValueError("bounding box does not fit the world")

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, d: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown GenConfig fields: {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# forward stage


def _aligned_pose(c: Component, r: int, x0: int, y: int, z0: int) -> Pose:
    """Pose putting the rotated footprint's min corner at grid cell (x0, z0), bottom at height y (HU)."""
    s = c.shape.rotated(r)
    lo = s.voxels.min(axis=0)
    return Pose.from_hu((HU * x0 - lo[0], y - lo[1], HU * z0 - lo[2]), r)


def _footprint(c: Component, r: int) -> tuple[int, int]:
    lo, hi = c.shape.rotated(r).bbox
    return int(hi[0] - lo[0]) // HU, int(hi[2] - lo[2]) // HU


class _Builder:
    """World plus a height map so drops are O(footprint)."""

    def __init__(self, dims):
        self.world = VoxelWorld(dims)
        self.heights = np.zeros((dims[0], dims[2]), np.int64)

    def drop(self, c: Component, r: int, x0: int, z0: int, max_top: int) -> Optional[Pose]:
        """Lowest resting pose reached by dropping ``c`` onto the cell (x0, z0), or None."""
        base = _aligned_pose(c, r, x0, 0, z0)
        s = c.shape.posed(base)
        v = s.voxels
        if v[:, 0].min() < 0 or v[:, 2].min() < 0 or v[:, 0].max() >= self.world.dims[0] or v[:, 2].max() >= self.world.dims[2]:
            return None
        cols, inv = np.unique(v[:, [0, 2]], axis=0, return_inverse=True)
        bottom = np.full(len(cols), np.iinfo(np.int64).max)
        np.minimum.at(bottom, inv.ravel(), v[:, 1])
        lift = int((self.heights[cols[:, 0], cols[:, 1]] - bottom).max())
        lift = max(lift, 0)
        if v[:, 1].max() + lift >= max_top:
            return None
        pose = Pose.from_hu((base.hu[0], base.hu[1] + lift, base.hu[2]), r)
        return pose if self.world.can_place(c, pose, require_connection=True) else None

    def place(self, c: Component, pose: Pose) -> int:
        iid = self.world.place(c, pose, require_connection=True)
        v = self.world.instances[iid].shape.voxels
        np.maximum.at(self.heights, (v[:, 0], v[:, 2]), v[:, 1] + 1)
        return iid


def _partition(rng, rect, min_box: int) -> list[tuple[int, int, int, int]]:
    """Random guillotine cut of (x0, x1, z0, z1) into boxes no narrower than min_box."""
    x0, x1, z0, z1 = rect
    lx, lz = x1 - x0, z1 - z0
    can_x, can_z = lx >= 2 * min_box, lz >= 2 * min_box
    if not (can_x or can_z) or rng.random() < 0.25:
        return [rect]
    along_x = can_x and (not can_z or rng.random() < lx / (lx + lz))
    if along_x:
        cut = int(rng.integers(x0 + min_box, x1 - min_box + 1))
        parts = [(x0, cut, z0, z1), (cut, x1, z0, z1)]
    else:
        cut = int(rng.integers(z0 + min_box, z1 - min_box + 1))
        parts = [(x0, x1, z0, cut), (x0, x1, cut, z1)]
    return [b for p in parts for b in _partition(rng, p, min_box)]


def _pick_types(catalog: Catalog, cfg: GenConfig) -> list[str]:
    ids = sorted(catalog) if cfg.types is None else list(cfg.types)
    missing = [t for t in ids if t not in catalog]
    if missing:
        raise ValueError(f"types not in catalog: {missing}")
    return ids


def random_submodule(rng, catalog: Catalog, types: Sequence[str], cfg: GenConfig, name: str) -> Optional[Component]:
    """Random stack of primitives inside a small box, or None if the draw is unusable."""
    n = int(rng.integers(cfg.submodule_parts[0], cfg.submodule_parts[1] + 1))
    box = cfg.submodule_box
    b = _Builder((HU * (box + 2), HU * (cfg.submodule_height + 1), HU * (box + 2)))
    parts = []
    for _ in range(4 * n):
        if len(parts) == n:
            break
        g = catalog[types[int(rng.integers(len(types)))]]
        c = Component.primitive(g)
        r = int(rng.integers(4))
        fx, fz = _footprint(c, r)
        if fx > box or fz > box:
            continue
        x0 = 1 + int(rng.integers(box - fx + 1))
        z0 = 1 + int(rng.integers(box - fz + 1))
        pose = b.drop(c, r, x0, z0, HU * cfg.submodule_height)
        if pose is None or (parts and pose.hu[1] == 0):
            continue  # later parts must sit on earlier ones, not beside them
        b.place(c, pose)
        parts.append((g, pose))
    if len(parts) < 2:
        return None
    try:
        return Component.submodule(name, parts)
    except CompositionError:
        return None


def forward_build(
    cfg: GenConfig,
    catalog: Optional[Catalog] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[VoxelWorld, dict[str, Component]]:
    """Random connected model inside a random bounding box, plus its submodule registry."""
    catalog = default_catalog() if catalog is None else catalog
    if not catalog:
        raise ValueError("empty catalog")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    types = _pick_types(catalog, cfg)
    prims = {t: Component.primitive(catalog[t]) for t in types}
    weights = np.asarray(cfg.strategy_weights, float) / sum(cfg.strategy_weights)

    for _ in range(cfg.retry_budget):
        L = int(rng.integers(cfg.length[0], cfg.length[1] + 1))
        W = int(rng.integers(cfg.width[0], cfg.width[1] + 1))
        H = int(rng.integers(cfg.height[0], cfg.height[1] + 1))
        ox = (cfg.dims[0] // HU - L) // 2
        oz = (cfg.dims[2] // HU - W) // 2
        b = _Builder(cfg.dims)
        registry: dict[str, Component] = {}
        boxes = _partition(rng, (0, L, 0, W), cfg.min_box)
        for k in rng.permutation(len(boxes)):
            x0, x1, z0, z1 = boxes[k]
            top = HU * int(rng.integers(1, H + 1))
            edge = rng.random() < cfg.edge_grow_prob
            for attempt in range(cfg.fill_attempts):
                strategy = int(rng.choice(3, p=weights))
                if strategy == 1:
                    if registry and rng.random() < cfg.submodule_reuse:
                        names = sorted(registry)
                        c = registry[names[int(rng.integers(len(names)))]]
                    else:
                        c = random_submodule(rng, catalog, types, cfg, f"S{len(registry)}")
                        if c is None:
                            continue
                else:
                    c = prims[types[int(rng.integers(len(types)))]]
                r = int(rng.integers(4))
                fx, fz = _footprint(c, r)
                if fx > x1 - x0 or fz > z1 - z0:
                    continue
                px = x0 + int(rng.integers(x1 - x0 - fx + 1))
                pz = z0 + int(rng.integers(z1 - z0 - fz + 1))
                if edge and attempt < cfg.fill_attempts // 2:
                    # edge growing: hug one side of the box before filling
                    side = int(rng.integers(4))
                    px = (x0, x1 - fx, px, px)[side]
                    pz = (pz, pz, z0, z1 - fz)[side]
                repeats = int(rng.integers(cfg.stack_count[0], cfg.stack_count[1] + 1)) if strategy == 2 else 1
                for _ in range(repeats):
                    # submodules may rise to the model's full height, primitives to the box's
                    pose = b.drop(c, r, ox + px, oz + pz, top if c.is_primitive else HU * H)
                    if pose is None:
                        break
                    b.place(c, pose)
                    if not c.is_primitive:
                        registry[c.name] = c
        _bridge(b, rng, [prims[t] for t in types], (ox, oz, L, W), HU * H, cfg.bridge_attempts)
        world = b.world
        _prune_to_main_assembly(world)
        if len(world):
            used = {i.component.name for i in world.instances.values()}
            return world, {n: c for n, c in registry.items() if n in used}
    raise GenerationExhausted(cfg.seed, "every attempt produced an empty model")


def _bridge(b: _Builder, rng, prims: list[Component], area, top: int, attempts: int) -> None:
    """Drop extra primitives that join two or more separate assemblies."""
    ox, oz, L, W = area
    label = {i: g for g, members in enumerate(b.world.assemblies()) for i in members}
    n_groups = len(set(label.values()))
    for _ in range(attempts):
        if n_groups <= 1:
            return
        c = prims[int(rng.integers(len(prims)))]
        r = int(rng.integers(4))
        fx, fz = _footprint(c, r)
        if fx > L or fz > W:
            continue
        pose = b.drop(c, r, ox + int(rng.integers(L - fx + 1)), oz + int(rng.integers(W - fz + 1)), top)
        if pose is None:
            continue
        joined = {label[i] for i in b.world.mates_of_shape(c.shape.posed(pose))}
        if len(joined) < 2:
            continue
        iid = b.place(c, pose)
        keep = min(joined)
        for i, g in label.items():
            if g in joined:
                label[i] = keep
        label[iid] = keep
        n_groups -= len(joined) - 1


def _prune_to_main_assembly(world: VoxelWorld) -> None:
    groups = [g for g in world.assemblies() if any(world.on_ground(i) for i in g)]
    keep = max(groups, key=lambda g: (len(g), -min(g))) if groups else set()
    for i in sorted(world.instances):
        if i not in keep:
            world.remove(i)


# ---------------------------------------------------------------------------
# plans


@dataclass
class StepSpec:
    id: str
    additions: list[tuple[Component, Pose]]
    base: Optional[str] = None  # previous step id within the same plan
    image: Optional[str] = None
    flags: list[str] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for c, _ in self.additions:
            out[c.name] = out.get(c.name, 0) + 1
        return out

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "base": self.base,
            "image": self.image,
            "flags": list(self.flags),
            "additions": [{"component": c.name, **p.to_json()} for c, p in self.additions],
        }


@dataclass
class AssemblyPlan:
    """Linear chain of steps; each submodule used carries its own sub-plan."""

    name: str
    camera: CameraParams
    steps: list[StepSpec]
    submodules: dict[str, "AssemblyPlan"] = field(default_factory=dict)
    components: dict[str, Component] = field(default_factory=dict)
    dims: tuple[int, int, int] = DEFAULT_DIMS

    def all_steps(self) -> list[tuple["AssemblyPlan", StepSpec]]:
        """Every step in tree order: sub-plans first, then this plan's chain."""
        out = []
        for n in sorted(self.submodules):
            out.extend(self.submodules[n].all_steps())
        out.extend((self, s) for s in self.steps)
        return out

    def to_json(self, catalog: Optional[Catalog] = None) -> dict:
        d = {
            "schema": 1,
            "name": self.name,
            "dims": list(self.dims),
            "camera": self.camera.to_json(),
            "steps": [s.to_json() for s in self.steps],
            "submodules": {
                n: {"parts": self.components[n].to_json()["parts"], "plan": p.to_json()}
                for n, p in sorted(self.submodules.items())
            },
        }
        if catalog is not None:
            d["catalog"] = catalog_to_json(catalog)
        return d

    @classmethod
    def from_json(cls, d: dict, catalog: Optional[Catalog] = None) -> "AssemblyPlan":
        if d.get("schema") != 1:
            raise PlanError(f"unsupported plan schema {d.get('schema')!r}")
        if catalog is None:
            catalog = parse_catalog(d["catalog"]) if "catalog" in d else default_catalog()
        subs = {}
        comps: dict[str, Component] = {}
        for n, s in d.get("submodules", {}).items():
            comps[n] = Component.from_json({"name": n, "parts": s["parts"]}, catalog)
            subs[n] = cls.from_json(s["plan"], catalog)

        def resolve(name):
            if name in comps:
                return comps[name]
            if name in catalog:
                comps[name] = Component.primitive(catalog[name])
                return comps[name]
            raise PlanError(f"unknown component {name!r}")

        steps = [
            StepSpec(
                s["id"],
                [(resolve(a["component"]), Pose.from_json(a)) for a in s["additions"]],
                s.get("base"),
                s.get("image"),
                list(s.get("flags", [])),
            )
            for s in d["steps"]
        ]
        return cls(d["name"], CameraParams.from_json(d["camera"]), steps, subs, comps, tuple(d.get("dims", DEFAULT_DIMS)))


def check_chunk_limits(step: StepSpec, cfg: GenConfig) -> None:
    if len(step.additions) > cfg.max_instances:
        raise PlanError(f"step {step.id}: {len(step.additions)} instances > {cfg.max_instances}")
    if len(step.counts()) > cfg.max_types:
        raise PlanError(f"step {step.id}: {len(step.counts())} types > {cfg.max_types}")


def submodule_from_world(name: str, world: VoxelWorld) -> Component:
    parts = [(i.component.parts[0][0], i.pose) for _, i in sorted(world.instances.items())]
    return Component.submodule(name, parts)


def replay_plan(plan: AssemblyPlan, on_step: Optional[Callable] = None) -> VoxelWorld:
    """Execute a plan with its recorded poses; every placement must connect."""
    for n, sub in sorted(plan.submodules.items()):
        built = submodule_from_world(n, replay_plan(sub, on_step))
        if not built.shape.same_as(plan.components[n].shape):
            raise PlanError(f"sub-plan for {n!r} does not rebuild the submodule")
    world = VoxelWorld(plan.dims)
    for step in plan.steps:
        before = world.copy() if on_step else None
        for c, p in step.additions:
            try:
                world.place(c, p, require_connection=False)
            except PlacementError as e:
                raise PlanError(f"step {step.id}: {e}") from e
        if on_step:
            on_step(plan, step, before, world)
    bad = [i for i in world.instances if i not in world.grounded()]
    if bad:
        raise PlanError(f"plan {plan.name}: instances {bad} are not connected to the ground")
    return world


def same_occupancy(a: VoxelWorld, b: VoxelWorld) -> bool:
    return np.array_equal(a.cells >= 0, b.cells >= 0) and sorted(
        (i.component.name, i.pose.hu) for i in a.instances.values()
    ) == sorted((i.component.name, i.pose.hu) for i in b.instances.values())


# ---------------------------------------------------------------------------
# backward stage


def _centre(world: VoxelWorld, iid: int) -> np.ndarray:
    lo, hi = world.instances[iid].shape.bbox
    return (lo + hi) / (2.0 * HU)


def _chunk(world: VoxelWorld, cand: list[int], cfg: GenConfig) -> list[int]:
    """Greedy proximity group seeded at the highest candidate."""
    top = {i: int(world.instances[i].shape.voxels[:, 1].max()) for i in cand}
    seed = min(cand, key=lambda i: (-top[i], i))
    chunk = [seed]
    names = {world.instances[seed].component.name}
    graph = world.mating_graph()
    rest = [i for i in cand if i != seed]
    centres = {i: _centre(world, i) for i in cand}
    while rest and len(chunk) < cfg.max_instances:
        dist = {i: min(np.linalg.norm(centres[i] - centres[j]) for j in chunk) for i in rest}
        i = min(rest, key=lambda k: (round(dist[k], 9), k))
        if dist[i] > cfg.chunk_radius:
            break
        rest.remove(i)
        name = world.instances[i].component.name
        if name not in names and len(names) >= cfg.max_types:
            continue
        if not world.stable_without(chunk + [i], "assembly", graph):
            continue
        chunk.append(i)
        names.add(name)
    return sorted(chunk)


def backward_decompose(
    world: VoxelWorld,
    cfg: GenConfig,
    cam: CameraParams,
    registry: Optional[dict[str, Component]] = None,
    name: str = "main",
    depth: int = 0,
) -> AssemblyPlan:
    """Take the model apart chunk by chunk; the reversed chunks are the steps."""
    w = world.copy()
    removed: list[tuple[list[tuple[Component, Pose]], list[str]]] = []
    while len(w):
        flags = []
        cand = removable_visible(w, visibility_cameras(w), cfg.visibility_threshold, mode="assembly")
        if not cand:
            # stuck: nothing both removable and visible, so drop the visibility test once
            cand = removable(w, "assembly")
            flags.append("visibility_ignored")
        if not cand:
            raise GenerationExhausted(cfg.seed, f"no removable instance left in {name}")
        chunk = _chunk(w, cand, cfg)
        removed.append(([(w.instances[i].component, w.instances[i].pose) for i in chunk], flags))
        for i in chunk:
            w.remove(i)
    steps = []
    prefix = "" if name == "main" else f"{name}-"
    for k, (adds, flags) in enumerate(reversed(removed)):
        steps.append(StepSpec(f"{prefix}{k:03d}", adds, steps[-1].id if steps else None, f"steps/{prefix}{k:03d}.png", flags))
    plan = AssemblyPlan(name, cam, steps, dims=world.dims)
    used = sorted({c.name for s in steps for c, _ in s.additions if not c.is_primitive})
    for n in used:
        comp = (registry or {}).get(n) or next(c for s in steps for c, _ in s.additions if c.name == n)
        plan.components[n] = comp
        if depth >= 1:
            raise PlanError("submodule nesting deeper than one level")
        sub_world = VoxelWorld(world.dims)
        for g, p in comp.parts:
            sub_world.place(Component.primitive(g), p, require_connection=False)
        lo, hi = comp.shape.bbox
        sub_cam = center_camera(cam, lo / HU, hi / HU)
        plan.submodules[n] = backward_decompose(sub_world, cfg, sub_cam, None, n, depth + 1)
    return plan


# ---------------------------------------------------------------------------
# cameras and datasets


def sample_camera(cfg: GenConfig, rng: np.random.Generator, world: VoxelWorld) -> CameraParams:
    """Manual camera: scale in cfg.scale_range, viewing angles around (0, 225, 30), model centred plus jitter."""
    sigma = float(rng.uniform(*cfg.scale_range))
    yaw = float(rng.uniform(*cfg.yaw))
    pitch = float(rng.uniform(*cfg.pitch))
    jitter = rng.uniform(-1.0, 1.0, size=2) * cfg.ndc_jitter * cfg.image_size / 2
    cam = CameraParams(
        s=sigma * cfg.pixels_per_unit, t=(0.0, 0.0), euler=(cfg.roll, yaw, pitch),
        width=cfg.image_size, height=cfg.image_size,
    )
    occ = world.occupied()
    lo, hi = occ.min(axis=0) / HU, (occ.max(axis=0) + 1) / HU
    return center_camera(cam, lo, hi, tuple(float(v) for v in jitter))


@dataclass
class GeneratedSet:
    world: VoxelWorld
    plan: AssemblyPlan
    catalog: Catalog


def generate_set(cfg: GenConfig, rng: np.random.Generator, catalog: Optional[Catalog] = None) -> GeneratedSet:
    catalog = default_catalog() if catalog is None else catalog
    world, registry = forward_build(cfg, catalog, rng)
    cam = sample_camera(cfg, rng, world)
    plan = backward_decompose(world, cfg, cam, registry)
    return GeneratedSet(world, plan, catalog)


def set_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, k]))


def generate_suite(cfg: GenConfig, n_sets: int, catalog: Optional[Catalog] = None) -> list[GeneratedSet]:
    """In-memory equivalent of :func:`emit_dataset` (same per-set seeds)."""
    return [generate_set(cfg, set_rng(cfg.seed, k), catalog) for k in range(n_sets)]


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def write_set(gs: GeneratedSet, out: Path, images: bool = True) -> None:
    """plan.json, camera.json, world.json and per-step images and oracle observations."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "steps").mkdir(exist_ok=True)
    _dump(out / "plan.json", gs.plan.to_json(gs.catalog))
    _dump(out / "camera.json", gs.plan.camera.to_json())
    _dump(out / "world.json", world_to_json(gs.world))

    def emit(plan, step, before, after):
        obs = oracle_detect(before, step.additions, plan.camera)
        save_observation(obs, out / "steps" / f"{step.id}.obs.json")
        if images:
            new = sorted(set(after.instances) - set(before.instances))
            write_png(out / "steps" / f"{step.id}.png", render_manual(plan.camera, after, new))

    replay_plan(gs.plan, emit)


def _emit_one(args) -> dict:
    cfg, k, out, catalog, images = args
    entry = {"set": f"set_{k}", "seed": [cfg.seed, k]}
    try:
        gs = generate_set(cfg, set_rng(cfg.seed, k), catalog)
        write_set(gs, Path(out) / f"set_{k}", images)
        steps = gs.plan.all_steps()
        entry.update(status="ok", steps=len(steps), main_steps=len(gs.plan.steps), instances=len(gs.world))
    except (GenerationExhausted, PlanError, PlacementError) as e:
        log.warning("set %d failed: %s", k, e)
        entry.update(status="error", error=str(e))
    return entry


def emit_dataset(
    cfg: GenConfig,
    n_sets: int,
    out_dir,
    catalog: Optional[Catalog] = None,
    jobs: int = 1,
    images: bool = True,
) -> dict:
    """Write ``n_sets`` manuals under ``out_dir`` and return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalog = default_catalog() if catalog is None else catalog
    work = [(cfg, k, str(out), catalog, images) for k in range(n_sets)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            entries = list(ex.map(_emit_one, work))
    else:
        entries = [_emit_one(w) for w in work]
    manifest = {
        "schema": 1,
        "seed": cfg.seed,
        "cfg_hash": cfg.digest(),
        "cfg": cfg.to_json(),
        "n_sets": n_sets,
        "sets": entries,
        "steps": sum(e.get("steps", 0) for e in entries),
    }
    _dump(out / "manifest.json", manifest)
    return manifest


def load_set(set_dir) -> GeneratedSet:
    from .world import load_world

    d = Path(set_dir)
    raw = json.loads((d / "plan.json").read_text())
    catalog = parse_catalog(raw["catalog"]) if "catalog" in raw else default_catalog()
    plan = AssemblyPlan.from_json(raw, catalog)
    return GeneratedSet(load_world(d / "world.json", catalog), plan, catalog)


# ---------------------------------------------------------------------------
# focused samplers for the inference experiments


@dataclass
class SubmoduleCase:
    base: VoxelWorld
    component: Component
    pose: Pose
    camera: CameraParams


def sample_submodule_step(rng: np.random.Generator, cfg: Optional[GenConfig] = None, catalog: Optional[Catalog] = None, max_tries: int = 200) -> SubmoduleCase:
    """A random base plus one random submodule resting on its studs."""
    cfg = cfg or GenConfig(length=(3, 5), width=(3, 5), height=(1, 2), strategy_weights=(1.0, 0.0, 0.3))
    catalog = default_catalog() if catalog is None else catalog
    types = _pick_types(catalog, cfg)
    for _ in range(max_tries):
        world, _ = forward_build(cfg, catalog, rng)
        sub = random_submodule(rng, catalog, types, cfg, "S0")
        if sub is None:
            continue
        b = _Builder(world.dims)
        for i in sorted(world.instances):
            b.place(world.instances[i].component, world.instances[i].pose)
        occ = world.occupied() // HU
        lo, hi = occ.min(axis=0), occ.max(axis=0)
        r = int(rng.integers(4))
        fx, fz = _footprint(sub, r)
        x0 = int(rng.integers(lo[0] - fx + 1, hi[0] + 1))
        z0 = int(rng.integers(lo[2] - fz + 1, hi[2] + 1))
        pose = b.drop(sub, r, x0, z0, world.dims[1])
        if pose is None or pose.hu[1] == 0:
            continue
        cam = sample_camera(cfg, rng, b.world)
        return SubmoduleCase(world, sub, pose, cam)
    raise GenerationExhausted(cfg.seed, "no submodule step found")


@dataclass
class CraftCase:
    base: VoxelWorld
    cell: tuple[int, int, int]
    camera: CameraParams


def sample_craft_step(rng: np.random.Generator, n_bricks: tuple[int, int] = (0, 30), extent: int = 6, catalog: Optional[Catalog] = None) -> CraftCase:
    """Unit-cube house: bricks go on the ground or next to an existing brick."""
    from .infer import craft_candidates

    catalog = default_catalog() if catalog is None else catalog
    unit = Component.primitive(catalog["B1x1"])
    world = VoxelWorld()
    c0 = world.dims[0] // HU // 2 - extent // 2

    def options():
        cells = craft_candidates(world)
        inside = (cells[:, [0, 2]] >= c0).all(axis=1) & (cells[:, [0, 2]] < c0 + extent).all(axis=1) & (cells[:, 1] < extent)
        return cells[inside]

    for _ in range(int(rng.integers(n_bricks[0], n_bricks[1] + 1))):
        cells = options()
        x, y, z = cells[int(rng.integers(len(cells)))]
        world.place(unit, Pose((float(x), float(y), float(z))), require_connection=False)
    cells = options()
    cell = tuple(int(v) for v in cells[int(rng.integers(len(cells)))])
    cam = CameraParams(
        s=float(rng.uniform(1, 5)) * 8.0, euler=(0.0, float(rng.uniform(215, 235)), float(rng.uniform(20, 40)))
    )
    cam = center_camera(cam, (c0, 0, c0), (c0 + extent, extent, c0 + extent))
    return CraftCase(world, cell, cam)
