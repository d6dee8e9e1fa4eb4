"""Voxel occupancy world: placement, collisions, stud bookkeeping, removability."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .catalog import HU, Catalog, Component, Pose, Shape, catalog_to_json, parse_catalog

DEFAULT_DIMS = (130, 130, 130)


class PlacementError(Exception):
    pass


class Collision(PlacementError):
    def __init__(self, cells):
        self.cells = [tuple(c) for c in cells]
        super().__init__(f"collision at {len(self.cells)} voxel(s), first {self.cells[:3]}")


class Floating(PlacementError):
    def __init__(self):
        super().__init__("no stud, anti-stud or ground contact")


class OutOfBounds(PlacementError):
    def __init__(self, lo, hi, dims):
        super().__init__(f"voxels span {tuple(lo)}..{tuple(hi)} outside world {tuple(dims)}")


@dataclass
class Instance:
    id: int
    component: Component
    pose: Pose
    shape: Shape  # posed, world frame

    @property
    def type_id(self) -> str:
        return self.component.name


def _keys(points: np.ndarray) -> list[tuple]:
    return list(map(tuple, points.tolist()))


class VoxelWorld:
    """Occupancy grid of posed component instances on the half-unit lattice.

    ``cells[x, y, z]`` holds the owning instance id or -1.  The ground plane is
    y == 0 and acts as a universal connector.
    """

    def __init__(self, dims: Sequence[int] = DEFAULT_DIMS):
        self.dims = tuple(int(d) for d in dims)
        self.cells = np.full(self.dims, -1, dtype=np.int32)
        self.instances: dict[int, Instance] = {}
        self._next_id = 0
        self._studs: dict[tuple, int] = {}
        self._anti: dict[tuple, int] = {}

    # -- basic state -------------------------------------------------------

    def copy(self) -> "VoxelWorld":
        w = VoxelWorld.__new__(VoxelWorld)
        w.dims = self.dims
        w.cells = self.cells.copy()
        w.instances = dict(self.instances)
        w._next_id = self._next_id
        w._studs = dict(self._studs)
        w._anti = dict(self._anti)
        return w

    def __len__(self) -> int:
        return len(self.instances)

    def is_empty(self) -> bool:
        return not self.instances

    def occupied(self) -> np.ndarray:
        """(N,3) voxel indices of all occupied cells."""
        return np.argwhere(self.cells >= 0)

    def snapshot(self) -> list[tuple[Component, Pose]]:
        return [(i.component, i.pose) for i in self.instances.values()]

    # -- placement ---------------------------------------------------------

    def check(self, component: Component, pose: Pose, require_connection: bool = True) -> Shape:
        """Validate a placement and return the posed shape; raises PlacementError."""
        shape = component.shape.posed(pose)
        v = shape.voxels
        lo, hi = v.min(axis=0), v.max(axis=0)
        if (lo < 0).any() or (hi >= np.asarray(self.dims)).any():
            raise OutOfBounds(lo, hi, self.dims)
        owners = self.cells[v[:, 0], v[:, 1], v[:, 2]]
        if (owners >= 0).any():
            raise Collision(v[owners >= 0])
        if require_connection and not self._connects(shape):
            raise Floating()
        return shape

    def can_place(self, component: Component, pose: Pose, require_connection: bool = True) -> bool:
        try:
            self.check(component, pose, require_connection)
        except PlacementError:
            return False
        return True

    def _connects(self, shape: Shape) -> bool:
        if (shape.voxels[:, 1] == 0).any():
            return True
        if any(k in self._studs for k in _keys(shape.anti_studs)):
            return True
        return any(k in self._anti for k in _keys(shape.studs))

    def place(self, component: Component, pose: Pose, require_connection: bool = True) -> int:
        shape = self.check(component, pose, require_connection)
        iid = self._next_id
        self._next_id += 1
        self._insert(Instance(iid, component, pose, shape))
        return iid

    def _insert(self, inst: Instance) -> None:
        v = inst.shape.voxels
        self.cells[v[:, 0], v[:, 1], v[:, 2]] = inst.id
        self.instances[inst.id] = inst
        for k in _keys(inst.shape.studs):
            self._studs[k] = inst.id
        for k in _keys(inst.shape.anti_studs):
            self._anti[k] = inst.id

    def remove(self, iid: int) -> Instance:
        inst = self.instances.pop(iid)
        v = inst.shape.voxels
        self.cells[v[:, 0], v[:, 1], v[:, 2]] = -1
        for k in _keys(inst.shape.studs):
            self._studs.pop(k, None)
        for k in _keys(inst.shape.anti_studs):
            self._anti.pop(k, None)
        return inst

    def restore(self, inst: Instance) -> None:
        """Put back an instance previously returned by :meth:`remove`."""
        if inst.id in self.instances:
            raise ValueError(f"instance {inst.id} is live")
        self._insert(inst)

    # -- connectors --------------------------------------------------------

    def _cell(self, x, y, z) -> int:
        if 0 <= x < self.dims[0] and 0 <= y < self.dims[1] and 0 <= z < self.dims[2]:
            return int(self.cells[x, y, z])
        return -1

    def _covered(self, x, y, z) -> bool:
        return any(self._cell(x + dx, y, z + dz) >= 0 for dx in (-1, 0) for dz in (-1, 0))

    def free_studs_hu(self) -> tuple[np.ndarray, np.ndarray]:
        """Studs with nothing directly above them: (N,3) lattice points and owners."""
        pts, owners = [], []
        for k, iid in self._studs.items():
            if not self._covered(k[0], k[1], k[2]):
                pts.append(k)
                owners.append(iid)
        return np.asarray(pts, dtype=np.int64).reshape(-1, 3), np.asarray(owners, dtype=np.int64)

    def free_anti_studs_hu(self) -> tuple[np.ndarray, np.ndarray]:
        """Anti-studs above the ground with nothing directly below them."""
        pts, owners = [], []
        for k, iid in self._anti.items():
            if k[1] > 0 and not self._covered(k[0], k[1] - 1, k[2]):
                pts.append(k)
                owners.append(iid)
        return np.asarray(pts, dtype=np.int64).reshape(-1, 3), np.asarray(owners, dtype=np.int64)

    # -- connectivity ------------------------------------------------------

    def mates_of_shape(self, s: Shape) -> set[int]:
        """Instances that would join a posed shape through a stud/anti-stud pair."""
        out = {self._anti[k] for k in _keys(s.studs) if k in self._anti}
        out |= {self._studs[k] for k in _keys(s.anti_studs) if k in self._studs}
        return out

    def mates(self, iid: int) -> set[int]:
        """Instances joined to ``iid`` through a stud/anti-stud pair."""
        return self.mates_of_shape(self.instances[iid].shape) - {iid}

    def mating_graph(self) -> dict[int, set[int]]:
        return {i: self.mates(i) for i in self.instances}

    def on_ground(self, iid: int) -> bool:
        return bool((self.instances[iid].shape.voxels[:, 1] == 0).any())

    def grounded(self, graph: Optional[dict] = None, exclude: Iterable[int] = ()) -> set[int]:
        """Instances reachable from the ground plane, ignoring ``exclude``."""
        graph = graph if graph is not None else self.mating_graph()
        excl = set(exclude)
        seen = {i for i in self.instances if i not in excl and self.on_ground(i)}
        todo = deque(seen)
        while todo:
            a = todo.popleft()
            for b in graph[a]:
                if b not in excl and b not in seen:
                    seen.add(b)
                    todo.append(b)
        return seen

    def assemblies(self, graph: Optional[dict] = None, exclude: Iterable[int] = ()) -> list[set[int]]:
        """Stud-connected groups (ground does not join groups)."""
        graph = graph if graph is not None else self.mating_graph()
        excl = set(exclude)
        seen: set[int] = set()
        groups = []
        for start in sorted(self.instances):
            if start in excl or start in seen:
                continue
            group = {start}
            todo = deque([start])
            while todo:
                a = todo.popleft()
                for b in graph[a]:
                    if b not in excl and b not in group:
                        group.add(b)
                        todo.append(b)
            seen |= group
            groups.append(group)
        return groups

    def stable_without(self, removed: Iterable[int], mode: str = "ground", graph: Optional[dict] = None) -> bool:
        """Whether the world stays valid after removing ``removed``.

        ``mode="ground"``: every remaining instance still reaches the ground.
        ``mode="assembly"``: the remainder is one stud-connected group that
        touches the ground (or is empty).
        """
        removed = set(removed)
        rest = [i for i in self.instances if i not in removed]
        if not rest:
            return True
        graph = graph if graph is not None else self.mating_graph()
        if mode == "ground":
            return len(self.grounded(graph, removed)) == len(rest)
        if mode == "assembly":
            groups = self.assemblies(graph, removed)
            return len(groups) == 1 and any(self.on_ground(i) for i in rest)
        raise ValueError(f"unknown stability mode {mode!r}")

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return world_to_json(self)


def studs_of(w: VoxelWorld) -> list[tuple[tuple[float, float, float], int]]:
    """Unoccupied studs of the world as (grid-unit point, owning instance)."""
    pts, owners = w.free_studs_hu()
    order = np.lexsort((pts[:, 2], pts[:, 0], pts[:, 1])) if len(pts) else []
    return [(tuple(float(v) / HU for v in pts[i]), int(owners[i])) for i in order]


def anti_studs_of_component(c: Component, p: Pose) -> list[tuple[float, float, float]]:
    return [tuple(float(v) / HU for v in a) for a in c.shape.posed(p).anti_studs.tolist()]


# ---------------------------------------------------------------------------
# removability and visibility


def removable(w: VoxelWorld, mode: str = "ground") -> list[int]:
    graph = w.mating_graph()
    return [i for i in sorted(w.instances) if w.stable_without([i], mode, graph)]


def visibility_cameras(w: VoxelWorld, pixels_per_unit: float = 4.0):
    """Top-down and side (yaw 90, pitch 0) orthographic views framing the world."""
    from .camera import CameraParams, fit_camera

    return [
        fit_camera(w, CameraParams(s=pixels_per_unit, euler=(0.0, 0.0, 90.0)), margin=2),
        fit_camera(w, CameraParams(s=pixels_per_unit, euler=(0.0, 90.0, 0.0)), margin=2),
    ]


def visible_fraction(w: VoxelWorld, cameras, ids: Optional[Iterable[int]] = None) -> dict[int, float]:
    """Visible-pixel share of each instance's own silhouette, pooled over views."""
    from .camera import rasterize

    ids = sorted(w.instances) if ids is None else list(ids)
    seen = dict.fromkeys(ids, 0)
    total = dict.fromkeys(ids, 0)
    for cam in cameras:
        full = rasterize(cam, w)
        labels, counts = np.unique(full.ids[full.ids >= 0], return_counts=True)
        visible = dict(zip(labels.tolist(), counts.tolist()))
        for i in ids:
            alone = rasterize(cam, w, subset=[i])
            total[i] += int((alone.ids >= 0).sum())
            seen[i] += visible.get(i, 0)
    return {i: (seen[i] / total[i] if total[i] else 0.0) for i in ids}


def removable_visible(
    w: VoxelWorld,
    cameras=None,
    threshold: float = 0.5,
    mode: str = "ground",
) -> list[int]:
    """Instances that can come off without breaking the world and are visible enough."""
    cand = removable(w, mode)
    if not cand:
        return []
    cameras = visibility_cameras(w) if cameras is None else cameras
    frac = visible_fraction(w, cameras, cand)
    return [i for i in cand if frac[i] > threshold]


# ---------------------------------------------------------------------------
# JSON


def components_to_json(components: Iterable[Component]) -> dict:
    return {c.name: c.to_json()["parts"] for c in components if not c.is_primitive}


def resolve_component(name: str, catalog: Catalog, submodules: dict) -> Component:
    if name in submodules:
        return submodules[name]
    if name in catalog:
        return Component.primitive(catalog[name])
    raise KeyError(f"unknown component {name!r}")


def world_to_json(w: VoxelWorld) -> dict:
    comps = {i.component.name: i.component for i in w.instances.values()}
    prims = {}
    for c in comps.values():
        for g, _ in c.parts:
            prims[g.type_id] = g
    return {
        "schema": 1,
        "dims": list(w.dims),
        "catalog": catalog_to_json(prims),
        "submodules": components_to_json(comps.values()),
        "instances": [
            {"instance": i.id, "component": i.component.name, "pose": i.pose.to_json()}
            for i in sorted(w.instances.values(), key=lambda i: i.id)
        ],
    }


def submodules_from_json(d: dict, catalog: Catalog) -> dict[str, Component]:
    return {
        name: Component.from_json({"name": name, "parts": parts}, catalog)
        for name, parts in d.items()
    }


def world_from_json(d: dict, catalog: Optional[Catalog] = None) -> VoxelWorld:
    if d.get("schema") != 1:
        raise ValueError(f"unsupported world schema {d.get('schema')!r}")
    catalog = dict(catalog or {})
    catalog.update(parse_catalog(d.get("catalog", [])))
    subs = submodules_from_json(d.get("submodules", {}), catalog)
    w = VoxelWorld(d.get("dims", DEFAULT_DIMS))
    for rec in sorted(d["instances"], key=lambda r: r["instance"]):
        comp = resolve_component(rec["component"], catalog, subs)
        pose = Pose.from_json(rec["pose"])
        shape = w.check(comp, pose, require_connection=False)
        iid = int(rec["instance"])
        w._insert(Instance(iid, comp, pose, shape))
        w._next_id = max(w._next_id, iid + 1)
    return w


def save_world(w: VoxelWorld, path) -> None:
    Path(path).write_text(json.dumps(world_to_json(w), indent=1))


def load_world(path, catalog: Optional[Catalog] = None) -> VoxelWorld:
    return world_from_json(json.loads(Path(path).read_text()), catalog)
