"""Primitive brick geometry, submodule composition, keypoints and symmetry.

All geometry is stored on the half-unit lattice ("hu"): one grid unit (a stud
pitch horizontally, a brick height vertically) spans two lattice steps, so a
1x1x1 brick is a 2x2x2 block of voxels.  Voxels are addressed by their min
corner; studs, anti-studs and keypoints are lattice points.  Grid-unit floats
only appear at the public boundary (``studs``, ``component_keypoint`` ...).

Rotations are quarter turns about the vertical (Y) axis through the centre of
a shape's bounding box.  For stud-aligned shapes that centre is always a
lattice point, so rotated shapes stay on the lattice and rotating four times is
exactly the identity.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

HU = 2  # lattice steps per grid unit

_ID_RE = re.compile(r"^[A-Za-z0-9_]+$")


class CatalogError(ValueError):
    """A catalog file failed to parse or a brick broke a geometry invariant."""


class CompositionError(ValueError):
    """A submodule's primitives collide or do not form one connected assembly."""


# ---------------------------------------------------------------------------
# rotation helpers


def rotate_points(points: np.ndarray, quarter_turns: int, pivot: tuple[int, int]) -> np.ndarray:
    """Rotate lattice points (N,3) about the vertical axis through ``pivot`` (x, z)."""
    pts = np.array(points, dtype=np.int64).reshape(-1, 3)
    px, pz = pivot
    for _ in range(quarter_turns % 4):
        x, z = pts[:, 0].copy(), pts[:, 2].copy()
        pts[:, 0] = px + (z - pz)
        pts[:, 2] = pz - (x - px)
    return pts


def rotate_cells(cells: np.ndarray, quarter_turns: int, pivot: tuple[int, int]) -> np.ndarray:
    """Rotate voxels given by min corner; same motion as :func:`rotate_points`."""
    out = np.array(cells, dtype=np.int64).reshape(-1, 3)
    px, pz = pivot
    for _ in range(quarter_turns % 4):
        i, k = out[:, 0].copy(), out[:, 2].copy()
        out[:, 0] = px - pz + k
        out[:, 2] = px + pz - 1 - i
    return out


def _as_set(rows: np.ndarray) -> frozenset:
    return frozenset(map(tuple, np.asarray(rows, dtype=np.int64).reshape(-1, 3).tolist()))


# ---------------------------------------------------------------------------
# poses


@dataclass(frozen=True)
class Pose:
    """Translation on the half-unit lattice (grid units) plus quarter turns about Y.

    The translation is where the component's local origin lands when the
    rotation is zero; rotations act about the component's bounding-box centre.
    """

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: int = 0

    def __post_init__(self):
        t = tuple(float(v) for v in self.translation)
        if len(t) != 3:
            raise ValueError(f"translation needs 3 coordinates, got {self.translation!r}")
        for v in t:
            if v * HU != round(v * HU):
                raise ValueError(f"translation {t} is not on the half-unit lattice")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", int(self.rotation) % 4)

    @classmethod
    def from_hu(cls, t_hu: Sequence[int], rotation: int = 0) -> "Pose":
        return cls(tuple(int(v) / HU for v in t_hu), rotation)

    @property
    def hu(self) -> tuple[int, int, int]:
        return tuple(int(round(v * HU)) for v in self.translation)

    def to_json(self) -> dict:
        return {"t": list(self.translation), "r": self.rotation}

    @classmethod
    def from_json(cls, d: dict) -> "Pose":
        return cls(tuple(d["t"]), d.get("r", 0))


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True, eq=False)
class Shape:
    """Lattice geometry of a brick or a rigid group of bricks.

    ``boxes`` holds one axis-aligned box (lo, hi corners) per primitive; the
    renderer and the topmost-brick rule work from it.
    """

    voxels: np.ndarray
    studs: np.ndarray
    anti_studs: np.ndarray
    boxes: np.ndarray
    pivot: tuple[int, int]

    @staticmethod
    def build(voxels, studs, anti_studs, boxes) -> "Shape":
        voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        lo = voxels.min(axis=0)
        hi = voxels.max(axis=0) + 1
        ext = hi - lo
        if ext[0] % 2 or ext[2] % 2:
            raise CompositionError(
                "footprint must span whole grid units so quarter turns stay on the lattice"
            )
        pivot = (int(lo[0] + ext[0] // 2), int(lo[2] + ext[2] // 2))
        return Shape(
            voxels=voxels,
            studs=np.asarray(studs, dtype=np.int64).reshape(-1, 3),
            anti_studs=np.asarray(anti_studs, dtype=np.int64).reshape(-1, 3),
            boxes=np.asarray(boxes, dtype=np.int64).reshape(-1, 2, 3),
            pivot=pivot,
        )

    def rotated(self, quarter_turns: int) -> "Shape":
        q = quarter_turns % 4
        if q == 0:
            return self
        corners = rotate_points(self.boxes.reshape(-1, 3), q, self.pivot).reshape(-1, 2, 3)
        boxes = np.stack([corners.min(axis=1), corners.max(axis=1)], axis=1)
        return Shape(
            voxels=rotate_cells(self.voxels, q, self.pivot),
            studs=rotate_points(self.studs, q, self.pivot),
            anti_studs=rotate_points(self.anti_studs, q, self.pivot),
            boxes=boxes,
            pivot=self.pivot,
        )

    def translated(self, t_hu: Sequence[int]) -> "Shape":
        t = np.asarray(t_hu, dtype=np.int64).reshape(3)
        if not t.any():
            return self
        return Shape(
            voxels=self.voxels + t,
            studs=self.studs + t,
            anti_studs=self.anti_studs + t,
            boxes=self.boxes + t,
            pivot=(self.pivot[0] + int(t[0]), self.pivot[1] + int(t[2])),
        )

    def posed(self, pose: Pose) -> "Shape":
        return self.rotated(pose.rotation).translated(pose.hu)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.voxels.min(axis=0), self.voxels.max(axis=0) + 1

    def same_as(self, other: "Shape") -> bool:
        """Set equality of occupancy, studs and anti-studs."""
        return (
            _as_set(self.voxels) == _as_set(other.voxels)
            and _as_set(self.studs) == _as_set(other.studs)
            and _as_set(self.anti_studs) == _as_set(other.anti_studs)
        )

    def keypoints_hu(self) -> np.ndarray:
        """Top-face centres of the topmost primitives, canonical one first.

        Ties on height are ordered by (x, z) so the primary keypoint is the
        lexicographically lowest.
        """
        tops = np.stack(
            [
                (self.boxes[:, 0, 0] + self.boxes[:, 1, 0]) // 2,
                self.boxes[:, 1, 1],
                (self.boxes[:, 0, 2] + self.boxes[:, 1, 2]) // 2,
            ],
            axis=1,
        )
        top = tops[tops[:, 1] == tops[:, 1].max()]
        top = np.unique(top, axis=0)
        order = np.lexsort((top[:, 2], top[:, 0]))
        return top[order]

    @cached_property
    def symmetry_order(self) -> int:
        if self.rotated(1).same_as(self):
            return 4
        if self.rotated(2).same_as(self):
            return 2
        return 1


def _box_shape(size: Sequence[int], stud_cells, anti_stud_cells) -> Shape:
    w, h, d = (int(v) for v in size)
    ii, jj, kk = np.meshgrid(np.arange(HU * w), np.arange(HU * h), np.arange(HU * d), indexing="ij")
    voxels = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    studs = [(HU * x + 1, HU * h, HU * z + 1) for x, z in stud_cells]
    anti = [(HU * x + 1, 0, HU * z + 1) for x, z in anti_stud_cells]
    boxes = [[(0, 0, 0), (HU * w, HU * h, HU * d)]]
    return Shape.build(voxels, studs, anti, boxes)


# ---------------------------------------------------------------------------
# catalog entries


@dataclass(frozen=True)
class BrickGeometry:
    """A primitive brick: an integer box with studs on top and anti-studs below.

    ``size`` is (width along x, height along y, depth along z) in grid units.
    Stud and anti-stud cells are (x, z) footprint cells; each connector sits at
    the centre of its cell.
    """

    type_id: str
    size: tuple[int, int, int]
    stud_cells: tuple[tuple[int, int], ...]
    anti_stud_cells: tuple[tuple[int, int], ...]

    @classmethod
    def box(cls, type_id: str, size: Sequence[int], stud_cells=None, anti_stud_cells=None) -> "BrickGeometry":
        w, _, d = size
        all_cells = tuple((x, z) for x in range(w) for z in range(d))
        studs = all_cells if stud_cells is None else tuple(sorted(tuple(c) for c in stud_cells))
        anti = all_cells if anti_stud_cells is None else tuple(sorted(tuple(c) for c in anti_stud_cells))
        return cls(type_id, tuple(int(v) for v in size), studs, anti)

    @cached_property
    def shape(self) -> Shape:
        return _box_shape(self.size, self.stud_cells, self.anti_stud_cells)

    @property
    def occupancy(self) -> np.ndarray:
        """Voxel min corners, (N,3) int."""
        return self.shape.voxels

    @property
    def studs(self) -> np.ndarray:
        return self.shape.studs / HU

    @property
    def anti_studs(self) -> np.ndarray:
        return self.shape.anti_studs / HU

    @property
    def symmetry_order(self) -> int:
        return self.shape.symmetry_order

    def to_json(self) -> dict:
        w, _, d = self.size
        entry = {"id": self.type_id, "size": list(self.size), "symmetry": self.symmetry_order}
        full = [(x, z) for x in range(w) for z in range(d)]
        if list(self.stud_cells) != full:
            entry["stud_cells"] = [list(c) for c in self.stud_cells]
        if list(self.anti_stud_cells) != full:
            entry["anti_stud_cells"] = [list(c) for c in self.anti_stud_cells]
        return entry


Catalog = dict  # BrickTypeId -> BrickGeometry


def _check_cells(type_id: str, field: str, cells, w: int, d: int):
    out = []
    for c in cells:
        if not (isinstance(c, (list, tuple)) and len(c) == 2 and all(isinstance(v, int) for v in c)):
            raise CatalogError(f"brick {type_id!r}: field {field!r}: cell {c!r} is not an [x, z] pair")
        x, z = c
        if not (0 <= x < w and 0 <= z < d):
            raise CatalogError(f"brick {type_id!r}: field {field!r}: cell {c!r} lies outside the {w}x{d} footprint")
        out.append((x, z))
    if len(set(out)) != len(out):
        raise CatalogError(f"brick {type_id!r}: field {field!r}: duplicate cells")
    return out


def parse_catalog(entries) -> Catalog:
    """Validate decoded catalog JSON and build geometries."""
    if not isinstance(entries, list):
        raise CatalogError("catalog must be a JSON list of brick entries")
    catalog: Catalog = {}
    for n, e in enumerate(entries):
        where = f"entry {n}"
        if not isinstance(e, dict):
            raise CatalogError(f"{where}: expected an object")
        type_id = e.get("id")
        if not isinstance(type_id, str) or not _ID_RE.match(type_id):
            raise CatalogError(f"{where}: field 'id': {type_id!r} must match [A-Za-z0-9_]+")
        if type_id in catalog:
            raise CatalogError(f"{where}: duplicate brick id {type_id!r}")
        size = e.get("size")
        if not (isinstance(size, list) and len(size) == 3 and all(isinstance(v, int) and v > 0 for v in size)):
            raise CatalogError(f"brick {type_id!r}: field 'size': {size!r} must be three positive integers")
        w, _, d = size
        studs = e.get("stud_cells")
        anti = e.get("anti_stud_cells")
        if studs is not None:
            studs = _check_cells(type_id, "stud_cells", studs, w, d)
        if anti is not None:
            anti = _check_cells(type_id, "anti_stud_cells", anti, w, d)
        geom = BrickGeometry.box(type_id, size, studs, anti)
        declared = e.get("symmetry")
        if declared is not None:
            if declared not in (1, 2, 4):
                raise CatalogError(f"brick {type_id!r}: field 'symmetry': must be 1, 2 or 4")
            if declared != geom.symmetry_order:
                raise CatalogError(
                    f"brick {type_id!r}: symmetry rule violated: declared order {declared} "
                    f"but geometry has order {geom.symmetry_order}"
                )
        catalog[type_id] = geom
    return catalog


def load_catalog(path: Union[str, Path]) -> Catalog:
    """Read a JSON catalog file into ``{type_id: BrickGeometry}``."""
    text = Path(path).read_text()
    try:
        entries = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CatalogError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_catalog(entries)


def default_catalog() -> Catalog:
    return load_catalog(Path(__file__).parent / "data" / "default_catalog.json")


def catalog_to_json(catalog: Catalog) -> list:
    return [g.to_json() for g in catalog.values()]


# ---------------------------------------------------------------------------
# components


@dataclass(frozen=True)
class Component:
    """A primitive brick or a submodule (rigid group of posed primitives).

    ``parts`` are primitives in the component's local frame.  Submodules built
    with :meth:`submodule` are normalised so their bounding box starts at the
    origin.
    """

    name: str
    parts: tuple[tuple[BrickGeometry, Pose], ...]

    @classmethod
    def primitive(cls, geom: BrickGeometry) -> "Component":
        return cls(geom.type_id, ((geom, Pose()),))

    @classmethod
    def submodule(cls, name: str, parts: Iterable[tuple[BrickGeometry, Pose]], validate: bool = True) -> "Component":
        parts = list(parts)
        if not parts:
            raise CompositionError(f"submodule {name!r} has no parts")
        shapes = [g.shape.posed(p) for g, p in parts]
        lo = np.min([s.voxels.min(axis=0) for s in shapes], axis=0)
        shifted = tuple(
            (g, Pose.from_hu(np.asarray(p.hu) - lo, p.rotation)) for g, p in parts
        )
        comp = cls(name, shifted)
        if validate:
            comp.validate()
        return comp

    @property
    def is_primitive(self) -> bool:
        return len(self.parts) == 1 and self.parts[0][1] == Pose() and self.parts[0][0].type_id == self.name

    @cached_property
    def shape(self) -> Shape:
        shapes = [g.shape.posed(p) for g, p in self.parts]
        return Shape.build(
            np.concatenate([s.voxels for s in shapes]),
            np.concatenate([s.studs for s in shapes]),
            np.concatenate([s.anti_studs for s in shapes]),
            np.concatenate([s.boxes for s in shapes]),
        )

    @property
    def symmetry_order(self) -> int:
        return self.shape.symmetry_order

    def validate(self) -> None:
        shapes = [g.shape.posed(p) for g, p in self.parts]
        seen: dict[tuple, int] = {}
        for n, s in enumerate(shapes):
            for v in map(tuple, s.voxels.tolist()):
                if v in seen:
                    raise CompositionError(f"submodule {self.name!r}: parts {seen[v]} and {n} collide at voxel {v}")
                seen[v] = n
        if len(shapes) == 1:
            return
        studs = [_as_set(s.studs) for s in shapes]
        antis = [_as_set(s.anti_studs) for s in shapes]
        reached, frontier = {0}, [0]
        while frontier:
            a = frontier.pop()
            for b in range(len(shapes)):
                if b not in reached and (studs[a] & antis[b] or studs[b] & antis[a]):
                    reached.add(b)
                    frontier.append(b)
        if len(reached) != len(shapes):
            raise CompositionError(f"submodule {self.name!r}: parts are not one stud-connected assembly")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "parts": [{"type": g.type_id, **p.to_json()} for g, p in self.parts],
        }

    @classmethod
    def from_json(cls, d: dict, catalog: Catalog) -> "Component":
        parts = tuple((catalog[p["type"]], Pose.from_json(p)) for p in d["parts"])
        comp = cls(d["name"], parts)
        if not comp.is_primitive:
            comp.validate()
        return comp


Geometric = Union[BrickGeometry, Component, Shape]


def _shape_of(g: Geometric) -> Shape:
    return g if isinstance(g, Shape) else g.shape


def rotate_geometry(g: Geometric, r: int) -> Shape:
    """Rotate by ``r`` quarter turns about the vertical axis through the bbox centre."""
    return _shape_of(g).rotated(r)


def component_keypoint(g: Geometric, rotation: int = 0) -> tuple[np.ndarray, list[np.ndarray]]:
    """Centre of the topmost primitive's top face, in grid units, plus tie alternates."""
    kps = rotate_geometry(g, rotation).keypoints_hu() / HU
    return kps[0], [k for k in kps[1:]]


# ---------------------------------------------------------------------------
# 7-way symmetry classes


def symmetry_encode(g: Union[Geometric, int], r: int) -> int:
    """Fold a rotation into the 7-way class for a component of known symmetry.

    ``g`` may be a geometry or its symmetry order directly.
    """
    order = g if isinstance(g, int) else _shape_of(g).symmetry_order
    r %= 4
    if order == 4:
        return 0
    if order == 2:
        return 1 + r % 2
    if order == 1:
        return 3 + r
    raise ValueError(f"symmetry order must be 1, 2 or 4, got {order}")


def symmetry_decode(code: int) -> tuple[int, int]:
    """Return (symmetry order, canonical quarter turns) for a 7-way class."""
    if code == 0:
        return 4, 0
    if code in (1, 2):
        return 2, code - 1
    if 3 <= code <= 6:
        return 1, code - 3
    raise ValueError(f"symmetry class must be in 0..6, got {code}")


def rotations_equivalent(r1: int, r2: int, order: int) -> bool:
    return (r1 - r2) % (4 // order) == 0


def reduced_rotations(order: int) -> range:
    """One representative per distinct orientation of a shape with this symmetry order."""
    return range(4 // order)
