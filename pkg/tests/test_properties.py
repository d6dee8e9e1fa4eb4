"""Property tests: invariants checked on generated inputs."""

from __future__ import annotations

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from brickmanual.camera import CameraParams, center_camera, project, project_offset
from brickmanual.catalog import (
    Component,
    Pose,
    component_keypoint,
    default_catalog,
    rotate_points,
    rotations_equivalent,
    symmetry_decode,
    symmetry_encode,
)
from brickmanual.detector import oracle_detect
from brickmanual.execution import chamfer, pose_accuracy
from brickmanual.infer import (
    default_tau,
    infer_rotation_by_synthesis,
    infer_step,
    NoCandidate,
    infer_translation,
    quantize_pose_baseline,
)
from brickmanual.mangen import GenConfig, generate_set, replay_plan, same_occupancy, set_rng
from brickmanual.world import VoxelWorld, studs_of

from oracles import SetWorld, nearest_valid_pose

CAT = default_catalog()
PRIM = {k: Component.primitive(g) for k, g in CAT.items()}
SMALL_TYPES = ["B1x1", "B1x2", "B2x2", "B1x2J", "B1x3"]
DIMS = (16, 10, 16)
FAST = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])

rotation = st.integers(0, 3)
angles = st.floats(-180, 180, allow_nan=False)


@st.composite
def submodules(draw):
    """Random stud-connected stack of two or three primitives."""
    base_t = draw(st.sampled_from(["B2x2", "B2x4", "B1x3"]))
    parts = [(CAT[base_t], Pose())]
    g = CAT[draw(st.sampled_from(SMALL_TYPES))]
    r = draw(rotation)
    parts.append((g, Pose((0, 1, 0), r if g.symmetry_order == 4 or r % 2 == 0 else 0)))
    try:
        return Component.submodule("S", parts)
    except Exception:
        assume(False)


components = st.one_of(st.sampled_from(sorted(PRIM)).map(PRIM.get), submodules())


@st.composite
def worlds(draw, max_bricks=4, min_bricks=0):
    """Small worlds: each brick is lowered until it lands on the ground or on a stud."""
    w = VoxelWorld(DIMS)
    for _ in range(draw(st.integers(min_bricks, max_bricks))):
        c = PRIM[draw(st.sampled_from(SMALL_TYPES))]
        r = draw(rotation)
        x = 2 * draw(st.integers(1, 5)) + draw(st.sampled_from([0, 1])) * (r % 2)
        z = 2 * draw(st.integers(1, 5))
        for y in range(0, DIMS[1] - 2, 2):
            pose = Pose.from_hu((x, y, z), r)
            if w.can_place(c, pose, require_connection=False):
                if w.can_place(c, pose, require_connection=True):
                    w.place(c, pose)
                break
    return w


@st.composite
def cameras(draw):
    cam = CameraParams(
        draw(st.floats(8, 40)), (0, 0), (0.0, draw(st.floats(215, 235)), draw(st.floats(20, 40))), 200, 200
    )
    return center_camera(cam, (0, 0, 0), (8, 5, 8))


def key(points):
    return sorted(map(tuple, np.asarray(points).tolist()))


# -- catalog -------------------------------------------------------------------


@given(components)
@FAST
def test_symmetry_steps_return_to_self(c):
    order = c.symmetry_order
    step = 4 // order
    s = c.shape
    for _ in range(order):
        s = s.rotated(step)
        assert s.same_as(c.shape)


@given(components, rotation)
@FAST
def test_keypoint_equivariance(c, r):
    kp, alt = component_keypoint(c, 0)
    rot_kp, rot_alt = component_keypoint(c, r)
    pts = (np.array([kp] + alt) * 2).astype(int)
    moved = rotate_points(pts, r, c.shape.pivot)
    assert key(moved) == key([rot_kp * 2] + [a * 2 for a in rot_alt])
    rot_all = [tuple(x) for x in [rot_kp] + rot_alt]
    assert tuple(rot_kp) == min(rot_all, key=lambda p: (p[0], p[2]))


@given(components, rotation)
@FAST
def test_encode_decode_modulo_symmetry(c, r):
    order, r2 = symmetry_decode(symmetry_encode(c, r))
    assert order == c.symmetry_order and rotations_equivalent(r, r2, order)


# -- world ---------------------------------------------------------------------


@given(worlds(6), st.sampled_from(SMALL_TYPES), rotation, st.integers(0, 20), st.integers(0, 8), st.integers(0, 20))
@FAST
def test_place_remove_restores(w, t, r, x, y, z):
    cells = w.cells.copy()
    studs = studs_of(w)
    antis = key(w.free_anti_studs_hu()[0])
    pose = Pose.from_hu((x, y, z), r)
    assume(w.can_place(PRIM[t], pose, require_connection=False))
    iid = w.place(PRIM[t], pose, require_connection=False)
    w.remove(iid)
    assert np.array_equal(w.cells, cells) and studs_of(w) == studs and key(w.free_anti_studs_hu()[0]) == antis


@given(worlds(8))
@FAST
def test_connected_placements_stay_grounded(w):
    assert w.grounded() == set(w.instances)


@given(worlds(6))
@FAST
def test_studs_partition_top_cells(w):
    free = {p for p, _ in studs_of(w)}
    occ = w.cells >= 0
    for inst in w.instances.values():
        for s in inst.shape.studs.tolist():
            x, y, z = s
            above = y < DIMS[1] and any(
                0 <= x + dx < DIMS[0] and 0 <= z + dz < DIMS[2] and occ[x + dx, y, z + dz]
                for dx in (-1, 0) for dz in (-1, 0)
            )
            assert (tuple(v / 2 for v in s) in free) != above


# -- camera --------------------------------------------------------------------


@given(st.floats(0.1, 100), angles, angles, angles,
       st.lists(st.floats(-50, 50), min_size=6, max_size=6))
@FAST
def test_offset_invariance(s, a, b, c, xs):
    cam = CameraParams(s, (0, 0), (a, b, c))
    v0, v1 = np.array(xs[:3]), np.array(xs[3:])
    assert np.allclose(project(cam, v0) - project(cam, v1), project(cam, v0 - v1), atol=1e-9)


@given(st.floats(0.1, 50), st.floats(0.1, 10), angles, angles,
       st.lists(st.floats(-50, 50), min_size=3, max_size=3))
@FAST
def test_scaling_is_linear(s, k, yaw, pitch, d):
    a = CameraParams(s, (3, 4), (0, yaw, pitch))
    b = CameraParams(s * k, (3, 4), (0, yaw, pitch))
    assert np.allclose(project_offset(b, d), k * project_offset(a, d), rtol=1e-9, atol=1e-9)


# -- detector and inference ------------------------------------------------------


@st.composite
def same_type_steps(draw):
    """Flat 4x4 base with two to three new same-type bricks on it."""
    base = VoxelWorld((24, 10, 24))
    base.place(PRIM["B2x4"], Pose((4, 0, 4)))
    base.place(PRIM["B2x4"], Pose((6, 0, 4)))
    t = draw(st.sampled_from(["B1x1", "B1x2J"]))
    cells = draw(st.lists(st.tuples(st.integers(4, 7), st.integers(4, 7)), min_size=2, max_size=3, unique=True))
    adds = []
    scratch = base.copy()
    for x, z in cells:
        pose = Pose((x, 1, z), draw(rotation) if t == "B1x2J" else 0)
        if scratch.can_place(PRIM[t], pose):
            scratch.place(PRIM[t], pose)
            adds.append((PRIM[t], pose))
    assume(len(adds) >= 2)
    return base, adds


@given(same_type_steps(), cameras(), st.randoms(use_true_random=False))
@FAST
def test_detection_and_inference_order_free(case, cam, rnd):
    base, adds = case
    shuffled = list(adds)
    rnd.shuffle(shuffled)
    a = oracle_detect(base, adds, cam)
    b = oracle_detect(base, shuffled, cam)
    name = adds[0][0].name
    assert [d.keypoint for d in a.detections[name]] == [d.keypoint for d in b.detections[name]]
    perm = list(b.detections[name])
    rnd.shuffle(perm)
    b.detections[name] = perm
    comps = {name: adds[0][0]}
    pa = sorted((p.hu, p.rotation) for _, p in infer_step(a, base, comps, cam))
    pb = sorted((p.hu, p.rotation) for _, p in infer_step(b, base, comps, cam))
    assert pa == pb


@given(cameras(), st.sampled_from(["B1x1", "B1x2", "B2x2", "B2x4"]), rotation,
       st.integers(4, 7), st.integers(4, 7), st.floats(0, 2 * np.pi), st.floats(0, 0.999))
@FAST
def test_snapping_radius_on_flat_field(cam, t, r, x, z, ang, frac):
    """On a one-level stud field, keypoint noise below tau/2 never changes the top candidate."""
    base = VoxelWorld((24, 10, 24))
    for bx in range(2, 10, 2):
        base.place(PRIM["B2x4"], Pose((bx, 0, 2)))
        base.place(PRIM["B2x4"], Pose((bx, 0, 6)))
    c = PRIM[t]
    pose = Pose((x, 1, z), r)
    assume(r % 2 == 0 or c.symmetry_order == 4 or c.shape.rotated(r).voxels[:, 0].min() % 2 == 0)
    assume(base.can_place(c, pose))
    kp_hu, _ = component_keypoint(c, r)
    kp = project(cam, kp_hu + np.asarray(pose.translation))
    exact = infer_translation(kp, c, r, base, cam)[0]
    assert exact.translation == pose.translation
    delta = frac * default_tau(cam) / 2 * np.array([np.cos(ang), np.sin(ang)])
    assert infer_translation(kp + delta, c, r, base, cam)[0].translation == pose.translation


@given(worlds(4, 1), submodules(), cameras(), st.integers(0, 24), st.integers(0, 24), rotation)
@FAST
def test_synthesis_pose_is_valid(w, sub, cam, x, z, r):
    assume(not w.is_empty())
    # lowest height at which the submodule fits and connects
    pose = next(
        (p for p in (Pose.from_hu((x, y, z), r) for y in range(0, 8, 2)) if w.can_place(sub, p)), None
    )
    assume(pose is not None)
    obs = oracle_detect(w, [(sub, pose)], cam)
    det = obs.detections["S"][0]
    assume(det.mask.any())
    try:
        hyp = infer_rotation_by_synthesis(sub, det.keypoint, det.mask, w, cam)
    except NoCandidate:
        return
    assert w.can_place(sub, hyp.pose, require_connection=True)


@given(worlds(4), st.sampled_from(SMALL_TYPES), rotation,
       st.lists(st.floats(-1, 9), min_size=3, max_size=3))
@settings(max_examples=150, deadline=None)
def test_quantize_matches_brute_force(w, t, r, raw):
    c = PRIM[t]
    sw = SetWorld(DIMS)
    for inst in w.instances.values():
        sw.add(inst.shape)

    def shape_at(tr):
        return c.shape.posed(Pose(tr, r))

    want = nearest_valid_pose(raw, shape_at, sw)
    assert quantize_pose_baseline(raw, c, r, w).translation == want


# -- execution -------------------------------------------------------------------


@given(st.lists(st.tuples(st.sampled_from(["B1x1", "B2x4", "B1x2J"]), st.integers(0, 6), rotation),
                min_size=1, max_size=6),
       st.randoms(use_true_random=False))
@FAST
def test_pose_accuracy_permutation_invariant(items, rnd):
    gt = [(PRIM[t], Pose((x, 0, 0), r)) for t, x, r in items]
    pred = [(c, Pose((p.translation[0] + (i % 2) * 0.5, 0, 0), p.rotation)) for i, (c, p) in enumerate(gt)]
    base = pose_accuracy(pred, gt)
    p2, g2 = list(pred), list(gt)
    rnd.shuffle(p2)
    rnd.shuffle(g2)
    assert pose_accuracy(p2, g2) == base


@given(worlds(4, 1), worlds(4, 1), st.integers(0, 100))
@FAST
def test_chamfer_symmetric_nonnegative(a, b, seed):
    assume(not a.is_empty() and not b.is_empty())
    ab = chamfer(a, b, 300, seed)
    assert ab >= 0 and abs(ab - chamfer(b, a, 300, seed)) < 1e-15
    assert chamfer(a, a, 300, seed) == 0.0


# -- generator -------------------------------------------------------------------


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_generated_plans_round_trip(seed):
    cfg = GenConfig(seed=seed)
    gs = generate_set(cfg, set_rng(seed, 0))
    for _, step in gs.plan.all_steps():
        assert len(step.additions) <= cfg.max_instances and len(step.counts()) <= cfg.max_types
    assert same_occupancy(replay_plan(gs.plan), gs.world)
