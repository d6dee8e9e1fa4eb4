"""Command line: gen, infer, exec, eval, render.

Every command prints a JSON summary on stdout.  Failures print
``{"error": kind, "message": ...}`` on stderr and exit with 2 (usage),
3 (invalid input) or 1 (runtime failure).  Defaults for ``--seed`` and
``--jobs`` can come from BRICKMANUAL_SEED and BRICKMANUAL_JOBS.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .camera import load_camera, rasterize, render_manual, write_pgm16, write_png
from .catalog import CatalogError, CompositionError, load_catalog
from .detector import NoiseSpec
from .execution import (
    CHAMFER_SCALE,
    EmptyShape,
    InferenceSource,
    _score_step,
    execute_plan,
    ground_truth_source,
)
from .infer import RANKINGS
from .mangen import AssemblyPlan, GenConfig, PlanError, emit_dataset, load_set
from .world import PlacementError, load_world

ENV_PREFIX = "BRICKMANUAL_"


class UsageError(Exception):
    pass


def substream(seed: int, name: str) -> int:
    """Independent seed for a named purpose, derived from the master seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{ENV_PREFIX}{name} must be an integer, got {raw!r}") from None


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _set_dirs(dataset: Path) -> list[Path]:
    manifest = dataset / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    sets = json.loads(manifest.read_text())["sets"]
    return [dataset / e["set"] for e in sets if e.get("status") == "ok"]


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# pose sources built from files


class PlanSource:
    """Poses recorded in a (predicted) plan, looked up by step id."""

    def __init__(self, plan: AssemblyPlan):
        self.by_id = {s.id: s.additions for _, s in plan.all_steps()}

    def __call__(self, plan, step, base, gt_before, components):
        adds = self.by_id.get(step.id)
        if adds is None:
            return [], [f"step {step.id} missing from predicted plan"]
        return [(components.get(c.name) or c, p) for c, p in adds], []


def _source(args, set_dir: Path):
    if args.source == "plan":
        if args.plan:
            return PlanSource(AssemblyPlan.from_json(json.loads(Path(args.plan).read_text())))
        return ground_truth_source
    noise = NoiseSpec(
        keypoint_sigma=args.sigma, rotation_flip_prob=args.flip_prob,
        mask_morph_radius=args.morph_radius, mask_morph=args.morph, seed=substream(args.seed, "noise"),
    )
    return InferenceSource(
        detector=args.source, noise=noise, synthesis=not args.no_synthesis, ranking=args.ranking,
        seed=substream(args.seed, "infer"), obs_dir=str(set_dir) if args.source == "file" else None,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> dict:
    cfg_fields = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg_fields["seed"] = args.seed
    cfg = GenConfig.from_json(cfg_fields)
    catalog = load_catalog(args.catalog) if args.catalog else None
    manifest = emit_dataset(cfg, args.sets, args.out, catalog, jobs=args.jobs, images=not args.no_images)
    failed = [e["set"] for e in manifest["sets"] if e["status"] != "ok"]
    return {"out": str(args.out), "sets": args.sets, "steps": manifest["steps"], "failed": failed}


def _infer_one(job) -> dict:
    set_dir, out_dir, args = job
    gs = load_set(set_dir)
    source = _source(args, set_dir)
    rep = execute_plan(gs.plan, source, "teacher", score_chamfer=False)
    by_id = {s.id: s for s in rep.steps}

    def predicted(plan: AssemblyPlan) -> AssemblyPlan:
        from .mangen import StepSpec

        steps = [StepSpec(s.id, by_id[s.id].predicted, s.base, s.image, s.flags) for s in plan.steps]
        subs = {n: predicted(p) for n, p in plan.submodules.items()}
        return AssemblyPlan(plan.name, plan.camera, steps, subs, plan.components, plan.dims)

    out = Path(out_dir) / set_dir.name
    _dump(out / "pred_plan.json", predicted(gs.plan).to_json(gs.catalog))
    for step_id, inf in source.reports.items():
        _dump(out / "infer" / f"{step_id}.json", inf.to_json())
    return {"set": set_dir.name, "steps": len(rep.steps), "failed_steps": sum(bool(s.errors) for s in rep.steps)}


def cmd_infer(args) -> dict:
    if args.source == "plan":
        raise UsageError("infer needs --detector oracle, noisy or file")
    sets = _set_dirs(Path(args.dataset))
    rows = _map(_infer_one, [(d, args.out, args) for d in sets], args.jobs)
    return {"out": str(args.out), "sets": rows}


def cmd_exec(args) -> dict:
    set_dir = Path(args.set)
    gs = load_set(set_dir)
    rep = execute_plan(gs.plan, _source(args, set_dir), args.mode, args.points, substream(args.seed, "chamfer"))
    out = rep.to_json()
    if args.out:
        _dump(Path(args.out), out)
    return {k: v for k, v in out.items() if k != "steps"}


def _eval_one(job) -> dict:
    pred_dir, set_dir, points, seed = job
    gs = load_set(set_dir)
    pred = AssemblyPlan.from_json(json.loads((pred_dir / "pred_plan.json").read_text()), gs.catalog)
    pred_steps = {s.id: s.additions for _, s in pred.all_steps()}
    comp_ok, step_ok, comp_cd, step_cd = [], [], [], []
    for _, step in gs.plan.all_steps():
        adds = pred_steps.get(step.id, [])
        ok, ccd, scd = _score_step(adds, step.additions, points, seed)
        comp_ok += ok
        step_ok.append(all(ok))
        comp_cd += ccd
        step_cd.append(scd)
    # setwise: replay the predicted poses in order, skipping anything that cannot be placed
    rep = execute_plan(gs.plan, PlanSource(pred), "autoregressive", points, seed)
    return {
        "set": set_dir.name,
        "componentwise_acc": float(np.mean(comp_ok)) if comp_ok else 1.0,
        "stepwise_acc": float(np.mean(step_ok)) if step_ok else 1.0,
        "componentwise_cd": float(np.nanmean(comp_cd)) * CHAMFER_SCALE if comp_cd else 0.0,
        "stepwise_cd": float(np.nanmean(step_cd)) * CHAMFER_SCALE if step_cd else 0.0,
        "setwise_cd": rep.setwise_cd * CHAMFER_SCALE,
        "mtc": 1.0 - (float(np.mean(step_ok)) if step_ok else 1.0),
        "steps": len(step_ok),
        "components": len(comp_ok),
    }


def cmd_eval(args) -> dict:
    gt_sets = _set_dirs(Path(args.gt))
    pred_root = Path(args.pred)
    jobs = [(pred_root / d.name, d, args.points, substream(args.seed, "chamfer")) for d in gt_sets]
    missing = [str(j[0]) for j in jobs if not (j[0] / "pred_plan.json").exists()]
    if missing:
        raise FileNotFoundError(f"no pred_plan.json in {missing[:3]}")
    rows = _map(_eval_one, jobs, args.jobs)
    w = np.array([r["components"] for r in rows], float)
    n = np.array([r["steps"] for r in rows], float)
    summary = {
        "schema": 1,
        "componentwise_acc": float(np.average([r["componentwise_acc"] for r in rows], weights=w)),
        "stepwise_acc": float(np.average([r["stepwise_acc"] for r in rows], weights=n)),
        "componentwise_cd": float(np.mean([r["componentwise_cd"] for r in rows])),
        "stepwise_cd": float(np.mean([r["stepwise_cd"] for r in rows])),
        "setwise_cd": float(np.mean([r["setwise_cd"] for r in rows])),
        "mtc": float(np.mean([r["mtc"] for r in rows])),
        "sets": rows,
    }
    if args.out:
        _dump(Path(args.out), summary)
    return {k: v for k, v in summary.items() if k != "sets"}


def cmd_render(args) -> dict:
    world = load_world(args.world)
    cam = load_camera(args.camera)
    new = [int(x) for x in args.new.split(",")] if args.new else []
    unknown = [i for i in new if i not in world.instances]
    if unknown:
        raise ValueError(f"--new names unknown instances {unknown}")
    raster = rasterize(cam, world)
    write_png(args.out, render_manual(cam, world, new, raster))
    if args.mask:
        write_pgm16(args.mask, raster.ids)
    return {"out": str(args.out), "mask": args.mask, "instances": len(world)}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_source(p, default: str) -> None:
    p.add_argument("--detector", dest="source", choices=["plan", "oracle", "noisy", "file"], default=default,
                   help="where poses come from: recorded plan, or inference on oracle / noisy / stored observations")
    p.add_argument("--sigma", type=float, default=0.0, help="keypoint noise, pixels (noisy detector)")
    p.add_argument("--flip-prob", type=float, default=0.0, help="rotation class flip probability (noisy detector)")
    p.add_argument("--morph-radius", type=int, default=0, help="mask erosion/dilation radius (noisy detector)")
    p.add_argument("--morph", choices=["erode", "dilate"], default="erode")
    p.add_argument("--no-synthesis", action="store_true", help="random submodule rotations instead of synthesis")
    p.add_argument("--ranking", choices=RANKINGS, default="reproj")


def build_parser() -> argparse.ArgumentParser:
    seed = _env_int("SEED", 0)
    jobs = _env_int("JOBS", 1)
    ap = _Parser(prog="brickmanual", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=seed)
        p.add_argument("--jobs", type=int, default=jobs)

    p = sub.add_parser("gen", help="generate a synthetic manual dataset")
    common(p)
    p.add_argument("--sets", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", help="JSON file with GenConfig fields")
    p.add_argument("--catalog", help="brick catalog JSON (default: bundled)")
    p.add_argument("--no-images", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("infer", help="infer poses for every step of a dataset (teacher-forced)")
    common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_source(p, "oracle")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("exec", help="execute one set's plan and score it")
    common(p)
    p.add_argument("--set", required=True, help="set directory")
    p.add_argument("--plan", help="predicted plan JSON to take poses from (with --detector plan)")
    p.add_argument("--mode", choices=["autoregressive", "teacher"], default="autoregressive")
    p.add_argument("--points", type=int, default=10000)
    p.add_argument("--out", help="write the full report here")
    _add_source(p, "plan")
    p.set_defaults(func=cmd_exec)

    p = sub.add_parser("eval", help="score predicted plans against a dataset")
    common(p)
    p.add_argument("--pred", type=Path, required=True, help="output directory of infer")
    p.add_argument("--gt", type=Path, required=True, help="dataset directory")
    p.add_argument("--points", type=int, default=10000)
    p.add_argument("--out", help="write per-set metrics here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a world snapshot")
    p.add_argument("--world", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--new", help="comma-separated instance ids to highlight")
    p.add_argument("--mask", help="also write the instance-id mask as 16-bit PGM")
    p.set_defaults(func=cmd_render)
    return ap


VALIDATION_ERRORS = (
    FileNotFoundError, json.JSONDecodeError, KeyError, CatalogError, CompositionError,
    PlanError, PlacementError, EmptyShape, ValueError,
)


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
    except UsageError as e:
        return _fail("usage", str(e), 2)
    try:
        result = args.func(args)
    except UsageError as e:
        return _fail("usage", str(e), 2)
    except VALIDATION_ERRORS as e:
        return _fail("validation", f"{type(e).__name__}: {e}", 3)
    except Exception as e:  # noqa: BLE001 - report anything else as a runtime failure
        return _fail("runtime", f"{type(e).__name__}: {e}", 1)
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
