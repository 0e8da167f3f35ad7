"""Command-line front end: ``posevote <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error
(unreadable scene, degenerate input, failed check).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    config_hash,
    load_config,
    loss_settings,
    noise_spec,
    refine_config,
    scene_specs,
    symmetries,
)
from .core import InvalidArgumentError, Pose, PoseGeometryError
from .formats import (
    FORMAT_VERSION,
    FormatError,
    atomic_write_text,
    dumps,
    make_manifest,
    read_scene,
    rows_to_csv,
    write_scene,
)
from .losses import (
    bb_pose_grads,
    bb_pose_loss,
    grad_check,
    pc_pose_grad,
    pc_pose_loss,
    pc_size_grad,
    pc_size_loss,
    perturb,
    total_loss,
)
from .metrics import (
    ACCURACY_THRESHOLDS,
    IOU_THRESHOLDS,
    aligned_gt_for_iou,
    iou_3d,
    rotation_error,
    translation_error_cm,
)
from .solver import box_pose, fit_face_planes, recover_box, recover_pose, refine_pose
from .synth import PredictionBundle, corrupt_bundle, generate_scene, make_bundle

log = logging.getLogger("posevote")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- helpers ------------------------------------------------------------------------

def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=1, sort_keys=True) if args.json else text)


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _bundle_for(scene, votes, cfg, profile: str, seed: int) -> PredictionBundle:
    settings = loss_settings(cfg)
    bundle = make_bundle(scene, cfg["eval"]["vote_mode"], settings.k1, settings.k2)
    if votes is not None:
        bundle = PredictionBundle(bundle.rotation, bundle.t_res, bundle.s_res, votes,
                                  bundle.reconstruction)
    # scene seeds are distinct, so mixing them with the run seed decorrelates scenes
    return corrupt_bundle(bundle, noise_spec(cfg, profile), seed * 1_000_003 + scene.spec.seed)


def _load_pose(path: str) -> Pose:
    try:
        return Pose.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"cannot read pose file {path}: {exc}") from None


# --- gen ----------------------------------------------------------------------------

def _gen_one(job):
    spec, sym, out_dir, with_votes = job
    scene = generate_scene(spec, sym)
    name = f"scene_{spec.seed:06d}.json"
    votes = make_bundle(scene).votes if with_votes else None
    write_scene(Path(out_dir) / name, scene, votes)
    return {"file": name, "seed": spec.seed, "shape": spec.shape, "spec": spec.to_dict()}


def cmd_gen(args, cfg) -> int:
    specs = scene_specs(cfg, args.seed)
    syms = symmetries(cfg)
    for s in specs:
        if s.shape not in syms:
            raise ConfigError(f"no symmetry entry for shape {s.shape!r}", "categories")
    out = Path(args.out_dir)
    jobs = [(s, syms[s.shape], str(out), args.votes) for s in specs]
    entries = _map(_gen_one, jobs, args.jobs)
    manifest = make_manifest(entries, args.seed, config_hash(cfg))
    atomic_write_text(out / "manifest.json", dumps(manifest))
    _emit(args, {"scenes": len(entries), "manifest_hash": manifest["manifest_hash"]},
          f"wrote {len(entries)} scenes to {out} (manifest {manifest['manifest_hash'][:12]})")
    return EXIT_OK


# --- eval / recover -------------------------------------------------------------------

def _evaluate(scene, votes, cfg, profile: str, seed: int, refine: bool) -> dict:
    """Closed-form (optionally refined) pose and voted box for one scene."""
    bundle = _bundle_for(scene, votes, cfg, profile, seed)
    sym = scene.symmetry
    pose = recover_pose(bundle, scene.cloud, scene.prior)
    row = {"scene": "", "shape": scene.shape, "seed": scene.spec.seed, "refined": False}
    box = None
    try:
        planes = fit_face_planes(bundle.votes, scene.cloud, cfg["eval"]["weighted"])
        box = box_pose(recover_box(planes))
    except PoseGeometryError as exc:
        log.warning("scene seed %d: box recovery failed: %s", scene.spec.seed, exc)
    if refine and box is not None:
        pose, _ = refine_pose(pose, scene.cloud, planes, scene.visible, refine_config(cfg))
        row["refined"] = True
    row["rot_err_deg"] = rotation_error(pose.R, scene.gt.R, sym)
    row["trans_err_cm"] = translation_error_cm(pose.t, scene.gt.t)
    gt_box = aligned_gt_for_iou(pose, scene.gt, sym)
    row["iou"] = iou_3d(pose, gt_box, int(cfg["metrics"]["iou_samples"]), seed).iou
    if box is not None:
        row["box_rot_err_deg"] = rotation_error(box.R, scene.gt.R, sym)
        row["box_trans_err_cm"] = translation_error_cm(box.t, scene.gt.t)
    else:
        row["box_rot_err_deg"] = row["box_trans_err_cm"] = math.nan
    row["pose"] = pose.to_dict()
    row["box"] = None if box is None else box.to_dict()
    return row


def _eval_one(job):
    path, cfg, profile, seed, refine = job
    scene, votes = read_scene(path)
    row = _evaluate(scene, votes, cfg, profile, seed, refine)
    row["scene"] = Path(path).name
    return row


def aggregate(rows: list[dict]) -> dict:
    """Aggregate metrics from per-scene rows (the report and CSV share this)."""
    rot = np.array([r["rot_err_deg"] for r in rows], dtype=float)
    trans = np.array([r["trans_err_cm"] for r in rows], dtype=float)
    iou = np.array([r["iou"] for r in rows], dtype=float)
    brot = np.array([r["box_rot_err_deg"] for r in rows], dtype=float)
    btrans = np.array([r["box_trans_err_cm"] for r in rows], dtype=float)
    acc = {f"{d:g}deg{c:g}cm": float(np.mean((rot < d) & (trans < c))) for d, c in ACCURACY_THRESHOLDS}
    box_acc = {f"{d:g}deg{c:g}cm": float(np.mean((brot < d) & (btrans < c)))
               for d, c in ACCURACY_THRESHOLDS}
    ious = {f"iou{round(100 * th)}": float(np.mean(iou >= th)) for th in IOU_THRESHOLDS}
    return {"n_scenes": len(rows), "accuracy": acc, "box_accuracy": box_acc, "iou": ious,
            "box_failures": int(np.sum(np.isnan(brot)))}


def cmd_eval(args, cfg) -> int:
    scene_dir = Path(args.scene_dir)
    if not scene_dir.is_dir():
        raise FileNotFoundError(f"scene directory {scene_dir} does not exist")
    paths = sorted(scene_dir.glob("scene_*.json"))
    if not paths:
        raise FormatError(f"no scene files in {scene_dir}")
    profile = args.profile or cfg["eval"]["noise_profile"]
    noise_spec(cfg, profile)  # unknown profile is a config error before any work
    refine = args.refine or bool(cfg["eval"]["refine"])
    rows = _map(_eval_one, [(str(p), cfg, profile, args.seed, refine) for p in paths], args.jobs)
    agg = aggregate(rows)
    report = {"format_version": FORMAT_VERSION, "tool_version": __version__,
              "config_hash": config_hash(cfg), "seed": args.seed, "noise_profile": profile,
              "refined": refine, **agg}
    out = Path(args.out) if args.out else scene_dir / "report.json"
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    atomic_write_text(csv_path, rows_to_csv(rows))
    atomic_write_text(out, dumps(report))
    lines = [f"{len(rows)} scenes, profile {profile}"]
    lines += [f"  {k:<12} {v:.3f}" for k, v in agg["accuracy"].items()]
    lines += [f"  {k:<12} {v:.3f}" for k, v in agg["iou"].items()]
    lines.append(f"report: {out}  rows: {csv_path}")
    _emit(args, report, "\n".join(lines))
    return EXIT_OK


def cmd_recover(args, cfg) -> int:
    scene, votes = read_scene(args.scene_file)
    profile = args.profile or cfg["eval"]["noise_profile"]
    row = _evaluate(scene, votes, cfg, profile, args.seed, args.refine)
    row["scene"] = Path(args.scene_file).name
    text = (f"pose  t={np.round(row['pose']['t'], 6).tolist()} s={np.round(row['pose']['s'], 6).tolist()}\n"
            f"      rotation error {row['rot_err_deg']:.4f} deg, translation error "
            f"{row['trans_err_cm']:.4f} cm, IoU {row['iou']:.4f}\n"
            f"box   rotation error {row['box_rot_err_deg']:.4f} deg, translation error "
            f"{row['box_trans_err_cm']:.4f} cm")
    _emit(args, row, text)
    return EXIT_OK


# --- audit-loss -----------------------------------------------------------------------

def cmd_audit_loss(args, cfg) -> int:
    scene, votes = read_scene(args.scene_file)
    settings = loss_settings(cfg)
    bundle = _bundle_for(scene, votes, cfg, args.profile or "noiseless", args.seed)
    pose = _load_pose(args.pose) if args.pose else scene.gt
    planes = fit_face_planes(bundle.votes, scene.cloud, cfg["eval"]["weighted"])
    b = total_loss(pose, scene.cloud, planes=planes, visible=scene.visible, gt=scene.gt,
                   rotation=bundle.rotation, votes=bundle.votes,
                   reconstruction=bundle.reconstruction, symmetry=scene.symmetry,
                   settings=settings)
    terms = b.as_dict()
    w = settings.weights
    weighted = {
        "basic": w.basic * b.basic,
        "pc": w.pc * (w.lambda4 * b.pc_rt + w.lambda5 * b.pc_s),
        "bb": w.bb * (w.lambda6 * b.bb_r + w.lambda7 * b.bb_t + w.lambda8 * b.bb_s),
    }
    payload = {"pose": "override" if args.pose else "gt", "terms": terms, "weighted": weighted}
    lines = [f"{k:<16} {v:.6e}" for k, v in terms.items() if k != "total"]
    lines += [f"{'weighted ' + k:<16} {v:.6e}" for k, v in weighted.items()]
    lines.append(f"{'total':<16} {terms['total']:.6e}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


# --- gradcheck ------------------------------------------------------------------------

def _loss_fns(P, planes, visible, settings, base: Pose):
    # the clamp zeroes the size score gradient on its plateaus, which would make
    # the check vacuous, so the unclamped score is differentiated instead
    size = dataclasses.replace(settings.size, mode="raw")
    h = settings.huber
    fns = {
        "pc_rt": (lambda p: pc_pose_loss(P, p, h), lambda p: pc_pose_grad(P, p, h)),
        # size score: differentiated in s only, with R and t held at the base pose
        "pc_s": (lambda p: pc_size_loss(P, base.with_(s=p.s), visible, size, 1.0, settings.bin_seed),
                 lambda p: pc_size_grad(P, base.with_(s=p.s), visible, size, settings.bin_seed)),
    }
    for k in ("bb_r", "bb_t", "bb_s"):
        fns[k] = (lambda p, k=k: getattr(bb_pose_loss(p, planes, h), k),
                  lambda p, k=k: bb_pose_grads(p, planes, h)[k])
    return fns


def run_gradcheck(cfg, seed: int, eps: float, points: int, break_term: str | None = None,
                  max_redraws: int = 20) -> dict[str, dict]:
    """Worst relative error per loss over ``points`` seeded smooth poses."""
    settings = loss_settings(cfg)
    kink_tol = float(cfg["gradcheck"]["kink_tol"])
    rng = np.random.default_rng(seed)
    specs = scene_specs({**cfg, "generation": {**cfg["generation"], "n": points}}, seed)
    worst: dict[str, dict] = {}
    for spec in specs:
        scene = generate_scene(spec)
        planes = fit_face_planes(make_bundle(scene).votes, scene.cloud)
        for _ in range(max_redraws):
            delta = np.concatenate([rng.normal(scale=0.05, size=3), rng.normal(scale=0.01, size=3),
                                    rng.normal(scale=0.005, size=3)])
            pose = perturb(scene.gt, delta)
            fns = _loss_fns(scene.cloud, planes, scene.visible, settings, pose)
            if break_term is not None:
                f, g = fns[break_term]
                fns[break_term] = (f, lambda p, g=g: 1.5 * g(p) + 1e-3)
            res = {k: grad_check(f, g, pose, eps, kink_tol) for k, (f, g) in fns.items()}
            if not any(r.non_smooth for r in res.values()):
                break
        for k, r in res.items():
            w = worst.setdefault(k, {"max_rel_error": 0.0, "non_smooth": False})
            w["max_rel_error"] = max(w["max_rel_error"], r.max_rel_error)
            w["non_smooth"] = w["non_smooth"] or r.non_smooth
    return worst


def cmd_gradcheck(args, cfg) -> int:
    gc = cfg["gradcheck"]
    eps = float(gc["eps"]) if args.eps is None else args.eps
    if not eps > 0:
        raise UsageError("--eps must be positive")
    points = int(gc["points"]) if args.points is None else args.points
    if points < 1:
        raise UsageError("--points must be >= 1")
    tol = float(gc["tol"])
    worst = run_gradcheck(cfg, args.seed, eps, points, args.break_gradient)
    ok = True
    lines = [f"{'loss':<8} {'max rel err':>12}  result"]
    for k, w in worst.items():
        passed = w["max_rel_error"] <= tol and not w["non_smooth"]
        w["passed"] = passed
        ok &= passed
        lines.append(f"{k:<8} {w['max_rel_error']:12.3e}  {'pass' if passed else 'FAIL'}"
                     + ("  (kink)" if w["non_smooth"] else ""))
    _emit(args, {"eps": eps, "points": points, "tol": tol, "losses": worst, "passed": ok},
          "\n".join(lines))
    if not ok:
        raise CheckFailed("gradient check failed")
    return EXIT_OK


# --- iou ------------------------------------------------------------------------------

def cmd_iou(args, cfg) -> int:
    a, b = _load_pose(args.box_a), _load_pose(args.box_b)
    samples = int(cfg["metrics"]["iou_samples"]) if args.samples is None else args.samples
    if samples < 1:
        raise UsageError("--samples must be >= 1")
    if args.symmetry:
        syms = symmetries(cfg)
        if args.symmetry not in syms:
            raise UsageError(f"unknown category {args.symmetry!r}")
        b = aligned_gt_for_iou(a, b, syms[args.symmetry])
    est = iou_3d(a, b, samples, args.seed)
    _emit(args, {"iou": est.iou, "stderr": est.stderr, "samples": est.samples, "seed": est.seed},
          f"IoU {est.iou:.6f} +/- {est.stderr:.6f} ({est.samples} samples)")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file overriding the packaged defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-scene work")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="posevote", description="Geometric pose recovery from per-point box votes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate synthetic scenes")
    g.add_argument("out_dir")
    g.add_argument("--shapes", help="comma-separated shapes (box, cylinder, laptop)")
    g.add_argument("--n", type=int, help="number of scenes")
    g.add_argument("--n-points", type=int)
    g.add_argument("--noise-sigma", type=float)
    g.add_argument("--outlier-fraction", type=float)
    g.add_argument("--view", type=float, nargs=3, metavar=("X", "Y", "Z"))
    g.add_argument("--votes", action="store_true", help="store exact votes in each scene file")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("eval", parents=[common], help="recover and score every scene in a directory")
    e.add_argument("scene_dir")
    e.add_argument("--profile", help="noise profile name from the config")
    e.add_argument("--out", help="report JSON path (default <scene_dir>/report.json)")
    e.add_argument("--csv", help="per-scene CSV path (default next to the report)")
    e.add_argument("--refine", action="store_true")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("recover", parents=[common], help="recover the pose of one scene")
    r.add_argument("scene_file")
    r.add_argument("--profile")
    r.add_argument("--refine", action="store_true")
    r.set_defaults(func=cmd_recover)

    a = sub.add_parser("audit-loss", parents=[common], help="print every loss term at a pose")
    a.add_argument("scene_file")
    a.add_argument("--pose", help="pose JSON {R, t, s}; default is the ground truth")
    a.add_argument("--profile", help="noise profile for the simulated predictions")
    a.set_defaults(func=cmd_audit_loss)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of loss gradients")
    c.add_argument("--eps", type=float)
    c.add_argument("--points", type=int)
    c.add_argument("--break-gradient", choices=["pc_rt", "pc_s", "bb_r", "bb_t", "bb_s"],
                   help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("iou", parents=[common], help="Monte-Carlo IoU of two pose/box JSON files")
    i.add_argument("box_a")
    i.add_argument("box_b")
    i.add_argument("--samples", type=int)
    i.add_argument("--symmetry", help="category of box_b; aligns it about a rotational axis")
    i.set_defaults(func=cmd_iou)
    return p


def _overrides(args) -> dict:
    gen = {}
    if getattr(args, "shapes", None):
        gen["shapes"] = [s.strip() for s in args.shapes.split(",") if s.strip()]
    for key in ("n", "n_points", "noise_sigma", "outlier_fraction"):
        v = getattr(args, key, None)
        if v is not None:
            gen[key] = v
    if getattr(args, "view", None) is not None:
        gen["view"] = list(args.view)
    return {"generation": gen} if gen else {}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = load_config(args.config, _overrides(args))
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"posevote: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckFailed as exc:
        print(f"posevote: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (PoseGeometryError, InvalidArgumentError, OSError) as exc:
        print(f"posevote: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
