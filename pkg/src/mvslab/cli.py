"""Command-line workbench: scene generation, plane-sweep inference, joint
three-branch depth optimization, gradient audits, fusion and evaluation.

Every pipeline is a pure function of (inputs, config, seed); repeated runs
produce byte-identical output trees.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import depthopt, fileio, fusion, planesweep, sampling, synth
from .config import RunConfig, load_config
from .grids import BinaryMask, ScalarField

EVAL_CAVEAT = ("note: published benchmark tables for this method come from "
               "networks trained on full-scale DTU; this desk-scale synthetic "
               "run reproduces the metric definitions and directional claims, "
               "not those scores.")

PRESETS = {
    "checker_plane": dict(geometry="textured_plane", texture="checker"),
    "noise_plane": dict(geometry="textured_plane", texture="noise"),
    "uniform_plane": dict(geometry="textured_plane", texture="uniform"),
    "cube": dict(geometry="cube", texture="checker"),
    "sphere": dict(geometry="sphere", texture="noise"),
    "occluder": dict(geometry="plane_with_occluder", texture="checker"),
}


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_gen_synth(args) -> int:
    cfg = _load_run_config(args)
    overrides = dict(PRESETS[args.preset])
    overrides["seed"] = cfg.seed
    if args.n_views:
        overrides["n_views"] = args.n_views
    if args.size:
        h, w = (int(t) for t in args.size.split("x"))
        overrides.update(height=h, width=w)
    spec = synth.SceneSpec(**overrides)
    scene = synth.gen_scene(spec)
    synth.save_scene(scene, args.out)
    print(f"wrote scene with {spec.n_views} views to {args.out}")
    return 0


def _regular_sample(scene, ref_id: int, n_views: int):
    reference = scene.views[ref_id]
    candidates = [v for v in scene.views if v.view_id != ref_id]
    return sampling.select_regular_views(reference, candidates,
                                         scene.pair_scores[ref_id], n_views)


def cmd_infer(args) -> int:
    cfg = _load_run_config(args)
    scene = synth.load_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    refs = [args.ref] if args.ref is not None else list(range(len(scene.views)))
    records = []
    for ref_id in refs:
        sample = _regular_sample(scene, ref_id, cfg.n_views)
        stages = planesweep.cascade_infer(sample, cfg.sweep)
        final = stages[-1]
        fileio.write_pfm(out / f"{ref_id:08d}_depth.pfm", final.depth)
        fileio.write_pfm(out / f"{ref_id:08d}_prob.pfm", final.prob_map)
        fileio.write_pfm(out / f"{ref_id:08d}_conf.pfm",
                         ScalarField(final.conf_mask.data.astype(np.float64)))
        rec = {"view": ref_id, "sources": sample.source_ids(),
               "conf_fraction": final.conf_mask.data.mean()}
        gt = scene.views[ref_id].gt_depth
        if gt is not None:
            err = np.abs(final.depth.data - gt.data)
            rec["median_abs_err_mm"] = float(np.median(err))
            rec["frac_within_2mm"] = float((err <= 2.0).mean())
        records.append(rec)
    fileio.write_records(out / "records.jsonl", records)
    print(f"inferred {len(refs)} view(s) into {args.out}")
    return 0


def cmd_optimize(args) -> int:
    cfg = _load_run_config(args)
    scene = synth.load_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = sampling.curriculum(cfg.epoch, cfg.total_epochs,
                                   base_weight=cfg.weights.image_consist_base)
    samples = synth.build_branch_samples(scene, args.ref, cfg.n_views,
                                         schedule.occlusion_rate, cfg.seed)
    opt_cfg = depthopt.OptimizerConfig(iterations=cfg.iterations, norm=cfg.norm(),
                                       weights=cfg.weights)
    state = depthopt.optimize_joint(samples, schedule, cfg.sweep, opt_cfg)
    fileio.write_records(out / "loss_history.jsonl", state.history)
    for name, short in (("regular", "reg"), ("image_contrastive", "ic"),
                        ("scene_contrastive", "sc")):
        fileio.write_pfm(out / f"depth_{short}.pfm", state.depths[name])
    fileio.write_pfm(out / "conf_mask.pfm",
                     ScalarField(state.conf_mask.data.astype(np.float64)))
    report = depthopt.eq_style_report(state, samples, opt_cfg,
                                      schedule.image_consist_weight)
    fileio.write_records(out / "final_report.jsonl",
                         [{"total": report.total, **{f"component_{k}": v
                            for k, v in report.components.items()}}])
    print(f"optimized 3 branches for view {args.ref}; total={report.total:.6f}")
    return 0


def cmd_grad_check(args) -> int:
    cfg = _load_run_config(args)
    records = []
    worst = {}
    for case_idx in range(args.cases):
        case = depthopt.random_audit_case(cfg.seed + case_idx)
        reports = depthopt.audit_case(case.sample, case.depth,
                                      case.configs(cfg.norm()), h=args.h)
        for term, rep in reports.items():
            records.append({"case": case_idx, "term": term, "checked": rep.n_checked,
                            "passed": rep.n_passed, "frac": rep.frac_passed,
                            "max_rel_err": rep.max_rel_err})
            prev = worst.get(term)
            if prev is None or rep.frac_passed < prev[0]:
                worst[term] = (rep.frac_passed, rep.max_rel_err)
    ok = True
    for term, (frac, max_rel) in sorted(worst.items()):
        status = "ok" if frac >= 0.99 else "FAIL"
        ok &= frac >= 0.99
        print(f"grad-check {term}: worst pass fraction {frac:.4f}, "
              f"worst max rel err {max_rel:.2e} [{status}]")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        fileio.write_records(Path(args.out) / "grad_check.jsonl", records)
    return 0 if ok else 2


def _load_depth_views(scene, depths_dir) -> list[fusion.DepthView]:
    views = []
    for view in scene.views:
        vid = view.view_id
        depth = fileio.read_pfm(Path(depths_dir) / f"{vid:08d}_depth.pfm")
        prob = fileio.read_pfm(Path(depths_dir) / f"{vid:08d}_prob.pfm")
        views.append(fusion.DepthView(depth, prob, view.camera, view.image, vid))
    return views


def cmd_fuse(args) -> int:
    cfg = _load_run_config(args)
    scene = synth.load_scene(args.scene)
    views = _load_depth_views(scene, args.depths)
    masks = fusion.geometric_consistency_filter(views, cfg.fusion)
    cloud = fusion.fuse_point_cloud(views, masks, cfg.fusion)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_ply(out, cloud.points, cloud.colors)
    survivors = {f"survivors_view_{i}": int(m.data.sum()) for i, m in enumerate(masks)}
    fileio.write_records(out.with_suffix(".jsonl"),
                         [{"points": len(cloud), **survivors}])
    print(f"fused {len(cloud)} points into {args.out}")
    return 0


def _gt_cloud(scene, stride: int = 2) -> fusion.PointCloud:
    from .geometry import backproject, pixel_grid
    pts = []
    for view in scene.views:
        gt = view.gt_depth
        grid = pixel_grid(gt.height, gt.width)[::stride, ::stride]
        pts.append(backproject(view.camera, grid,
                               gt.data[::stride, ::stride]).reshape(-1, 3))
    pts = np.concatenate(pts)
    return fusion.PointCloud(pts, np.full((len(pts), 3), 255, dtype=np.uint8))


def cmd_eval(args) -> int:
    scene = synth.load_scene(args.scene)
    records = []
    print(f"{'view':>4} {'<=2mm':>8} {'<=4mm':>8} {'<=8mm':>8}")
    for view in scene.views:
        vid = view.view_id
        path = Path(args.depths) / f"{vid:08d}_depth.pfm"
        if not path.exists():
            continue
        depth = fileio.read_pfm(path)
        valid = BinaryMask(np.ones(depth.data.shape, dtype=bool))
        fr = fusion.depth_metrics(depth, view.gt_depth, valid)
        print(f"{vid:>4} {fr[2.0]:>8.3f} {fr[4.0]:>8.3f} {fr[8.0]:>8.3f}")
        records.append({"view": vid, "frac_2mm": fr[2.0], "frac_4mm": fr[4.0],
                        "frac_8mm": fr[8.0]})
    if args.cloud:
        pts, cols = fileio.read_ply(args.cloud)
        pred = fusion.PointCloud(pts, cols)
        gt = _gt_cloud(scene)
        acc, comp, overall = fusion.cloud_metrics(pred, gt)
        print(f"cloud: acc={acc:.3f}mm comp={comp:.3f}mm overall={overall:.3f}mm")
        records.append({"cloud_acc_mm": acc, "cloud_comp_mm": comp,
                        "cloud_overall_mm": overall})
    print(EVAL_CAVEAT)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        fileio.write_records(Path(args.out) / "eval.jsonl", records)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvslab",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON run-config file")
    parser.add_argument("--seed", type=int, default=None, help="master RNG seed")
    parser.add_argument("--out", dest="global_out", default=None,
                        help="output path (per-command --out takes precedence)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="render a synthetic scene")
    p.add_argument("--preset", choices=sorted(PRESETS), default="checker_plane")
    p.add_argument("--n-views", type=int, default=None)
    p.add_argument("--size", help="HxW, e.g. 64x80")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gen_synth, needs_out=True)

    p = sub.add_parser("infer", help="plane-sweep depth inference")
    p.add_argument("--scene", required=True)
    p.add_argument("--ref", type=int, default=None, help="single reference view")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_infer, needs_out=True)

    p = sub.add_parser("optimize", help="three-branch joint depth optimization")
    p.add_argument("--scene", required=True)
    p.add_argument("--ref", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_optimize, needs_out=True)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--cases", type=int, default=4)
    p.add_argument("--h", type=float, default=3e-4, help="FD step in mm")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_grad_check, needs_out=False)

    p = sub.add_parser("fuse", help="filter depth maps and fuse a point cloud")
    p.add_argument("--scene", required=True)
    p.add_argument("--depths", required=True, help="directory written by infer")
    p.add_argument("--out", default=None, help="output PLY path")
    p.set_defaults(fn=cmd_fuse, needs_out=True)

    p = sub.add_parser("eval", help="depth and point-cloud metrics")
    p.add_argument("--scene", required=True)
    p.add_argument("--depths", required=True)
    p.add_argument("--cloud", default=None, help="fused PLY to score")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval, needs_out=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out is None:
        args.out = args.global_out
    if args.out is None and args.needs_out:
        print(f"error: {args.command} requires --out", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except Exception as exc:  # surface a diagnostic, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
