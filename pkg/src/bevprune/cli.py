"""Command-line entry point: gen | train | predict | prune | eval | bench | viz.

Exit codes: 0 success, 2 usage error, 3 prerequisite missing, 4 data error,
5 numeric divergence.  The MJP_SEED environment variable overrides the
configured seed; --full-grid switches to the full-scale grid dimensions.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .bench import run_sweep
from .config import GridConfig, RunConfig, load_config
from .data import generate_dataset, read_scene, scene_dirs
from .errors import (BevPruneError, DataError, DivergenceError, FormatError,
                     PrerequisiteError)
from .pipeline import Pipeline
from .predictor import (PredictorWeights, load_head, load_predictor, save_head,
                        save_history, save_predictor, score_cells, topk_masks,
                        train_stage1_task, train_stage2_consistency,
                        train_stage3_joint, train_stage4_finetune)
from .pruning import prune_frame, write_pruned_frame
from .taskproxy import performance
from .viz import render_report
from .voxelgrid import MaskGrid, load_mask, save_mask

STAGE_ARTIFACTS = {
    "task": ("stage1_head.json",),
    "cons": ("stage2_predictor.json",),
    "joint": ("stage3_predictor.json", "stage3_head.json"),
    "finetune": ("stage4_head.json", "stage4_meta.json"),
}
STAGE_REQUIRES = {
    "task": (),
    "cons": ("stage1_head.json",),
    "joint": ("stage1_head.json", "stage2_predictor.json"),
    "finetune": ("stage3_predictor.json", "stage3_head.json"),
}


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "full_grid", False):
        cfg.grid = GridConfig.full_scale()
    env_seed = os.environ.get("MJP_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise DataError(f"MJP_SEED must be an integer, got {env_seed!r}") from exc
        cfg.scene.seed = seed
        cfg.train.seed = seed
    if getattr(args, "seed", None) is not None:
        cfg.scene.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def _require(art_dir: Path, names) -> None:
    for name in names:
        if not (art_dir / name).exists():
            raise PrerequisiteError(f"missing artifact {art_dir / name}; run the earlier stage first")


def _load_packs(pipeline: Pipeline, data_dir):
    return [pipeline.frame_pack(read_scene(d)) for d in scene_dirs(data_dir)]


def _cmd_gen(args) -> int:
    cfg = _load_run_config(args)
    paths = generate_dataset(args.out, args.scenes, cfg.scene, cfg.camera)
    print(f"gen: wrote {len(paths)} scenes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    art_dir = Path(args.out)
    art_dir.mkdir(parents=True, exist_ok=True)
    _require(art_dir, STAGE_REQUIRES[args.stage])
    pipeline = Pipeline(cfg)
    packs = _load_packs(pipeline, args.data)
    tc = cfg.train
    if args.stage == "task":
        head, history = train_stage1_task(packs, tc)
        save_head(art_dir / "stage1_head.json", head)
        save_history(art_dir / "train_task.jsonl", history)
    elif args.stage == "cons":
        pw, history = train_stage2_consistency(packs, tc)
        save_predictor(art_dir / "stage2_predictor.json", pw, tc.theta)
        save_history(art_dir / "train_cons.jsonl", history)
    elif args.stage == "joint":
        head = load_head(art_dir / "stage1_head.json")
        pw, _ = load_predictor(art_dir / "stage2_predictor.json")
        pw, head, history = train_stage3_joint(packs, tc, pw, head)
        save_predictor(art_dir / "stage3_predictor.json", pw, tc.theta)
        save_head(art_dir / "stage3_head.json", head)
        save_history(art_dir / "train_joint.jsonl", history)
    else:
        pw, theta = load_predictor(art_dir / "stage3_predictor.json")
        head = load_head(art_dir / "stage3_head.json")
        ratio = tc.target_ratio if args.ratio is None else args.ratio
        head, _, history = train_stage4_finetune(packs, ratio, tc, pw, head, pipeline)
        save_head(art_dir / "stage4_head.json", head)
        with open(art_dir / "stage4_meta.json", "w") as fh:
            json.dump({"ratio": ratio}, fh, sort_keys=True)
            fh.write("\n")
        save_history(art_dir / "train_finetune.jsonl", history)
    print(f"train --stage {args.stage}: artifacts in {art_dir}")
    return 0


def _cmd_predict(args) -> int:
    cfg = _load_run_config(args)
    art_dir = Path(args.artifacts)
    _require(art_dir, ("stage3_predictor.json",))
    pw, theta = load_predictor(art_dir / "stage3_predictor.json")
    pipeline = Pipeline(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for d in scene_dirs(args.data):
        pack = pipeline.frame_pack(read_scene(d))
        scores = score_cells(pw, pack.cell_features)
        if args.ratio is None:
            mask = MaskGrid.from_scores(pipeline.mask_dims, scores, theta)
        else:
            mask = MaskGrid.from_topk(pipeline.mask_dims, scores, args.ratio, theta)
        save_mask(out_dir / f"{d.name}.mjpm", mask)
    print(f"predict: masks in {out_dir}")
    return 0


def _cmd_prune(args) -> int:
    cfg = _load_run_config(args)
    pipeline = Pipeline(cfg)
    out_dir = Path(args.out)
    for d in scene_dirs(args.data):
        mask_path = Path(args.masks) / f"{d.name}.mjpm"
        if not mask_path.exists():
            raise PrerequisiteError(f"missing mask {mask_path}; run predict first")
        frame = read_scene(d)
        mask = load_mask(mask_path)
        outcome = prune_frame(frame, mask, pipeline.bm, pipeline.spec, pipeline.fp)
        write_pruned_frame(outcome, frame, mask, out_dir / d.name)
    print(f"prune: pruned frames in {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    art_dir = Path(args.artifacts)
    _require(art_dir, ("stage1_head.json",))
    head = load_head(art_dir / "stage1_head.json")
    pipeline = Pipeline(cfg)
    rows = []
    for d in scene_dirs(args.data):
        pack = pipeline.frame_pack(read_scene(d))
        row = {"scene": d.name,
               "iou_anchor": performance(head, pipeline.fused_map(pack.s0), pack.truth)}
        if args.masks:
            mask_path = Path(args.masks) / f"{d.name}.mjpm"
            if not mask_path.exists():
                raise PrerequisiteError(f"missing mask {mask_path}")
            mask = load_mask(mask_path)
            _, fused, outcome = pipeline.masked_maps(pack.frame, mask)
            row["iou_pruned"] = performance(head, pipeline.fused_map(fused.values), pack.truth)
            row["prune_ratio_voxels"] = outcome.prune_ratio_voxels
        rows.append(row)
    summary = {
        "n_scenes": len(rows),
        "mean_iou_anchor": sum(r["iou_anchor"] for r in rows) / len(rows),
        "scenes": rows,
    }
    if args.masks:
        summary["mean_iou_pruned"] = sum(r["iou_pruned"] for r in rows) / len(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"eval: mean anchor IoU {summary['mean_iou_anchor']:.3f} -> {out / 'eval.json'}")
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_run_config(args)
    art_dir = Path(args.artifacts)
    _require(art_dir, ("stage1_head.json", "stage3_predictor.json"))
    head = load_head(art_dir / "stage1_head.json")
    pw, theta = load_predictor(art_dir / "stage3_predictor.json")
    if args.ratios:
        cfg.bench = dataclasses.replace(
            cfg.bench, ratios=tuple(float(r) for r in args.ratios.split(",")))
    pipeline = Pipeline(cfg)
    packs = _load_packs(pipeline, args.data)
    report, timing = run_sweep(pipeline, packs, pw, head, cfg.bench, theta,
                               cfg.train.seed, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "timing.json", "w") as fh:
        json.dump(timing, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"bench: report in {out / 'report.json'}")
    return 0


def _cmd_viz(args) -> int:
    try:
        with open(args.report) as fh:
            report = json.load(fh)
    except FileNotFoundError as exc:
        raise PrerequisiteError(f"missing report {args.report}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid report JSON: {exc}", path=args.report) from exc
    paths = render_report(report, args.out)
    print("viz: " + ", ".join(str(p) for p in paths))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevprune",
        description="BEV-anchored joint pruning of LiDAR points and camera patches")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--full-grid", action="store_true",
                       help="use the full-scale 1024x1024x80 grid")
        p.add_argument("--jobs", type=int, default=1,
                       help="frame-level parallelism (default 1, reproducible)")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--stage", choices=("task", "cons", "joint", "finetune"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--ratio", type=float, help="stage-4 drop ratio (default: config target)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="write pruning masks for a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, help="top-k drop ratio (default: threshold mask)")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("prune", help="apply masks to raw sensor inputs")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("eval", help="evaluate anchor (and optionally pruned) IoU")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--masks")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="run the drop-ratio sweep")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", help="comma-separated drop ratios")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("viz", help="plot a sweep report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_viz)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PrerequisiteError as exc:
        print(f"error: prerequisite: {exc}", file=sys.stderr)
        return 3
    except (FormatError, DataError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 4
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return 5
    except BevPruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
