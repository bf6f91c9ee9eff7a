"""Command-line entry points.

Exit codes: 0 success, 1 verification failure, 2 usage / IO error.
Every command is deterministic given its inputs, seed, and config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint, cloudio, data, fsnet, gradcheck, metrics, pipeline, train as train_mod
from .config import ConfigError, PipelineConfig, TrainConfig, load_config
from .decoder import extract_patch_region
from .geometry import PointCloud


class CliError(Exception):
    """User / IO error; exits with status 2."""


def _load_config_arg(path):
    if path is None:
        return PipelineConfig().validate(), TrainConfig().validate()
    try:
        return load_config(path)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except ConfigError as e:
        raise CliError(f"{path}: {e}")


def cmd_gen_data(args):
    os.makedirs(args.out, exist_ok=True)
    pairs = data.make_dataset(args.count, args.seed, point_budget=args.budget,
                              n_partial=args.partial)
    manifest = {"seed": args.seed, "count": args.count, "budget": args.budget,
                "n_partial": args.partial, "files": []}
    for i, (partial, complete) in enumerate(pairs):
        pname = f"partial_{i:04d}.xyz"
        cname = f"complete_{i:04d}.xyz"
        cloudio.write_xyz(os.path.join(args.out, pname), partial.points)
        cloudio.write_xyz(os.path.join(args.out, cname), complete.points)
        manifest["files"].append({"id": f"{i:04d}", "partial": pname, "complete": cname})
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {2 * len(pairs)} cloud files + manifest to {args.out}")
    return 0


def _load_dataset(path):
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise CliError(f"no manifest.json in {path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    pairs = []
    for entry in manifest["files"]:
        partial = cloudio.read_xyz(os.path.join(path, entry["partial"]))
        complete = cloudio.read_xyz(os.path.join(path, entry["complete"]))
        pairs.append((PointCloud(partial), PointCloud(complete)))
    return pairs


def cmd_train(args):
    pcfg, tcfg = _load_config_arg(args.config)
    dataset = _load_dataset(args.data)
    log_path = args.log or (os.path.splitext(args.out)[0] + "_log.csv")
    rows = []

    def progress(rec):
        rows.append(rec)
        print(f"epoch {rec.epoch:3d} lr {rec.lr:.6g} coarse_cd {rec.coarse_cd:.6f} "
              f"dense_cd {rec.dense_cd:.6f}", flush=True)

    result = train_mod.train(dataset, pcfg, tcfg, progress=progress)
    checkpoint.save_checkpoint(args.out, result.params, pcfg, train_cfg=tcfg)
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,lr,coarse_cd,dense_cd\n")
        for rec in result.log:
            fh.write(f"{rec.epoch},{rec.lr!r},{rec.coarse_cd!r},{rec.dense_cd!r}\n")
    print(f"checkpoint: {args.out}\nlog: {log_path}")
    return 0


def _load_checkpoint_arg(path):
    try:
        return checkpoint.load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}")
    except checkpoint.CheckpointError as e:
        raise CliError(f"{path}: {e}")


def cmd_complete(args):
    params, blob = _load_checkpoint_arg(args.checkpoint)
    pcfg = PipelineConfig(**blob["pipeline"])
    points = cloudio.read_cloud(args.input)
    res = pipeline.forward(points.astype(np.float64), params, pcfg)
    cloudio.write_cloud(args.out, res.dense_points.data)
    if args.dump_intermediate:
        from .ifnet import intermediate_clouds
        os.makedirs(args.dump_intermediate, exist_ok=True)
        clouds = intermediate_clouds(res.diagnostics.states, res.sparse_points, params.offset)
        for t, cloud in enumerate(clouds):
            cloudio.write_xyz(os.path.join(args.dump_intermediate, f"step_{t:02d}.xyz"),
                              cloud.data)
    print(f"wrote {res.dense_points.data.shape[0]} points to {args.out}")
    return 0


def _cloud_files(directory):
    if not os.path.isdir(directory):
        raise CliError(f"not a directory: {directory}")
    return sorted(f for f in os.listdir(directory) if f.endswith((".xyz", ".ply")))


def cmd_eval(args):
    pred_files = _cloud_files(args.pred)
    pred_ids = [os.path.splitext(f)[0] for f in pred_files]
    preds = [cloudio.read_cloud(os.path.join(args.pred, f)).astype(np.float64)
             for f in pred_files]
    if args.no_gt:
        if not args.refs or not args.inputs:
            raise CliError("--no-gt requires --refs and --inputs")
        ref_files = _cloud_files(args.refs)
        refs = [cloudio.read_cloud(os.path.join(args.refs, f)).astype(np.float64)
                for f in ref_files]
        in_files = _cloud_files(args.inputs)
        in_ids = [os.path.splitext(f)[0] for f in in_files]
        missing = [i for i in pred_ids if i.replace("pred", "partial") not in in_ids and i not in in_ids]
        if missing:
            raise CliError(f"inputs missing for shapes: {missing}")
        by_id = {os.path.splitext(f)[0]: f for f in in_files}
        inputs = []
        for sid in pred_ids:
            key = sid if sid in by_id else sid.replace("pred", "partial")
            inputs.append(cloudio.read_cloud(os.path.join(args.inputs, by_id[key])).astype(np.float64))
        report = metrics.evaluate_no_gt(pred_ids, inputs, preds, refs)
    else:
        if not args.gt:
            raise CliError("either --gt or --no-gt must be given")
        gt_files = _cloud_files(args.gt)
        gt_by_id = {os.path.splitext(f)[0]: f for f in gt_files}
        missing = [sid for sid in pred_ids
                   if sid not in gt_by_id and sid.replace("pred", "complete") not in gt_by_id]
        if missing:
            raise CliError(f"ground truth missing for shapes: {missing}")
        gts = []
        for sid in pred_ids:
            key = sid if sid in gt_by_id else sid.replace("pred", "complete")
            gts.append(cloudio.read_cloud(os.path.join(args.gt, gt_by_id[key])).astype(np.float64))
        report = metrics.evaluate_with_gt(pred_ids, preds, gts, tau=args.tau)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics.report_to_csv(report))
    with open(os.path.join(args.out, "aggregate.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics.aggregate_json(report) + "\n")
    print(metrics.aggregate_json(report))
    return 0


def cmd_gradcheck(args):
    def progress(name, worst):
        print(f"  {name}: {worst:.3e}")

    results = gradcheck.check_model(seed=args.seed, corrupt=args.corrupt,
                                    samples_per_tensor=args.samples, progress=progress if args.verbose else None)
    failed = False
    for group in sorted(results):
        status = "ok" if results[group] <= gradcheck.DEFAULT_TOL else "FAIL"
        if status == "FAIL":
            failed = True
        print(f"{group:12s} worst_rel_err {results[group]:.3e} {status}")
    return 1 if failed else 0


def cmd_inspect(args):
    params, blob = _load_checkpoint_arg(args.checkpoint)
    pcfg = PipelineConfig(**blob["pipeline"])
    points = cloudio.read_cloud(args.input).astype(np.float64)
    res = pipeline.forward(points, params, pcfg)
    os.makedirs(args.out, exist_ok=True)
    if args.heatmap_channel is not None:
        try:
            heat = fsnet.attention_heatmap(res.diagnostics.attention, args.heatmap_channel)
        except IndexError as e:
            raise CliError(str(e))
        csv_path = os.path.join(args.out, f"heatmap_ch{args.heatmap_channel}.csv")
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("x,y,z,weight\n")
            for p, wv in zip(points, heat):
                fh.write(f"{p[0]!r},{p[1]!r},{p[2]!r},{wv!r}\n")
        cloudio.write_pgm(os.path.join(args.out, f"heatmap_ch{args.heatmap_channel}.pgm"), heat)
    if args.patch:
        try:
            window = tuple(int(s) for s in args.patch.split(","))
            if len(window) != 4:
                raise ValueError
        except ValueError:
            raise CliError(f"--patch expects row,col,height,width, got {args.patch!r}")
        try:
            patch_pts = extract_patch_region(res.diagnostics.coarse.grid, window)
        except ValueError as e:
            raise CliError(str(e))
        cloudio.write_xyz(os.path.join(args.out, "patch.xyz"), patch_pts)
    print(f"inspection outputs in {args.out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="pcfold",
                                 description="coarse-to-fine point cloud completion toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic (partial, complete) pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=1024)
    p.add_argument("--partial", type=int, default=256)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("complete", help="complete a partial cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-intermediate")
    p.set_defaults(fn=cmd_complete)

    p = sub.add_parser("eval", help="evaluate completions")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt")
    p.add_argument("--no-gt", action="store_true")
    p.add_argument("--refs")
    p.add_argument("--inputs")
    p.add_argument("--tau", type=float, default=metrics.DEFAULT_FSCORE_TAU)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=6)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--corrupt", action="store_true",
                   help="negative control: falsify one gradient entry (must exit 1)")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("inspect", help="export attention heatmaps and patch regions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--heatmap-channel", type=int)
    p.add_argument("--patch", help="row,col,height,width window into the coarse grid")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_inspect)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, cloudio.CloudFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
