"""Command-line interface: synth, weaklabel, pretrain, finetune-sem,
finetune-inst, infer, evaluate, traits, describe-checkpoint, serve.

Every subcommand resolves a RunConfig (defaults < --config file < flags),
freezes it next to its outputs, and exits 0 on success, 2 on configuration
errors, 3 on data errors. Diagnostics go to stderr."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, describe_checkpoint, load_checkpoint
from .cloud import CloudError, load_cloud, save_cloud, PointCloud
from .clustering import load_instances, save_instances
from .config import SCHEMA, ConfigError, RunConfig, load_manifest
from .metrics import MetricsError, instance_ap, r2, report_json, rmse, semantic_metrics
from .pretrain import DivergenceError, pretrain
from .sampling import load_weak_labels, make_weak_labels, random_subsample, save_weak_labels, strip_class
from .segment import OrganModel, finetune_instance, finetune_semantic, infer
from .synth import generate_dataset
from .traits import TraitError, measure_traits, parse_traits_csv, traits_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

# flags each subcommand accepts, beyond --config/--out-dir/--seed
_COMMAND_KEYS = {
    "synth": [
        "synth_count", "synth_density", "synth_noise", "synth_holes",
        "synth_hole_radius", "synth_val_fraction", "synth_color_contrast",
    ],
    "weaklabel": [
        "manifest", "cloud", "weak_k", "subsample_ratio", "strip_soil", "stratified",
    ],
    "pretrain": [
        "manifest", "pretrain_iterations", "batch_size", "fps_h", "fps_start",
        "lambda", "lr0", "lr_power", "momentum", "checkpoint_every",
        "voxel_size", "hidden_dim", "blocks", "feature_dim", "aggregation_radius",
        "augment", "rotation_z_max", "rotation_xy_max", "scale_lo", "scale_hi",
        "jitter_sigma", "flip_probability", "color_jitter_sigma",
    ],
    "finetune-sem": [
        "manifest", "weak_dir", "checkpoint", "finetune_iterations", "batch_size",
        "finetune_lr0", "lr_power", "momentum", "n_classes", "baseline", "warmup_fraction",
        "checkpoint_every", "voxel_size", "hidden_dim", "blocks", "feature_dim",
        "aggregation_radius", "augment", "rotation_z_max", "rotation_xy_max",
        "scale_lo", "scale_hi", "jitter_sigma", "flip_probability",
        "color_jitter_sigma", "loss_w_sem",
    ],
    "finetune-inst": None,  # same as finetune-sem plus the loss weights
    "infer": [
        "cloud", "format", "checkpoint", "cluster_radius", "cluster_radius_shifted",
        "min_cluster_size", "min_cluster_voxels", "merge_iou",
    ],
    "evaluate": ["pred", "gt", "instances", "traits_pred", "traits_truth"],
    "traits": ["cloud", "format", "knn_k", "min_leaf_points"],
    "describe-checkpoint": ["checkpoint"],
    "serve": ["data_dir", "host", "port", "budget", "ui_dir"],
}
_COMMAND_KEYS["finetune-inst"] = _COMMAND_KEYS["finetune-sem"] + ["loss_w_reg", "loss_w_dir"]


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shootseg",
        description="Weakly-supervised stem/leaf segmentation and trait measurement",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, keys in _COMMAND_KEYS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--out-dir", dest="out_dir", default=None, help=SCHEMA["out_dir"][2])
        p.add_argument("--seed", default=None, help=SCHEMA["seed"][2])
        for key in keys:
            typ, default, help_text = SCHEMA[key]
            p.add_argument(_flag(key), dest=key, default=None, help=f"{help_text} (default {default})")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for key in list(SCHEMA):
        if hasattr(args, key) and getattr(args, key) is not None:
            cfg.set(key, getattr(args, key))
    return cfg


def _load_labeled_pairs(cfg: RunConfig):
    train, _ = load_manifest(cfg.manifest)
    weak_dir = cfg.weak_dir or cfg.out_dir
    pairs = []
    for path in train:
        cloud = load_cloud(path)
        weak_path = os.path.join(weak_dir, cloud.source_id + ".weak")
        if not os.path.exists(weak_path):
            raise CloudError(f"missing weak labels {weak_path} (run `shootseg weaklabel` first)")
        pairs.append((cloud, load_weak_labels(weak_path)))
    return pairs


def cmd_synth(cfg: RunConfig) -> int:
    generate_dataset(
        cfg.out_dir,
        cfg.synth_count,
        seed=cfg.seed,
        val_fraction=cfg.synth_val_fraction,
        density=cfg.synth_density,
        noise_sigma=cfg.synth_noise,
        holes_per_leaf=cfg.synth_holes,
        hole_radius=cfg.synth_hole_radius,
        color_contrast=cfg.synth_color_contrast,
    )
    cfg.freeze(cfg.out_dir)
    return EXIT_OK


def cmd_weaklabel(cfg: RunConfig) -> int:
    if cfg.manifest:
        paths, _ = load_manifest(cfg.manifest)
    elif cfg.cloud:
        paths = [cfg.cloud]
    else:
        raise ConfigError("weaklabel needs --manifest or --cloud")
    os.makedirs(cfg.out_dir, exist_ok=True)
    for i, path in enumerate(paths):
        cloud = load_cloud(path)
        if cfg.strip_soil:
            cloud = strip_class(cloud, 2)
        if cfg.subsample_ratio < 1.0:
            cloud = random_subsample(cloud, cfg.subsample_ratio, cfg.seed + i)
            save_cloud(cloud, os.path.join(cfg.out_dir, cloud.source_id + ".sub.xyzl"))
        weak = make_weak_labels(cloud, cfg.weak_k, seed=cfg.seed + i, stratified=cfg.stratified)
        save_weak_labels(weak, os.path.join(cfg.out_dir, cloud.source_id + ".weak"))
    cfg.freeze(cfg.out_dir)
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig) -> int:
    train, _ = load_manifest(cfg.manifest)
    clouds = [load_cloud(p) for p in train]
    pcfg = cfg.pretrain_config()
    pretrain(clouds, pcfg, log_path=os.path.join(cfg.out_dir, "pretrain_loss.csv"))
    cfg.freeze(cfg.out_dir)
    return EXIT_OK


def _cmd_finetune(cfg: RunConfig, instance: bool) -> int:
    pairs = _load_labeled_pairs(cfg)
    pretrained = None
    if not cfg.baseline:
        if not cfg.checkpoint:
            raise ConfigError("finetune needs --checkpoint (or --baseline true)")
        pretrained = load_checkpoint(cfg.checkpoint)
    fcfg = cfg.finetune_config()
    name = "instance" if instance else "semantic"
    log = os.path.join(cfg.out_dir, f"{name}_loss.csv")
    if instance:
        finetune_instance(pretrained, pairs, fcfg, log_path=log)
    else:
        finetune_semantic(pretrained, pairs, fcfg, log_path=log)
    cfg.freeze(cfg.out_dir)
    return EXIT_OK


def cmd_infer(cfg: RunConfig) -> int:
    if not cfg.cloud or not cfg.checkpoint:
        raise ConfigError("infer needs --cloud and --checkpoint")
    cloud = load_cloud(cfg.cloud, cfg.format or None)
    model = OrganModel.from_checkpoint(load_checkpoint(cfg.checkpoint))
    result = infer(model, cloud, cfg.infer_config())
    os.makedirs(cfg.out_dir, exist_ok=True)
    inst = np.full(len(cloud), -1, dtype=np.int64)
    if result.instances:
        for i, pred in enumerate(result.instances):
            inst[pred.indices] = i
    out = PointCloud(cloud.coords, cloud.colors, result.semantic, inst, cloud.source_id)
    save_cloud(out, os.path.join(cfg.out_dir, cloud.source_id + ".pred.xyzl"))
    if result.instances is not None:
        save_instances(result.instances, os.path.join(cfg.out_dir, cloud.source_id + ".instances.json"))
    cfg.freeze(cfg.out_dir)
    return EXIT_OK


def _gt_instance_sets(gt: PointCloud):
    inst = gt.effective_instance()
    sets = []
    for i in np.unique(inst[inst >= 0]):
        sets.append(np.nonzero(inst == i)[0])
    return sets


def cmd_evaluate(cfg: RunConfig) -> int:
    doc_parts = {}
    sem_report = ap_report = None
    if cfg.pred and cfg.gt:
        pred = load_cloud(cfg.pred)
        gt = load_cloud(cfg.gt)
        if gt.semantic is None:
            raise CloudError(f"{cfg.gt} carries no semantic labels")
        if pred.semantic is None:
            raise CloudError(f"{cfg.pred} carries no semantic labels")
        classes = sorted(set(np.unique(gt.semantic[gt.semantic >= 0]).tolist()) | set([0, 1]))
        sem_report = semantic_metrics(pred.semantic, gt.semantic, classes)
        if cfg.instances:
            preds = load_instances(cfg.instances)
            ap_report = instance_ap(
                preds, _gt_instance_sets(gt), ignore_points=gt.effective_semantic() < 0
            )
    elif not (cfg.traits_pred and cfg.traits_truth):
        raise ConfigError("evaluate needs --pred/--gt and/or --traits-pred/--traits-truth")
    text = report_json(sem_report, ap_report) if (sem_report or ap_report) else "{}"
    doc = json.loads(text)
    if cfg.traits_pred and cfg.traits_truth:
        pred_table = parse_traits_csv(open(cfg.traits_pred).read())
        truth_table = parse_traits_csv(open(cfg.traits_truth).read())
        traits_doc = {}
        for trait in ("stem_diameter", "leaf_length", "leaf_width"):
            keys = sorted(
                k for k in truth_table if k[1] == trait and k in pred_table
            )
            if len(keys) < 2:
                continue
            t = [truth_table[k] for k in keys]
            p = [pred_table[k] for k in keys]
            traits_doc[trait] = {"r2": r2(t, p), "rmse": rmse(t, p), "n": len(keys)}
        doc["traits"] = traits_doc
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = json.dumps(doc, sort_keys=True, indent=1)
    with open(os.path.join(cfg.out_dir, "metrics.json"), "w") as f:
        f.write(out + "\n")
    print(out)
    cfg.freeze(cfg.out_dir)
    return EXIT_OK


def cmd_traits(cfg: RunConfig) -> int:
    if not cfg.cloud:
        raise ConfigError("traits needs --cloud")
    cloud = load_cloud(cfg.cloud, cfg.format or None)
    if cloud.semantic is None:
        raise CloudError(f"{cfg.cloud} carries no labels to measure")
    report = measure_traits(
        cloud.coords,
        cloud.semantic,
        cloud.effective_instance(),
        cloud_id=cloud.source_id,
        min_leaf_points=cfg.min_leaf_points,
        k=cfg.knn_k,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    csv_text = traits_csv([report])
    with open(os.path.join(cfg.out_dir, cloud.source_id + ".traits.csv"), "w") as f:
        f.write(csv_text)
    doc = {
        "cloud_id": report.cloud_id,
        "stem_diameter_mm": report.stem_diameter_mm,
        "leaves": [
            {"instance": l.instance, "length_mm": l.length_mm, "width_mm": l.width_mm,
             "flags": list(l.flags)}
            for l in report.leaves
        ],
        "skipped": report.skipped,
    }
    with open(os.path.join(cfg.out_dir, cloud.source_id + ".traits.json"), "w") as f:
        f.write(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    print(csv_text, end="")
    cfg.freeze(cfg.out_dir)
    return EXIT_OK


def cmd_describe(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("describe-checkpoint needs --checkpoint")
    print(describe_checkpoint(cfg.checkpoint))
    return EXIT_OK


def cmd_serve(cfg: RunConfig) -> int:
    import uvicorn

    from .service import create_app

    if not cfg.data_dir:
        raise ConfigError("serve needs --data-dir")
    app = create_app(cfg.data_dir, budget_default=cfg.budget, ui_dir=cfg.ui_dir or None)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
    return EXIT_OK


_HANDLERS = {
    "synth": cmd_synth,
    "weaklabel": cmd_weaklabel,
    "pretrain": cmd_pretrain,
    "finetune-sem": lambda cfg: _cmd_finetune(cfg, instance=False),
    "finetune-inst": lambda cfg: _cmd_finetune(cfg, instance=True),
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "traits": cmd_traits,
    "describe-checkpoint": cmd_describe,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        cfg = resolve_config(args)
        return _HANDLERS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CloudError, CheckpointError, DivergenceError, TraitError, MetricsError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
