"""Flat key=value run configuration shared by every CLI subcommand.

Every run resolves its configuration (file, then CLI overrides, then
defaults), freezes a copy next to its outputs, and can be reproduced
byte-for-byte by pointing --config at that frozen copy. Unknown keys are
rejected.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from .augment import AugmentConfig
from .nn import BackboneConfig
from .pretrain import PretrainConfig
from .segment import FinetuneConfig, InferConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# key -> (type, default, help)
SCHEMA: dict[str, tuple[type, object, str]] = {
    # shared
    "seed": (int, 0, "master random seed"),
    "out_dir": (str, "run", "output directory for artifacts and the frozen config"),
    "manifest": (str, "", "dataset manifest (lines `<file> <train|val>`)"),
    "cloud": (str, "", "single input cloud path"),
    "format": (str, "", "force cloud format: ply-ascii or xyzl-text"),
    "checkpoint": (str, "", "input checkpoint path"),
    # synth
    "synth_count": (int, 30, "number of plants to generate"),
    "synth_density": (float, 5.0, "surface sampling density (points per mm^2)"),
    "synth_noise": (float, 0.0, "surface noise sigma in mm"),
    "synth_holes": (int, 0, "punched holes per leaf"),
    "synth_hole_radius": (float, 0.8, "hole radius in mm"),
    "synth_val_fraction": (float, 0.33, "fraction of plants assigned to validation"),
    "synth_color_contrast": (float, 1.0, "stem/leaf color separation (0 = identical)"),
    # weak labels
    "weak_k": (int, 100, "annotated points per cloud"),
    "subsample_ratio": (float, 1.0, "random subsample ratio applied before labeling"),
    "strip_soil": (_bool, False, "delete soil points before labeling"),
    "stratified": (_bool, False, "per-class proportional weak-label draw"),
    "weak_dir": (str, "", "directory with <cloud>.weak files (fine-tuning input)"),
    # backbone / voxel grid
    "voxel_size": (float, 1.0, "voxel edge in mm for the encoder input grid"),
    "hidden_dim": (int, 32, "encoder hidden width"),
    "blocks": (int, 3, "encoder aggregation blocks"),
    "feature_dim": (int, 32, "encoder output dimension D"),
    "aggregation_radius": (float, -1.0, "neighborhood radius in mm (-1 = 4 x voxel)"),
    # augmentation
    "augment": (_bool, True, "apply random transforms during training"),
    "rotation_z_max": (float, math.pi, "max |z rotation| in radians"),
    "rotation_xy_max": (float, 0.1, "max |tilt| in radians"),
    "scale_lo": (float, 0.9, "uniform scale lower bound"),
    "scale_hi": (float, 1.1, "uniform scale upper bound"),
    "jitter_sigma": (float, -1.0, "per-point jitter sigma in mm (-1 = 0.2 x voxel)"),
    "flip_probability": (float, 0.5, "per-axis horizontal flip probability"),
    "color_jitter_sigma": (float, 0.05, "color jitter sigma"),
    # pretraining
    "pretrain_iterations": (int, 10000, "self-supervised iterations"),
    "batch_size": (int, 2, "clouds per iteration"),
    "fps_h": (int, 1024, "farthest-point samples per cloud for the loss"),
    "fps_start": (int, 0, "first FPS pick index"),
    "lambda": (float, 0.005, "off-diagonal weight in the redundancy loss"),
    "lr0": (float, 0.1, "initial learning rate"),
    "lr_power": (float, 0.9, "polynomial decay power"),
    "momentum": (float, 0.9, "SGD momentum"),
    "checkpoint_every": (int, 1000, "periodic checkpoint interval (0 = off)"),
    # fine-tuning
    "finetune_iterations": (int, 4000, "supervised iterations"),
    "finetune_lr0": (float, 0.03, "initial fine-tuning learning rate"),
    "n_classes": (int, 2, "semantic class count"),
    "warmup_fraction": (float, 0.25, "leading fraction of iterations training heads only"),
    "baseline": (_bool, False, "random backbone init instead of the checkpoint"),
    "loss_w_sem": (float, 1.0, "semantic term weight"),
    "loss_w_reg": (float, 1.0, "offset regression term weight"),
    "loss_w_dir": (float, 1.0, "offset direction term weight"),
    # clustering / inference
    "cluster_radius": (float, 1.5, "ball radius in mm on original coordinates"),
    "cluster_radius_shifted": (float, 1.5, "ball radius in mm on shifted coordinates"),
    "min_cluster_size": (int, 50, "minimum points per instance"),
    "min_cluster_voxels": (int, 5, "minimum voxels per cluster before expansion"),
    "merge_iou": (float, 0.75, "IoU above which duplicate clusters merge (>1 disables)"),
    # evaluation
    "pred": (str, "", "predicted cloud path"),
    "gt": (str, "", "ground-truth cloud path"),
    "instances": (str, "", "predicted instance dump (JSON) path"),
    "traits_pred": (str, "", "measured traits CSV"),
    "traits_truth": (str, "", "ground-truth traits CSV"),
    # traits
    "knn_k": (int, 10, "k for the geodesic graph"),
    "min_leaf_points": (int, 50, "smallest leaf instance measured"),
    # service
    "data_dir": (str, "", "directory of clouds served by the annotation service"),
    "host": (str, "127.0.0.1", "bind address"),
    "port": (int, 8321, "bind port"),
    "budget": (int, 300000, "display point budget before view decimation"),
    "ui_dir": (str, "", "static annotator bundle to serve at /"),
}


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: default for k, (_, default, _) in SCHEMA.items()}
        for k, v in self.values.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            merged[k] = v
        self.values = merged

    def __getattr__(self, key: str):
        values = object.__getattribute__(self, "values")
        if key in values:
            return values[key]
        raise AttributeError(key)

    def get(self, key: str):
        return self.values[key]

    def set(self, key: str, raw):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        typ = SCHEMA[key][0]
        try:
            self.values[key] = typ(raw) if isinstance(raw, str) else type(SCHEMA[key][1])(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from e

    # resolution helpers -----------------------------------------------------

    def resolved_aggregation_radius(self) -> float:
        r = self.values["aggregation_radius"]
        return 4.0 * self.values["voxel_size"] if r <= 0 else r

    def resolved_jitter_sigma(self) -> float:
        j = self.values["jitter_sigma"]
        return 0.2 * self.values["voxel_size"] if j < 0 else j

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            input_dim=6,
            hidden_dim=self.values["hidden_dim"],
            blocks=self.values["blocks"],
            output_dim=self.values["feature_dim"],
            aggregation_radius=self.resolved_aggregation_radius(),
            voxel_size=self.values["voxel_size"],
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            rotation_z_max=self.values["rotation_z_max"],
            rotation_xy_max=self.values["rotation_xy_max"],
            scale_range=(self.values["scale_lo"], self.values["scale_hi"]),
            jitter_sigma=self.resolved_jitter_sigma(),
            flip_probability=self.values["flip_probability"],
            color_jitter_sigma=self.values["color_jitter_sigma"],
        )

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            iterations=self.values["pretrain_iterations"],
            batch_size=self.values["batch_size"],
            fps_h=self.values["fps_h"],
            fps_start=self.values["fps_start"],
            lam=self.values["lambda"],
            lr0=self.values["lr0"],
            lr_power=self.values["lr_power"],
            momentum=self.values["momentum"],
            seed=self.values["seed"],
            backbone=self.backbone_config(),
            augment=self.augment_config(),
            checkpoint_every=self.values["checkpoint_every"],
            out_dir=self.values["out_dir"],
        )

    def finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            iterations=self.values["finetune_iterations"],
            batch_size=self.values["batch_size"],
            lr0=self.values["finetune_lr0"],
            lr_power=self.values["lr_power"],
            momentum=self.values["momentum"],
            seed=self.values["seed"],
            n_classes=self.values["n_classes"],
            loss_w_sem=self.values["loss_w_sem"],
            loss_w_reg=self.values["loss_w_reg"],
            loss_w_dir=self.values["loss_w_dir"],
            baseline=self.values["baseline"],
            warmup_fraction=self.values["warmup_fraction"],
            augment_enabled=self.values["augment"],
            augment=self.augment_config(),
            backbone=self.backbone_config(),
            checkpoint_every=self.values["checkpoint_every"],
            out_dir=self.values["out_dir"],
        )

    def infer_config(self) -> InferConfig:
        return InferConfig(
            cluster_radius=self.values["cluster_radius"],
            cluster_radius_shifted=self.values["cluster_radius_shifted"],
            min_cluster_size=self.values["min_cluster_size"],
            min_cluster_voxels=self.values["min_cluster_voxels"],
            merge_iou=self.values["merge_iou"],
        )

    # serialization ------------------------------------------------------------

    def to_text(self) -> str:
        lines = ["# frozen run configuration"]
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def freeze(self, out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "config.txt")
        with open(path, "w") as f:
            f.write(self.to_text())
        return path

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        if not os.path.exists(path):
            raise ConfigError(f"no such config file: {path}")
        cfg = cls()
        with open(path) as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                key, value = key.strip(), value.strip()
                if key not in SCHEMA:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                typ = SCHEMA[key][0]
                try:
                    cfg.values[key] = typ(value)
                except ConfigError:
                    raise
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
        return cfg


def load_manifest(path: str) -> tuple[list[str], list[str]]:
    """(train paths, val paths), resolved relative to the manifest location."""
    if not os.path.exists(path):
        raise ConfigError(f"no such manifest: {path}")
    base = os.path.dirname(os.path.abspath(path))
    train, val = [], []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in ("train", "val"):
                raise ConfigError(f"{path}:{lineno}: expected `<file> <train|val>`")
            full = parts[0] if os.path.isabs(parts[0]) else os.path.join(base, parts[0])
            (train if parts[1] == "train" else val).append(full)
    if not train and not val:
        raise ConfigError(f"{path}: empty manifest")
    return train, val
