"""Weakly-supervised fine-tuning and inference for stem/leaf organs.

The semantic head is a one-hidden-layer MLP over backbone features; the
offset head predicts a per-point 3D shift toward the leaf-instance centroid.
Training optimizes a masked cross-entropy (semantic) or the combined loss
w_sem * L_sem + w_reg * L_reg + w_dir * L_dir (instance), where L_reg is the
mean Euclidean offset error and L_dir the negative mean cosine between the
predicted and target offsets, both over the supervised mask only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .augment import AugmentConfig, apply_transform, sample_transform
from .checkpoint import Checkpoint, save_checkpoint
from .cloud import PointCloud, VoxelMap, build_voxel_map, voxel_downsample
from .clustering import InstancePrediction, ball_cluster, dual_set_union
from .nn import SGD, Backbone, BackboneConfig, poly_lr
from .pretrain import DivergenceError
from .sampling import WeakLabels
from .spatial import mean_aggregation_matrix

SEM_CLASSES = [0, 1]  # stem, leaf after soil stripping


@dataclass
class SemanticScores:
    """Per-point class scores; argmax with lowest-class tie-break."""

    scores: np.ndarray           # (M, n)
    classes: list[int] = field(default_factory=lambda: list(SEM_CLASSES))


def predict_labels(scores: SemanticScores) -> np.ndarray:
    return np.asarray(scores.classes, dtype=np.int64)[np.argmax(scores.scores, axis=1)]


@dataclass
class OffsetField:
    offsets: np.ndarray          # (M, 3) mm


def _he(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))


class SemanticHead:
    """MLP D -> D -> n over backbone features."""

    def __init__(self, dim: int, n_classes: int = 2, seed: int = 0, params: dict | None = None):
        self.dim = dim
        self.n_classes = n_classes
        if params is not None:
            self.params = {k: ag.parameter(v) for k, v in params.items()}
            return
        rng = np.random.default_rng(seed)
        self.params = {
            "sem.w1": ag.parameter(_he(rng, dim, dim)),
            "sem.b1": ag.parameter(np.zeros(dim)),
            "sem.w2": ag.parameter(_he(rng, dim, n_classes)),
            "sem.b2": ag.parameter(np.zeros(n_classes)),
        }

    def forward(self, feats: ag.Tensor) -> ag.Tensor:
        h = ag.relu(feats @ self.params["sem.w1"] + self.params["sem.b1"])
        return h @ self.params["sem.w2"] + self.params["sem.b2"]


class OffsetHead:
    """D -> D (standardize, relu) -> 3 pointwise regressor."""

    def __init__(self, dim: int, seed: int = 0, params: dict | None = None):
        self.dim = dim
        if params is not None:
            self.params = {k: ag.parameter(v) for k, v in params.items()}
            return
        rng = np.random.default_rng(seed)
        self.params = {
            "off.w1": ag.parameter(_he(rng, dim, dim)),
            "off.b1": ag.parameter(np.zeros(dim)),
            "off.w2": ag.parameter(_he(rng, dim, 3)),
            "off.b2": ag.parameter(np.zeros(3)),
        }

    def forward(self, feats: ag.Tensor) -> ag.Tensor:
        h = feats @ self.params["off.w1"] + self.params["off.b1"]
        h = ag.relu(ag.standardize_columns(h))
        return h @ self.params["off.w2"] + self.params["off.b2"]


def masked_cross_entropy(scores: ag.Tensor, labels: np.ndarray) -> ag.Tensor:
    """Softmax cross-entropy averaged over labeled rows only (label >= 0).

    Logits at unlabeled rows never enter the graph, so the loss is invariant
    to them by construction.
    """
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.nonzero(labels >= 0)[0]
    if idx.size == 0:
        raise ValueError("masked cross-entropy needs at least one labeled point")
    logp = ag.log_softmax(ag.gather_rows(scores, idx))
    onehot = np.zeros((idx.size, scores.shape[1]))
    onehot[np.arange(idx.size), labels[idx]] = 1.0
    picked = ag.tsum(ag.mul(logp, ag.as_tensor(onehot)))
    return ag.mul(picked, ag.as_tensor(-1.0 / idx.size))


def offset_losses(
    offsets: ag.Tensor,
    coords: np.ndarray,
    centroids: np.ndarray,
    mask: np.ndarray,
    eps: float = 1e-8,
) -> tuple[ag.Tensor, ag.Tensor]:
    """(L_reg, L_dir) over the masked points.

    L_reg = mean ||o_i - (c_i - p_i)||_2, L_dir = -mean cos(o_i, c_i - p_i),
    both weighted by the binary mask; norms are eps-guarded.
    """
    mask = np.asarray(mask, dtype=np.float64)
    total = mask.sum()
    if total <= 0:
        raise ValueError("offset losses need a non-empty supervision mask")
    target = np.asarray(centroids, dtype=np.float64) - np.asarray(coords, dtype=np.float64)
    diff = offsets - ag.as_tensor(target)
    reg = ag.mul(ag.tsum(ag.mul(ag.rownorm(diff, eps), ag.as_tensor(mask))), ag.as_tensor(1.0 / total))

    tnorm = np.linalg.norm(target, axis=1)
    that = target / np.maximum(tnorm, eps)[:, None]
    dot = ag.tsum(ag.mul(offsets, ag.as_tensor(that)), axis=1)
    cos = ag.div(dot, ag.rownorm(offsets, eps) + ag.as_tensor(eps))
    dire = ag.mul(ag.tsum(ag.mul(cos, ag.as_tensor(mask))), ag.as_tensor(-1.0 / total))
    return reg, dire


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


@dataclass
class FinetuneConfig:
    iterations: int = 4000
    batch_size: int = 2
    lr0: float = 0.1
    lr_power: float = 0.9
    momentum: float = 0.9
    seed: int = 0
    n_classes: int = 2
    loss_w_sem: float = 1.0
    loss_w_reg: float = 1.0
    loss_w_dir: float = 1.0
    baseline: bool = False       # random backbone init instead of the checkpoint
    warmup_fraction: float = 0.25  # train heads only for this leading fraction
    augment_enabled: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    checkpoint_every: int = 1000
    out_dir: str = "."


@dataclass
class _TrainCloud:
    voxelized: PointCloud
    vm: VoxelMap
    sem_labels: np.ndarray       # (V,) voxel-level weak semantic labels, -1 elsewhere
    inst_labels: np.ndarray      # (V,) voxel-level weak instance labels, -1 elsewhere


def _weak_to_voxels(weak: WeakLabels, vm: VoxelMap, n_voxels: int):
    """Project weak point labels onto voxel rows (first entry wins per voxel,
    entries visited in ascending point index for determinism)."""
    sem = np.full(n_voxels, -1, dtype=np.int64)
    inst = np.full(n_voxels, -1, dtype=np.int64)
    for idx in sorted(weak.entries):
        s, i = weak.entries[idx]
        row = int(vm.voxel_of_point[idx])
        if sem[row] == -1:
            sem[row] = s
            inst[row] = i
    return sem, inst


def _prepare_train_cloud(cloud: PointCloud, weak: WeakLabels, voxel_size: float) -> _TrainCloud:
    vm = build_voxel_map(cloud.coords, voxel_size)
    voxelized, _ = voxel_downsample(cloud, voxel_size, vm)
    sem, inst = _weak_to_voxels(weak, vm, vm.n_voxels)
    return _TrainCloud(voxelized, vm, sem, inst)


def _instance_centroids(coords: np.ndarray, inst_labels: np.ndarray):
    """Per-point centroid targets from the annotated points of each instance.

    Under weak supervision the centroid of an instance is estimated from its
    annotated points only. Returns (centroids (M,3), mask (M,), table).
    """
    m = coords.shape[0]
    centroids = np.zeros((m, 3))
    mask = np.zeros(m)
    table = {}
    for inst in np.unique(inst_labels[inst_labels >= 0]):
        rows = np.nonzero(inst_labels == inst)[0]
        c = coords[rows].mean(axis=0)
        centroids[rows] = c
        mask[rows] = 1.0
        table[int(inst)] = {"centroid": [float(x) for x in c], "points": int(rows.size)}
    return centroids, mask, table


class OrganModel:
    """Backbone plus heads, as trained or loaded from a checkpoint."""

    def __init__(self, backbone: Backbone, sem_head: SemanticHead, off_head: OffsetHead | None):
        self.backbone = backbone
        self.sem_head = sem_head
        self.off_head = off_head

    @property
    def params(self) -> dict[str, ag.Tensor]:
        p = dict(self.backbone.params)
        p.update(self.sem_head.params)
        if self.off_head is not None:
            p.update(self.off_head.params)
        return p

    def to_checkpoint(self, iteration: int, seed: int, opt_state=None, stage="finetune") -> Checkpoint:
        return Checkpoint(
            params={k: t.data.copy() for k, t in self.params.items()},
            backbone_config=self.backbone.cfg.to_dict(),
            head_configs={
                "semantic": {"dim": self.sem_head.dim, "n_classes": self.sem_head.n_classes},
                **(
                    {"offset": {"dim": self.off_head.dim}}
                    if self.off_head is not None
                    else {}
                ),
            },
            iteration=iteration,
            seed=seed,
            opt_state={} if opt_state is None else {k: v.copy() for k, v in opt_state.items()},
            extra={"stage": stage},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "OrganModel":
        cfg = BackboneConfig.from_dict(ckpt.backbone_config)
        groups: dict[str, dict[str, np.ndarray]] = {"bb": {}, "sem": {}, "off": {}}
        for name, arr in ckpt.params.items():
            if name.startswith("sem."):
                groups["sem"][name] = arr
            elif name.startswith("off."):
                groups["off"][name] = arr
            else:
                groups["bb"][name] = arr
        backbone = Backbone(cfg, params=groups["bb"])
        sem_cfg = ckpt.head_configs["semantic"]
        sem = SemanticHead(sem_cfg["dim"], sem_cfg["n_classes"], params=groups["sem"])
        off = None
        if "offset" in ckpt.head_configs:
            off = OffsetHead(ckpt.head_configs["offset"]["dim"], params=groups["off"])
        return cls(backbone, sem, off)


def _init_model(pretrained: Checkpoint | None, cfg: FinetuneConfig, with_offsets: bool) -> OrganModel:
    if cfg.baseline or pretrained is None:
        backbone = Backbone(cfg.backbone, seed=cfg.seed)
        bcfg = cfg.backbone
    else:
        bcfg = BackboneConfig.from_dict(pretrained.backbone_config)
        bb_params = {k: v for k, v in pretrained.params.items() if not k.startswith(("sem.", "off."))}
        backbone = Backbone(bcfg, params=bb_params)
    sem = SemanticHead(bcfg.output_dim, cfg.n_classes, seed=cfg.seed + 1)
    off = OffsetHead(bcfg.output_dim, seed=cfg.seed + 2) if with_offsets else None
    return OrganModel(backbone, sem, off)


def _finetune(
    pretrained: Checkpoint | None,
    dataset: list[tuple[PointCloud, WeakLabels]],
    cfg: FinetuneConfig,
    with_offsets: bool,
    log_path: str | None,
    ckpt_name: str,
) -> Checkpoint:
    if not dataset:
        raise ValueError("fine-tuning needs at least one (cloud, weak labels) pair")
    os.makedirs(cfg.out_dir, exist_ok=True)
    model = _init_model(pretrained, cfg, with_offsets)
    bcfg = model.backbone.cfg
    aug = cfg.augment
    prepared = [_prepare_train_cloud(c, w, bcfg.voxel_size) for c, w in dataset]
    for tc in prepared:
        if np.all(tc.sem_labels < 0):
            raise ValueError(f"cloud {tc.voxelized.source_id!r} has no usable weak labels")
    opt = SGD(model.params, momentum=cfg.momentum)
    head_params = dict(model.sem_head.params)
    if model.off_head is not None:
        head_params.update(model.off_head.params)
    head_opt = SGD(head_params, momentum=cfg.momentum)
    warmup_iters = int(cfg.warmup_fraction * cfg.iterations)

    centroid_audit: dict[str, dict] = {}
    log_lines: list[str] = []
    last_good = model.to_checkpoint(0, cfg.seed, opt.velocity)
    for it in range(cfg.iterations):
        rng = np.random.default_rng((cfg.seed, it, 1))
        picks = rng.integers(0, len(prepared), size=cfg.batch_size)
        lr = poly_lr(it, cfg.iterations, cfg.lr0, cfg.lr_power)
        opt.zero_grad()
        total = ag.as_tensor(0.0)
        parts = np.zeros(3)
        for ci in picks:
            tc = prepared[ci]
            if cfg.augment_enabled:
                params = sample_transform(aug, rng, len(tc.voxelized))
                coords, colors = apply_transform(tc.voxelized.coords, tc.voxelized.colors, params)
            else:
                coords, colors = tc.voxelized.coords, tc.voxelized.colors
            feats = model.backbone.forward(
                np.hstack([coords, colors]), mean_aggregation_matrix(coords, bcfg.aggregation_radius)
            )
            logits = model.sem_head.forward(feats)
            sem_loss = masked_cross_entropy(logits, tc.sem_labels)
            cloud_loss = ag.mul(ag.as_tensor(cfg.loss_w_sem), sem_loss)
            parts[0] += float(sem_loss.data)
            if with_offsets:
                # offset supervision only on annotated leaf-instance voxels;
                # targets recomputed in the augmented frame
                centroids, mask, table = _instance_centroids(
                    coords, np.where(tc.sem_labels == 1, tc.inst_labels, -1)
                )
                sid = tc.voxelized.source_id
                if sid not in centroid_audit:
                    centroid_audit[sid] = table
                if mask.sum() > 0:
                    offs = model.off_head.forward(feats)
                    reg, dire = offset_losses(offs, coords, centroids, mask)
                    cloud_loss = (
                        cloud_loss
                        + ag.mul(ag.as_tensor(cfg.loss_w_reg), reg)
                        + ag.mul(ag.as_tensor(cfg.loss_w_dir), dire)
                    )
                    parts[1] += float(reg.data)
                    parts[2] += float(dire.data)
            total = total + cloud_loss
        loss = ag.mul(total, ag.as_tensor(1.0 / cfg.batch_size))
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            path = os.path.join(cfg.out_dir, f"{ckpt_name}.last_good.ckpt")
            save_checkpoint(last_good, path)
            _flush(log_lines, log_path, with_offsets)
            raise DivergenceError(f"non-finite loss at iteration {it}", checkpoint_path=path)
        loss.backward()
        # heads-only warmup guards the initial (random-head) gradient noise
        # from scrambling the backbone, pretrained or not
        if it < warmup_iters:
            head_opt.step(lr)
        else:
            opt.step(lr)
        parts /= cfg.batch_size
        if with_offsets:
            log_lines.append(f"{it},{lr!r},{loss_val!r},{parts[0]!r},{parts[1]!r},{parts[2]!r}")
        else:
            log_lines.append(f"{it},{lr!r},{loss_val!r}")
        last_good = model.to_checkpoint(it + 1, cfg.seed, opt.velocity)
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(last_good, os.path.join(cfg.out_dir, f"{ckpt_name}.{it + 1:06d}.ckpt"))
    final = model.to_checkpoint(cfg.iterations, cfg.seed, opt.velocity)
    save_checkpoint(final, os.path.join(cfg.out_dir, f"{ckpt_name}.ckpt"))
    _flush(log_lines, log_path, with_offsets)
    if with_offsets and centroid_audit:
        with open(os.path.join(cfg.out_dir, "instance_centroids.json"), "w") as f:
            json.dump(centroid_audit, f, sort_keys=True, indent=1)
    return final


def _flush(lines, log_path, with_offsets):
    if log_path is None:
        return
    header = "iter,lr,loss,sem,reg,dir\n" if with_offsets else "iter,lr,loss\n"
    with open(log_path, "w") as f:
        f.write(header)
        for line in lines:
            f.write(line + "\n")


def finetune_semantic(
    pretrained: Checkpoint | None,
    dataset: list[tuple[PointCloud, WeakLabels]],
    cfg: FinetuneConfig,
    log_path: str | None = None,
) -> Checkpoint:
    """Fine-tune backbone + semantic head with masked cross-entropy."""
    return _finetune(pretrained, dataset, cfg, False, log_path, "semantic")


def finetune_instance(
    pretrained: Checkpoint | None,
    dataset: list[tuple[PointCloud, WeakLabels]],
    cfg: FinetuneConfig,
    log_path: str | None = None,
) -> Checkpoint:
    """Fine-tune backbone + semantic + offset heads with the combined loss."""
    return _finetune(pretrained, dataset, cfg, True, log_path, "instance")


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


@dataclass
class InferConfig:
    cluster_radius: float = 1.5
    cluster_radius_shifted: float = 1.5
    min_cluster_size: int = 50
    min_cluster_voxels: int = 5
    merge_iou: float = 0.75
    leaf_class: int = 1


@dataclass
class InferResult:
    semantic: np.ndarray                       # (M,) labels on original points
    leaf_prob: np.ndarray                      # (M,)
    instances: list[InstancePrediction] | None
    voxel_semantic: np.ndarray                 # (V,) labels on the voxel grid
    shifted_coords: np.ndarray | None          # (V, 3) voxel coords + offsets


def infer(model: OrganModel, cloud: PointCloud, icfg: InferConfig | None = None) -> InferResult:
    """Voxelize, forward, argmax semantics; cluster leaf points if offsets exist.

    Per-voxel predictions are propagated to the original points through the
    voxel membership. Instances are dual-set ball clusters: components on
    original voxel coordinates and on offset-shifted coordinates, expanded to
    original indices, size-filtered and merged on point-set IoU.
    """
    icfg = icfg or InferConfig()
    bcfg = model.backbone.cfg
    vm = build_voxel_map(cloud.coords, bcfg.voxel_size)
    voxelized, _ = voxel_downsample(cloud, bcfg.voxel_size, vm)
    feats = model.backbone.forward(
        np.hstack([voxelized.coords, voxelized.colors]),
        mean_aggregation_matrix(voxelized.coords, bcfg.aggregation_radius),
    )
    logits = model.sem_head.forward(feats).data
    voxel_sem = predict_labels(SemanticScores(logits, list(range(logits.shape[1]))))
    shift = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shift) / np.exp(shift).sum(axis=1, keepdims=True)
    voxel_leaf_prob = probs[:, icfg.leaf_class]

    inv = vm.voxel_of_point
    semantic = voxel_sem[inv]
    leaf_prob = voxel_leaf_prob[inv]

    instances = None
    shifted = None
    if model.off_head is not None:
        offsets = model.off_head.forward(feats).data
        shifted = voxelized.coords + offsets
        leaf_mask = voxel_sem == icfg.leaf_class
        cc = ball_cluster(voxelized.coords, leaf_mask, icfg.cluster_radius, icfg.min_cluster_voxels)
        cs = ball_cluster(shifted, leaf_mask, icfg.cluster_radius_shifted, icfg.min_cluster_voxels)
        expand = lambda rows: np.sort(np.concatenate([vm.members(int(r)) for r in rows]))
        cc_pts = [e for e in (expand(c) for c in cc) if e.size >= icfg.min_cluster_size]
        cs_pts = [e for e in (expand(c) for c in cs) if e.size >= icfg.min_cluster_size]
        instances = dual_set_union(
            cc_pts, cs_pts, icfg.merge_iou, leaf_prob, semantic_class=icfg.leaf_class
        )
    return InferResult(semantic, leaf_prob, instances, voxel_sem, shifted)
