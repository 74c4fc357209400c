"""Self-supervised pretraining with the viewpoint-bottleneck objective.

Two random views of a cloud pass through the shared backbone; an FPS subset
of corresponding rows is column-standardized and cross-correlated, and the
loss pushes that D x D matrix toward identity: L = sum_i (1 - Z_ii)^2 +
lambda * sum_{i != j} Z_ij^2.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .augment import AugmentConfig, apply_transform, sample_transform
from .checkpoint import Checkpoint, save_checkpoint
from .cloud import PointCloud, voxel_downsample
from .nn import SGD, Backbone, BackboneConfig, cloud_features, poly_lr
from .sampling import farthest_point_sample
from .spatial import mean_aggregation_matrix


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; carries the last good checkpoint path."""

    def __init__(self, message: str, checkpoint_path: str | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class CrossCorrelation:
    """D x D cross-view channel correlation built from standardized columns."""

    z: ag.Tensor
    h: int
    lam: float = 0.005


def sample_representations(
    zp: ag.Tensor, zq: ag.Tensor, coords: np.ndarray, h: int, start: int = 0
) -> tuple[ag.Tensor, ag.Tensor, np.ndarray]:
    """FPS-select the same H rows from both view representations.

    The index set is computed once on the un-augmented coordinates and reused
    for both views so row i of each output describes the same physical point;
    independent sampling would break the channel-correlation semantics.
    H > M is clamped with a warning in the returned index length.
    """
    m = zp.shape[0]
    if zq.shape[0] != m:
        raise ValueError("views must have the same number of rows")
    idx = farthest_point_sample(coords, min(h, m), start=start)
    return ag.gather_rows(zp, idx), ag.gather_rows(zq, idx), idx


def cross_correlation(
    zp_s: ag.Tensor, zq_s: ag.Tensor, lam: float = 0.005, eps: float = 1e-5
) -> CrossCorrelation:
    """Standardize each column over the H rows, then Z = (1/H) Zp^T Zq."""
    if zp_s.shape != zq_s.shape:
        raise ValueError(f"shape mismatch {zp_s.shape} vs {zq_s.shape}")
    h = zp_s.shape[0]
    if h < 2:
        raise ValueError("cross-correlation needs at least 2 samples")
    a = ag.standardize_columns(zp_s, eps)
    b = ag.standardize_columns(zq_s, eps)
    z = ag.mul(ag.matmul(a.T, b), ag.as_tensor(1.0 / h))
    return CrossCorrelation(z=z, h=h, lam=lam)


def vib_loss(cc: CrossCorrelation) -> ag.Tensor:
    """sum_i (1 - Z_ii)^2 + lambda * sum_{i != j} Z_ij^2 (identity is the minimum)."""
    d = cc.z.shape[0]
    eye = np.eye(d)
    diag = ag.tsum(ag.mul(cc.z, ag.as_tensor(eye)), axis=1)
    on_term = ag.tsum((ag.as_tensor(np.ones(d)) - diag) ** 2)
    off = ag.mul(cc.z, ag.as_tensor(1.0 - eye))
    off_term = ag.tsum(off * off)
    return on_term + ag.mul(ag.as_tensor(cc.lam), off_term)


def vib_loss_terms(cc: CrossCorrelation) -> tuple[float, float]:
    """(diagonal term, raw off-diagonal term) as plain floats, for logging."""
    z = cc.z.data
    d = z.shape[0]
    diag = np.diag(z)
    on = float(np.sum((1.0 - diag) ** 2))
    off = float(np.sum(z * z) - np.sum(diag * diag))
    return on, off


@dataclass
class PretrainConfig:
    iterations: int = 10000
    batch_size: int = 2
    fps_h: int = 1024
    fps_start: int = 0
    lam: float = 0.005
    lr0: float = 0.1
    lr_power: float = 0.9
    momentum: float = 0.9
    seed: int = 0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    checkpoint_every: int = 1000
    out_dir: str = "."


def _prepare(cloud: PointCloud, cfg: PretrainConfig):
    """Voxelize once; cache coords, FPS indices and the jitter sigma."""
    voxelized, _ = voxel_downsample(cloud, cfg.backbone.voxel_size)
    fps_idx = farthest_point_sample(
        voxelized.coords, min(cfg.fps_h, len(voxelized)), start=cfg.fps_start
    )
    return voxelized, fps_idx


def _view(voxelized: PointCloud, aug: AugmentConfig, rng: np.random.Generator):
    params = sample_transform(aug, rng, len(voxelized))
    coords, colors = apply_transform(voxelized.coords, voxelized.colors, params)
    return coords, colors


def pretrain(
    dataset: list[PointCloud],
    cfg: PretrainConfig,
    log_path: str | None = None,
    resume: Checkpoint | None = None,
) -> Checkpoint:
    """Run the pretraining loop and return (and write) the final checkpoint.

    Deterministic given the config: per-iteration randomness derives from
    (seed, iteration) so a resumed run continues exactly where the original
    left off. A non-finite loss aborts with the last good state saved.
    """
    if not dataset:
        raise ValueError("pretraining needs at least one cloud")
    os.makedirs(cfg.out_dir, exist_ok=True)
    aug = cfg.augment
    prepared = [_prepare(c, cfg) for c in dataset]

    if resume is not None:
        backbone = Backbone(cfg.backbone, params=resume.params)
        start_iter = resume.iteration
    else:
        backbone = Backbone(cfg.backbone, seed=cfg.seed)
        start_iter = 0
    opt = SGD(backbone.params, momentum=cfg.momentum)
    if resume is not None:
        opt.velocity = {k: v.copy() for k, v in resume.opt_state.items()}

    def snapshot(iteration: int) -> Checkpoint:
        return Checkpoint(
            params={k: p.data.copy() for k, p in backbone.params.items()},
            backbone_config=cfg.backbone.to_dict(),
            head_configs={},
            iteration=iteration,
            seed=cfg.seed,
            opt_state={k: v.copy() for k, v in opt.velocity.items()},
            extra={"stage": "pretrain"},
        )

    log_lines: list[str] = []
    last_good = snapshot(start_iter)
    final_path = os.path.join(cfg.out_dir, "pretrained.ckpt")
    for it in range(start_iter, cfg.iterations):
        rng = np.random.default_rng((cfg.seed, it))
        picks = rng.integers(0, len(dataset), size=cfg.batch_size)
        lr = poly_lr(it, cfg.iterations, cfg.lr0, cfg.lr_power)
        opt.zero_grad()
        total = ag.as_tensor(0.0)
        diag_sum = off_sum = 0.0
        for ci in picks:
            voxelized, fps_idx = prepared[ci]
            cp, colp = _view(voxelized, aug, rng)
            cq, colq = _view(voxelized, aug, rng)
            zp = backbone.forward(
                np.hstack([cp, colp]), mean_aggregation_matrix(cp, cfg.backbone.aggregation_radius)
            )
            zq = backbone.forward(
                np.hstack([cq, colq]), mean_aggregation_matrix(cq, cfg.backbone.aggregation_radius)
            )
            zp_s = ag.gather_rows(zp, fps_idx)
            zq_s = ag.gather_rows(zq, fps_idx)
            cc = cross_correlation(zp_s, zq_s, lam=cfg.lam)
            total = total + vib_loss(cc)
            d, o = vib_loss_terms(cc)
            diag_sum += d
            off_sum += o
        loss = ag.mul(total, ag.as_tensor(1.0 / cfg.batch_size))
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            path = os.path.join(cfg.out_dir, "pretrained.last_good.ckpt")
            save_checkpoint(last_good, path)
            _flush_log(log_lines, log_path)
            raise DivergenceError(
                f"non-finite pretraining loss at iteration {it}", checkpoint_path=path
            )
        loss.backward()
        opt.step(lr)
        log_lines.append(
            f"{it},{lr!r},{loss_val!r},{diag_sum / cfg.batch_size!r},{off_sum / cfg.batch_size!r}"
        )
        last_good = snapshot(it + 1)
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(last_good, os.path.join(cfg.out_dir, f"pretrained.{it + 1:06d}.ckpt"))
    final = snapshot(cfg.iterations) if cfg.iterations > start_iter else last_good
    save_checkpoint(final, final_path)
    _flush_log(log_lines, log_path)
    return final


def _flush_log(lines: list[str], log_path: str | None):
    if log_path is None:
        return
    with open(log_path, "w") as f:
        f.write("iter,lr,loss,diag_term,offdiag_term\n")
        for line in lines:
            f.write(line + "\n")
