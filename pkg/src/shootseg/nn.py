"""Point-feature backbone, SGD with momentum and the polynomial LR rule.

The backbone maps an (M, 6) voxelized cloud (xyz + rgb) to (M, D) features:
a linear lift with ReLU, then T blocks of {radius-neighborhood mean
aggregation, linear, column standardization, ReLU}, then a final linear.
Input columns are standardized over the cloud before the lift so coordinate
magnitudes (mm) and colors ([0,1]) enter on comparable scales; the
aggregation graph itself is built on raw mm coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import autograd as ag
from .cloud import PointCloud
from .spatial import mean_aggregation_matrix


@dataclass
class BackboneConfig:
    input_dim: int = 6
    hidden_dim: int = 32
    blocks: int = 3
    output_dim: int = 32
    aggregation_radius: float = 4.0  # mm, shared by all blocks
    voxel_size: float = 1.0          # mm grid the input cloud was collapsed to

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.blocks, self.output_dim) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.aggregation_radius <= 0 or self.voxel_size <= 0:
            raise ValueError("radius and voxel size must be positive")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "blocks": self.blocks,
            "output_dim": self.output_dim,
            "aggregation_radius": self.aggregation_radius,
            "voxel_size": self.voxel_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


def _he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))


class Backbone:
    """Differentiable per-point encoder standing in for a sparse conv U-net."""

    def __init__(self, cfg: BackboneConfig, seed: int = 0, params: dict | None = None):
        self.cfg = cfg
        if params is not None:
            self.params = {k: ag.parameter(v) for k, v in params.items()}
            return
        rng = np.random.default_rng(seed)
        p: dict[str, ag.Tensor] = {}
        p["lift.w"] = ag.parameter(_he_init(rng, cfg.input_dim, cfg.hidden_dim))
        p["lift.b"] = ag.parameter(np.zeros(cfg.hidden_dim))
        for t in range(cfg.blocks):
            p[f"block{t}.w"] = ag.parameter(_he_init(rng, cfg.hidden_dim, cfg.hidden_dim))
            p[f"block{t}.b"] = ag.parameter(np.zeros(cfg.hidden_dim))
        p["out.w"] = ag.parameter(_he_init(rng, cfg.hidden_dim, cfg.output_dim))
        p["out.b"] = ag.parameter(np.zeros(cfg.output_dim))
        self.params = p

    def forward(self, feats: np.ndarray, agg: sparse.csr_matrix) -> ag.Tensor:
        """(M, input_dim) features + aggregation matrix -> (M, output_dim) tensor.

        Coordinate columns are re-expressed relative to the neighborhood mean
        before the lift: like a convolution, the encoder sees local structure,
        not absolute position (which self-supervision would latch onto as a
        shortcut).
        """
        if feats.shape[1] != self.cfg.input_dim:
            raise ValueError(
                f"backbone expects {self.cfg.input_dim} input features, got {feats.shape[1]}"
            )
        agg = agg.tocsr()
        agg_t = agg.T.tocsr()
        feats = np.hstack([feats[:, :3] - agg @ feats[:, :3], feats[:, 3:]])
        h = ag.standardize_columns(ag.as_tensor(feats))
        h = ag.relu(h @ self.params["lift.w"] + self.params["lift.b"])
        for t in range(self.cfg.blocks):
            h = ag.spmm(agg, h, agg_t)
            h = h @ self.params[f"block{t}.w"] + self.params[f"block{t}.b"]
            h = ag.standardize_columns(h)
            h = ag.relu(h)
        return h @ self.params["out.w"] + self.params["out.b"]


def cloud_features(cloud: PointCloud) -> np.ndarray:
    """Backbone input columns: mm coordinates and RGB, concatenated."""
    return np.hstack([cloud.coords, cloud.colors])


def backbone_forward(backbone: Backbone, cloud: PointCloud) -> ag.Tensor:
    """Forward a voxelized cloud, building the aggregation graph on its coords."""
    agg = mean_aggregation_matrix(cloud.coords, backbone.cfg.aggregation_radius)
    return backbone.forward(cloud_features(cloud), agg)


# optimization ---------------------------------------------------------------


def poly_lr(iteration: int, total_iters: int, lr0: float, power: float = 0.9) -> float:
    """lr0 * (1 - iter/total)^power."""
    if total_iters <= 0:
        raise ValueError("total_iters must be positive")
    if lr0 <= 0:
        raise ValueError("lr0 must be positive")
    if not 0 <= iteration <= total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {total_iters}]")
    return lr0 * (1.0 - iteration / total_iters) ** power


def sgd_step(
    params: dict[str, ag.Tensor],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.9,
) -> None:
    """Classical-momentum SGD update in place; `velocity` is mutated."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        buf = velocity.get(name)
        if buf is None:
            buf = np.zeros_like(p.data)
        buf = momentum * buf + g
        velocity[name] = buf
        p.data -= lr * buf


class SGD:
    def __init__(self, params: dict[str, ag.Tensor], momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float):
        grads = {
            k: p.grad for k, p in self.params.items() if p.grad is not None
        }
        sgd_step(self.params, grads, self.velocity, lr, self.momentum)
