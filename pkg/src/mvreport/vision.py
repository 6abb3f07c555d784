"""Region-level feature extraction, per-view latent projections, and fusion.

The convolutional extractor is a desk-scale stand-in for a large pretrained
backbone; anything that produces (R, D) region features can replace it, and a
precomputed-feature archive is supported for exactly that purpose.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

VIEWS = ("frontal", "lateral")


class ConvFeatureExtractor(nn.Module):
    """Small strided conv stack ending in a fixed grid of region features.

    Input (B, C, H, W) -> output (B, R, D) with R = grid_size ** 2.
    """

    def __init__(self, in_channels: int = 1, feat_dim: int = 32, grid_size: int = 4):
        super().__init__()
        self.in_channels = in_channels
        self.feat_dim = feat_dim
        self.grid_size = grid_size
        mid = max(feat_dim // 2, 4)
        self.conv1 = nn.Conv2d(in_channels, mid, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(mid, feat_dim, kernel_size=3, stride=2, padding=1)
        self.act = nn.ELU()
        self.pool = nn.AdaptiveAvgPool2d(grid_size)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != self.in_channels:
            raise ValueError(
                f"expected images of shape (B, {self.in_channels}, H, W), got {tuple(images.shape)}"
            )
        x = self.act(self.conv1(images))
        x = self.act(self.conv2(x))
        x = self.pool(x)  # (B, D, g, g)
        return x.flatten(2).transpose(1, 2)  # (B, R, D)


class ViewProjection(nn.Module):
    """Affine + ELU stack mapping raw region features into the latent space."""

    def __init__(self, feat_dim: int, latent_dim: int, layers: int = 1):
        super().__init__()
        if layers < 1:
            raise ValueError(f"need at least one projection layer, got {layers}")
        dims = [feat_dim] + [latent_dim] * layers
        self.net = nn.Sequential()
        for i in range(layers):
            self.net.append(nn.Linear(dims[i], dims[i + 1]))
            self.net.append(nn.ELU())

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.net(features)


class ViewProjector(nn.Module):
    """Holds the two view-specific projections (distinct parameter sets)."""

    def __init__(self, feat_dim: int, latent_dim: int, layers: int = 1):
        super().__init__()
        self.frontal = ViewProjection(feat_dim, latent_dim, layers)
        self.lateral = ViewProjection(feat_dim, latent_dim, layers)

    def forward(self, features: torch.Tensor, view: str) -> torch.Tensor:
        if view == "frontal":
            return self.frontal(features)
        if view == "lateral":
            return self.lateral(features)
        raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")


def project_view(projector: ViewProjector, features: torch.Tensor, view: str) -> torch.Tensor:
    return projector(features, view)


def fuse_views(emb_frontal: torch.Tensor, emb_lateral: torch.Tensor) -> torch.Tensor:
    """Elementwise sum of the two view embeddings."""
    if emb_frontal.shape != emb_lateral.shape:
        raise ValueError(
            f"view embeddings must share a shape, got {tuple(emb_frontal.shape)} "
            f"vs {tuple(emb_lateral.shape)}"
        )
    return emb_frontal + emb_lateral


# -- Precomputed feature archive ---------------------------------------------
# A .npz file keyed by "<case_id>::<view>" holding (R, D) float arrays, so a
# full-scale backbone's features can be slotted in without code changes.


def save_feature_archive(path: str | Path, features: dict[str, dict[str, np.ndarray]]) -> None:
    flat = {}
    for case_id, views in features.items():
        for view, arr in views.items():
            if view not in VIEWS:
                raise ValueError(f"unknown view {view!r} for case {case_id!r}")
            flat[f"{case_id}::{view}"] = np.asarray(arr)
    np.savez(path, **flat)


def load_feature_archive(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature archive not found: {path}")
    out: dict[str, dict[str, np.ndarray]] = {}
    with np.load(path) as npz:
        for key in npz.files:
            case_id, sep, view = key.rpartition("::")
            if not sep or view not in VIEWS:
                raise ValueError(f"malformed archive key {key!r}")
            out.setdefault(case_id, {})[view] = npz[key]
    return out
