"""Adaptive input selection over {frontal, lateral, fusion}.

A confidence head maps pooled view embeddings to a 3-way distribution; during
training a Gumbel-Softmax draw picks one candidate with a hard forward value
and a straight-through soft gradient.  During inference the route is a
deterministic function of which views are present.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .vision import fuse_views

FRONTAL, LATERAL, FUSION = 0, 1, 2
ACTION_NAMES = ("frontal", "lateral", "fusion")


@dataclass
class ActionDistribution:
    probs: torch.Tensor   # (B, 3) on the simplex
    logits: torch.Tensor  # (B, 3)


@dataclass
class ActionSample:
    soft: torch.Tensor        # (B, 3) relaxed weights, sums to 1
    hard_index: torch.Tensor  # (B,) argmax of soft
    tau_s: float


class ConfidenceHead(nn.Module):
    """Pool each view, concatenate, and score the three routing actions."""

    def __init__(self, latent_dim: int, hidden_dim: int = 32, pooling: str = "mean"):
        super().__init__()
        if pooling not in ("mean", "max"):
            raise ValueError(f"pooling must be 'mean' or 'max', got {pooling!r}")
        self.pooling = pooling
        self.hidden = nn.Linear(2 * latent_dim, hidden_dim)
        self.act = nn.ELU()
        self.out = nn.Linear(hidden_dim, 3)

    def _pool(self, regions: torch.Tensor) -> torch.Tensor:
        if self.pooling == "mean":
            return regions.mean(dim=1)
        return regions.max(dim=1).values

    def forward(self, emb_frontal: torch.Tensor, emb_lateral: torch.Tensor) -> ActionDistribution:
        if emb_frontal.shape != emb_lateral.shape:
            raise ValueError(
                f"view embeddings must share a shape, got {tuple(emb_frontal.shape)} "
                f"vs {tuple(emb_lateral.shape)}"
            )
        pooled = torch.cat([self._pool(emb_frontal), self._pool(emb_lateral)], dim=-1)
        logits = self.out(self.act(self.hidden(pooled)))
        return ActionDistribution(probs=F.softmax(logits, dim=-1), logits=logits)


def gumbel_noise(shape, generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32, device=None) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype, device=device)
    eps = torch.finfo(dtype).tiny
    return -torch.log(-torch.log(u + eps) + eps)


def gumbel_soft_weights(log_probs: torch.Tensor, gumbel: torch.Tensor, tau_s: float,
                        form: str = "standard") -> torch.Tensor:
    """Relaxed selection weights from log-probabilities and Gumbel noise.

    ``standard`` is softmax((log p + g) / tau).  ``printed`` follows the
    alternative reading softmax(log(p + g / tau)), clamping the argument of
    the log at a tiny floor since p + g / tau can go nonpositive.
    """
    if tau_s <= 0:
        raise ValueError(f"tau_s must be > 0, got {tau_s}")
    if form == "standard":
        return F.softmax((log_probs + gumbel) / tau_s, dim=-1)
    if form == "printed":
        shifted = log_probs.exp() + gumbel / tau_s
        return F.softmax(torch.log(shifted.clamp_min(1e-12)), dim=-1)
    raise ValueError(f"unknown gumbel form {form!r}")


def sample_action(dist: ActionDistribution, tau_s: float,
                  generator: torch.Generator | None = None,
                  form: str = "standard") -> ActionSample:
    """Draw one relaxed routing sample per batch row."""
    log_probs = torch.log_softmax(dist.logits, dim=-1)
    g = gumbel_noise(log_probs.shape, generator=generator,
                     dtype=log_probs.dtype, device=log_probs.device)
    soft = gumbel_soft_weights(log_probs, g, tau_s, form=form)
    return ActionSample(soft=soft, hard_index=soft.argmax(dim=-1), tau_s=tau_s)


def select_input(candidates: list[torch.Tensor] | torch.Tensor,
                 sample: ActionSample) -> torch.Tensor:
    """Hard selection among the three candidates with straight-through grads.

    Forward value is exactly the argmax candidate (the selection weights are
    built as one_hot + (soft - soft.detach()), which is bitwise one-hot);
    gradients follow the relaxed weights into all candidates and the logits.
    """
    stacked = candidates if torch.is_tensor(candidates) else torch.stack(list(candidates), dim=1)
    if stacked.dim() < 2 or stacked.shape[1] != 3:
        raise ValueError(f"expected candidates of shape (B, 3, ...), got {tuple(stacked.shape)}")
    if sample.soft.shape != stacked.shape[:2]:
        raise ValueError(
            f"sample weights {tuple(sample.soft.shape)} do not match "
            f"candidates {tuple(stacked.shape[:2])}"
        )
    hard = F.one_hot(sample.hard_index, num_classes=3).to(sample.soft.dtype)
    weights = hard + (sample.soft - sample.soft.detach())
    shape = (stacked.shape[0], 3) + (1,) * (stacked.dim() - 2)
    return (stacked * weights.view(shape)).sum(dim=1)


def inference_select(emb_frontal: torch.Tensor | None,
                     emb_lateral: torch.Tensor | None) -> tuple[torch.Tensor, int]:
    """Deterministic routing from whichever views are present.

    Single view -> that view's embedding; both -> their fusion.  Returns the
    chosen features and the action index taken.
    """
    if emb_frontal is None and emb_lateral is None:
        raise ValueError("at least one view must be available")
    if emb_lateral is None:
        return emb_frontal, FRONTAL
    if emb_frontal is None:
        return emb_lateral, LATERAL
    return fuse_views(emb_frontal, emb_lateral), FUSION
