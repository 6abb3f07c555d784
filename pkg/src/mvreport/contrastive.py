"""Semantic projection head and the paired-view NT-Xent loss.

The loss operates on a pool of 2N decoder-state projections (N frontal, N
lateral).  Each anchor's positive is its other-view twin; the denominator
ranges over the remaining 2N - 1 embeddings, so with N = 1 the loss is
exactly zero.
"""

from __future__ import annotations

import torch
import torch.nn as nn


class SemanticProjector(nn.Module):
    """Two fully connected layers with a ReLU over concat(context, hidden)."""

    def __init__(self, context_dim: int, hidden_dim: int, proj_hidden: int, proj_dim: int):
        super().__init__()
        self.context_dim = context_dim
        self.hidden_dim = hidden_dim
        self.fc1 = nn.Linear(context_dim + hidden_dim, proj_hidden)
        self.fc2 = nn.Linear(proj_hidden, proj_dim)

    def forward(self, ctx: torch.Tensor, hidden: torch.Tensor) -> torch.Tensor:
        if ctx.shape[-1] != self.context_dim or hidden.shape[-1] != self.hidden_dim:
            raise ValueError(
                f"expected dims ({self.context_dim}, {self.hidden_dim}), "
                f"got ({ctx.shape[-1]}, {hidden.shape[-1]})"
            )
        return self.fc2(torch.relu(self.fc1(torch.cat([ctx, hidden], dim=-1))))


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of two vectors; undefined (raises) on zero vectors."""
    na, nb = a.norm(), b.norm()
    if float(na) == 0.0 or float(nb) == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    return (a * b).sum() / (na * nb)


def mvco_loss(x_frontal: torch.Tensor, x_lateral: torch.Tensor, tau_c: float,
              symmetric: bool = True) -> torch.Tensor:
    """Paired-view NT-Xent over the pooled 2N embeddings.

    ``symmetric`` averages the lateral-anchored and frontal-anchored
    directions (the default); disabling it keeps only the lateral anchors.
    """
    if tau_c <= 0:
        raise ValueError(f"tau_c must be > 0, got {tau_c}")
    if x_frontal.shape != x_lateral.shape or x_frontal.dim() != 2:
        raise ValueError("expected matching (N, P) embedding batches")
    n = x_frontal.shape[0]
    if n < 1:
        raise ValueError("need at least one pair")
    z = torch.cat([x_frontal, x_lateral], dim=0)  # (2N, P)
    norms = z.norm(dim=1)
    if bool((norms == 0).any()):
        raise ValueError("cosine similarity is undefined for zero embeddings")
    zn = z / norms.unsqueeze(1)
    sim = zn @ zn.T / tau_c
    sim.fill_diagonal_(float("-inf"))  # exclude k == anchor from the pool
    pos = torch.cat([torch.arange(n, 2 * n), torch.arange(0, n)]).to(z.device)
    per_anchor = torch.logsumexp(sim, dim=1) - sim[torch.arange(2 * n, device=z.device), pos]
    if symmetric:
        return per_anchor.mean()
    return per_anchor[n:].mean()  # lateral anchors only
