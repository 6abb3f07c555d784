"""The assembled two-branch model and checkpoint serialization.

One module owns every submodule regardless of the ablation wiring, so all
four modes share an identical parameter layout (and identical initialization
under a fixed seed); the mode only decides which parameters the forward pass
touches.

Wirings
-------
- ``base_cat`` / ``mvco_cat``: both views' raw region features are embedded by
  one shared projection and concatenated along the region axis.
- ``mvco_fusion``: per-view projections are summed into fused features.
- ``mvco_dot``: a sampled routing action picks frontal, lateral, or fused
  features per sample during training; inference routes deterministically.
"""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn as nn

from . import routing
from .config import TrainConfig
from .contrastive import SemanticProjector
from .generator import AttentionLSTMDecoder, MemoryEncoder, last_step_semantics
from .routing import ActionSample, ConfidenceHead
from .vision import ConvFeatureExtractor, ViewProjector, fuse_views

CHECKPOINT_FORMAT_VERSION = 1

CAT_MODES = ("base_cat", "mvco_cat")
CONTRASTIVE_MODES = ("mvco_cat", "mvco_fusion", "mvco_dot")


class CheckpointError(ValueError):
    """Missing or malformed checkpoint (CLI exit code 4)."""


class SharedEmbed(nn.Module):
    """View-agnostic projection used by the raw-concatenation wirings."""

    def __init__(self, feat_dim: int, latent_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(feat_dim, latent_dim), nn.ELU())

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.net(features)


class ReportModel(nn.Module):
    def __init__(self, config: TrainConfig, vocab_size: int):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.extractor = ConvFeatureExtractor(1, config.feat_dim, config.grid_size)
        self.shared_embed = SharedEmbed(config.feat_dim, config.latent_dim)
        self.views = ViewProjector(config.feat_dim, config.latent_dim, config.view_proj_layers)
        self.router = ConfidenceHead(config.latent_dim, config.router_hidden, config.dot_pooling)
        self.encoder = MemoryEncoder(config.latent_dim, config.encoder_layers, config.encoder_heads)
        self.decoder = AttentionLSTMDecoder(vocab_size, config.embed_dim, config.hidden_dim,
                                            config.latent_dim, config.attn_dim)
        self.twin_decoder = None if config.shared_decoder else AttentionLSTMDecoder(
            vocab_size, config.embed_dim, config.hidden_dim, config.latent_dim, config.attn_dim)
        self.psi = SemanticProjector(config.latent_dim, config.hidden_dim,
                                     config.proj_hidden, config.proj_dim)

    @property
    def mode(self) -> str:
        return self.config.ablation_mode

    def lateral_decoder(self) -> AttentionLSTMDecoder:
        return self.decoder if self.twin_decoder is None else self.twin_decoder

    # -- feature pipeline ---------------------------------------------------

    def view_features(self, batch: dict) -> tuple[torch.Tensor, torch.Tensor]:
        """Raw region features for both views: images through the extractor,
        or precomputed features when the batch carries them."""
        if "features_frontal" in batch:
            return batch["features_frontal"], batch["features_lateral"]
        return self.extractor(batch["frontal"]), self.extractor(batch["lateral"])

    def view_embeddings(self, f_frontal: torch.Tensor,
                        f_lateral: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-view latent embeddings under the current wiring."""
        if self.mode in CAT_MODES:
            return self.shared_embed(f_frontal), self.shared_embed(f_lateral)
        return self.views(f_frontal, "frontal"), self.views(f_lateral, "lateral")

    def generation_input(self, f_frontal: torch.Tensor, f_lateral: torch.Tensor,
                         sample: ActionSample | None = None) -> torch.Tensor:
        """Features the generation branch encodes, per the mode wiring."""
        if self.mode in CAT_MODES:
            cat = torch.cat([f_frontal, f_lateral], dim=1)  # (B, 2R, D)
            return self.shared_embed(cat)
        emb_f, emb_l = self.view_embeddings(f_frontal, f_lateral)
        if self.mode == "mvco_fusion":
            return fuse_views(emb_f, emb_l)
        if sample is None:
            raise ValueError("mvco_dot training input requires a routing sample")
        return routing.select_input([emb_f, emb_l, fuse_views(emb_f, emb_l)], sample)

    def route(self, f_frontal: torch.Tensor, f_lateral: torch.Tensor, tau_s: float,
              generator: torch.Generator | None = None) -> tuple[routing.ActionDistribution, ActionSample]:
        emb_f, emb_l = self.view_embeddings(f_frontal, f_lateral)
        dist = self.router(emb_f, emb_l)
        sample = routing.sample_action(dist, tau_s, generator, form=self.config.gumbel_form)
        return dist, sample

    def inference_input(self, f_frontal: torch.Tensor | None,
                        f_lateral: torch.Tensor | None) -> torch.Tensor:
        """Deterministic routing from available views (no sampling).

        The concatenation wirings need both views; the projected wirings
        accept any nonempty subset.
        """
        if self.mode in CAT_MODES:
            if f_frontal is None or f_lateral is None:
                raise ValueError(f"mode {self.mode!r} requires both views at inference")
            return self.generation_input(f_frontal, f_lateral)
        emb_f = self.views(f_frontal, "frontal") if f_frontal is not None else None
        emb_l = self.views(f_lateral, "lateral") if f_lateral is not None else None
        selected, _ = routing.inference_select(emb_f, emb_l)
        return selected

    def encode(self, features: torch.Tensor) -> torch.Tensor:
        return self.encoder(features)

    # -- contrastive branch ---------------------------------------------------

    def contrastive_embeddings(self, f_frontal: torch.Tensor, f_lateral: torch.Tensor,
                               tokens: torch.Tensor,
                               lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Teacher-force each view stream on the report and project the final
        (context, hidden) pair of each into the semantic space."""
        emb_f, emb_l = self.view_embeddings(f_frontal, f_lateral)
        out = []
        for emb, decoder in ((emb_f, self.decoder), (emb_l, self.lateral_decoder())):
            memory = self.encoder(emb)
            _, ctx_seq, h_seq = decoder.forced(memory, tokens)
            c_last, h_last = last_step_semantics(ctx_seq, h_seq, lengths)
            out.append(self.psi(c_last, h_last))
        return out[0], out[1]


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path: str | Path, model: ReportModel, vocab_tokens: list[str],
                    optimizer: torch.optim.Optimizer | None = None,
                    trainer_state: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab": list(vocab_tokens),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "trainer_state": trainer_state or {},
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {payload['format_version']} in {path}"
        )
    return payload


def model_from_checkpoint(payload: dict) -> tuple[ReportModel, "Vocabulary"]:
    from .data import Vocabulary

    config = TrainConfig(**{k: tuple(v) if isinstance(v, list) and k == "reward_weights" else v
                            for k, v in payload["config"].items()})
    vocab = Vocabulary(payload["vocab"])
    model = ReportModel(config, len(vocab))
    model.load_state_dict(payload["model"])
    return model, vocab
