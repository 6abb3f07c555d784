"""Generation branch: self-attention encoder over region features and an
attention-augmented LSTM decoder with greedy, sampled, and beam decoding.

The decoder exposes its per-step context and hidden vectors because the
contrastive branch projects the last step of a teacher-forced pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import BOS_ID, EOS_ID, PAD_ID


@dataclass
class DecoderState:
    h: torch.Tensor     # (B, H)
    cell: torch.Tensor  # (B, H)
    ctx: torch.Tensor   # (B, d) attention context of the step just taken
    t: int
    attn: torch.Tensor | None = None  # (B, R) attention weights, for inspection


@dataclass
class Hypothesis:
    ids: list[int]
    logprob: float  # sum of per-token log-probabilities
    finished: bool


class SelfAttentionBlock(nn.Module):
    """Post-norm multi-head self-attention + feed-forward, no positions."""

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} must be divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, 2 * dim), nn.ReLU(), nn.Linear(2 * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, r, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        split = lambda t: t.view(b, r, self.heads, self.head_dim).transpose(1, 2)
        q, k, v = split(q), split(k), split(v)
        att = torch.softmax(q @ k.transpose(-1, -2) / self.head_dim**0.5, dim=-1)
        mixed = (att @ v).transpose(1, 2).reshape(b, r, d)
        x = self.norm1(x + self.proj(mixed))
        return self.norm2(x + self.ffn(x))


class MemoryEncoder(nn.Module):
    """Stack of self-attention blocks; zero layers is the identity."""

    def __init__(self, dim: int, layers: int = 2, heads: int = 4):
        super().__init__()
        self.blocks = nn.ModuleList(SelfAttentionBlock(dim, heads) for _ in range(layers))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        x = features
        for block in self.blocks:
            x = block(x)
        return x


class AttentionLSTMDecoder(nn.Module):
    """LSTM cell with additive attention over the encoded memory."""

    def __init__(self, vocab_size: int, embed_dim: int, hidden_dim: int,
                 memory_dim: int, attn_dim: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.memory_dim = memory_dim
        self.embed = nn.Embedding(vocab_size, embed_dim, padding_idx=PAD_ID)
        self.attn_mem = nn.Linear(memory_dim, attn_dim)
        self.attn_h = nn.Linear(hidden_dim, attn_dim)
        self.attn_v = nn.Linear(attn_dim, 1, bias=False)
        self.cell = nn.LSTMCell(embed_dim + memory_dim, hidden_dim)
        self.init_h = nn.Linear(memory_dim, hidden_dim)
        self.init_c = nn.Linear(memory_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim + memory_dim, vocab_size)

    def init_state(self, memory: torch.Tensor) -> DecoderState:
        pooled = memory.mean(dim=1)
        return DecoderState(
            h=torch.tanh(self.init_h(pooled)),
            cell=torch.tanh(self.init_c(pooled)),
            ctx=memory.new_zeros(memory.shape[0], self.memory_dim),
            t=0,
        )

    def _attend(self, h: torch.Tensor, memory: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        scores = self.attn_v(torch.tanh(self.attn_mem(memory) + self.attn_h(h).unsqueeze(1)))
        weights = torch.softmax(scores.squeeze(-1), dim=-1)  # (B, R)
        ctx = torch.bmm(weights.unsqueeze(1), memory).squeeze(1)  # (B, d)
        return ctx, weights

    def step(self, state: DecoderState, tokens: torch.Tensor,
             memory: torch.Tensor) -> tuple[torch.Tensor, DecoderState]:
        if tokens.min() < 0 or tokens.max() >= self.vocab_size:
            raise ValueError("token id out of range")
        ctx, weights = self._attend(state.h, memory)
        h, cell = self.cell(torch.cat([self.embed(tokens), ctx], dim=-1),
                            (state.h, state.cell))
        logits = self.out(torch.cat([h, ctx], dim=-1))
        return logits, DecoderState(h=h, cell=cell, ctx=ctx, t=state.t + 1, attn=weights)

    def forced(self, memory: torch.Tensor,
               tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Teacher-forced pass over tokens (B, L).

        Returns per-step logits (B, L-1, V) predicting tokens[:, 1:], plus the
        context and hidden traces (B, L-1, d) and (B, L-1, H).
        """
        state = self.init_state(memory)
        logits_seq, ctx_seq, h_seq = [], [], []
        for t in range(tokens.shape[1] - 1):
            logits, state = self.step(state, tokens[:, t], memory)
            logits_seq.append(logits)
            ctx_seq.append(state.ctx)
            h_seq.append(state.h)
        return (torch.stack(logits_seq, dim=1),
                torch.stack(ctx_seq, dim=1),
                torch.stack(h_seq, dim=1))


def last_step_semantics(ctx_seq: torch.Tensor, h_seq: torch.Tensor,
                        lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Pick the (context, hidden) pair at each sample's final emitted step.

    ``lengths`` counts ids including BOS and EOS, so the step that produces
    EOS is lengths - 2; unterminated rows fall back to the last step taken.
    """
    idx = (lengths - 2).clamp(min=0, max=ctx_seq.shape[1] - 1)
    rows = torch.arange(ctx_seq.shape[0], device=ctx_seq.device)
    return ctx_seq[rows, idx], h_seq[rows, idx]


def xe_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean token-level negative log-likelihood; PAD targets are masked."""
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1),
                           ignore_index=PAD_ID)


def greedy_decode(decoder: AttentionLSTMDecoder, memory: torch.Tensor,
                  max_len: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Batched argmax decoding.

    Returns ids (B, T) starting with BOS and padded after EOS, the summed
    log-probability per row, and a finished mask (EOS emitted before the
    length cap).
    """
    b = memory.shape[0]
    device = memory.device
    ids = torch.full((b, 1), BOS_ID, dtype=torch.long, device=device)
    state = decoder.init_state(memory)
    sum_logp = torch.zeros(b, dtype=memory.dtype, device=device)
    finished = torch.zeros(b, dtype=torch.bool, device=device)
    while ids.shape[1] < max_len and not bool(finished.all()):
        logits, state = decoder.step(state, ids[:, -1], memory)
        logp = F.log_softmax(logits, dim=-1)
        nxt = logits.argmax(dim=-1)
        nxt = torch.where(finished, torch.full_like(nxt, PAD_ID), nxt)
        picked = logp.gather(1, nxt.unsqueeze(1)).squeeze(1)
        sum_logp = sum_logp + torch.where(finished, torch.zeros_like(picked), picked)
        finished = finished | (nxt == EOS_ID)
        ids = torch.cat([ids, nxt.unsqueeze(1)], dim=1)
    return ids, sum_logp, finished


def sample_decode(decoder: AttentionLSTMDecoder, memory: torch.Tensor, max_len: int,
                  generator: torch.Generator | None = None, temperature: float = 1.0,
                  ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Batched multinomial rollout; the returned log-probability sum keeps the
    autograd graph for policy-gradient updates."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    b = memory.shape[0]
    device = memory.device
    ids = torch.full((b, 1), BOS_ID, dtype=torch.long, device=device)
    state = decoder.init_state(memory)
    sum_logp = torch.zeros(b, dtype=memory.dtype, device=device)
    finished = torch.zeros(b, dtype=torch.bool, device=device)
    while ids.shape[1] < max_len and not bool(finished.all()):
        logits, state = decoder.step(state, ids[:, -1], memory)
        logp = F.log_softmax(logits, dim=-1)
        probs = F.softmax(logits / temperature, dim=-1)
        nxt = torch.multinomial(probs, 1, generator=generator).squeeze(1)
        nxt = torch.where(finished, torch.full_like(nxt, PAD_ID), nxt)
        picked = logp.gather(1, nxt.unsqueeze(1)).squeeze(1)
        sum_logp = sum_logp + torch.where(finished, torch.zeros_like(picked), picked)
        finished = finished | (nxt == EOS_ID)
        ids = torch.cat([ids, nxt.unsqueeze(1)], dim=1)
    return ids, sum_logp, finished


def _hypothesis_from_row(ids: torch.Tensor, logprob: float, max_len: int) -> Hypothesis:
    row = ids.tolist()
    if EOS_ID in row:
        row = row[: row.index(EOS_ID) + 1]
    return Hypothesis(ids=row, logprob=logprob,
                      finished=row[-1] == EOS_ID or len(row) == max_len)


def generate_greedy(decoder: AttentionLSTMDecoder, memory: torch.Tensor,
                    max_len: int) -> Hypothesis:
    """Single-sample greedy decode; memory is (R, d) or (1, R, d)."""
    memory = memory.unsqueeze(0) if memory.dim() == 2 else memory
    with torch.no_grad():
        ids, sum_logp, _ = greedy_decode(decoder, memory, max_len)
    return _hypothesis_from_row(ids[0], float(sum_logp[0]), max_len)


def generate_sample(decoder: AttentionLSTMDecoder, memory: torch.Tensor, max_len: int,
                    generator: torch.Generator | None = None,
                    temperature: float = 1.0) -> tuple[Hypothesis, list[float]]:
    """Single-sample rollout returning the hypothesis and per-step logprobs."""
    memory = memory.unsqueeze(0) if memory.dim() == 2 else memory
    state = decoder.init_state(memory)
    ids = [BOS_ID]
    step_logps: list[float] = []
    with torch.no_grad():
        while len(ids) < max_len:
            logits, state = decoder.step(
                state, torch.tensor([ids[-1]], device=memory.device), memory)
            probs = F.softmax(logits / temperature, dim=-1)
            nxt = int(torch.multinomial(probs, 1, generator=generator).item())
            step_logps.append(float(F.log_softmax(logits, dim=-1)[0, nxt]))
            ids.append(nxt)
            if nxt == EOS_ID:
                break
    hyp = Hypothesis(ids=ids, logprob=float(sum(step_logps)),
                     finished=ids[-1] == EOS_ID or len(ids) == max_len)
    return hyp, step_logps


def beam_search(decoder: AttentionLSTMDecoder, memory: torch.Tensor, beam: int,
                max_len: int, length_norm: bool = True) -> Hypothesis:
    """Beam search over one sample; returns the best finished hypothesis.

    Candidates are ranked by mean log-probability per emitted token when
    ``length_norm`` is set (the default), otherwise by the raw sum.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    memory = memory.unsqueeze(0) if memory.dim() == 2 else memory
    device = memory.device

    def final_score(sum_logp: float, n_ids: int) -> float:
        return sum_logp / max(n_ids - 1, 1) if length_norm else sum_logp

    with torch.no_grad():
        live_ids = torch.full((1, 1), BOS_ID, dtype=torch.long, device=device)
        live_scores = torch.zeros(1, dtype=memory.dtype, device=device)
        state = decoder.init_state(memory)
        done: list[tuple[list[int], float]] = []
        while live_ids.shape[0] > 0 and live_ids.shape[1] < max_len:
            k = live_ids.shape[0]
            logits, new_state = decoder.step(state, live_ids[:, -1],
                                             memory.expand(k, -1, -1))
            logp = F.log_softmax(logits, dim=-1)
            total = (live_scores.unsqueeze(1) + logp).view(-1)
            width = min(beam, total.numel())
            top_scores, flat_idx = total.topk(width)
            hyp_idx = flat_idx // decoder.vocab_size
            tok_idx = flat_idx % decoder.vocab_size
            next_ids = torch.cat([live_ids[hyp_idx], tok_idx.unsqueeze(1)], dim=1)
            keep = []
            for row in range(width):
                if int(tok_idx[row]) == EOS_ID:
                    done.append((next_ids[row].tolist(), float(top_scores[row])))
                else:
                    keep.append(row)
            sel = torch.tensor(keep, dtype=torch.long, device=device)
            live_ids = next_ids[sel]
            live_scores = top_scores[sel]
            parents = hyp_idx[sel]
            state = DecoderState(h=new_state.h[parents], cell=new_state.cell[parents],
                                 ctx=new_state.ctx[parents], t=new_state.t)
        for row in range(live_ids.shape[0]):  # length-capped, unterminated
            done.append((live_ids[row].tolist(), float(live_scores[row])))
    ids, sum_logp = max(done, key=lambda pair: final_score(pair[1], len(pair[0])))
    return Hypothesis(ids=ids, logprob=sum_logp,
                      finished=ids[-1] == EOS_ID or len(ids) == max_len)
