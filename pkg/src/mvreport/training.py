"""Two-phase training: alternating XE/contrastive pretraining, then
self-critical policy-gradient fine-tuning with the mixed reward.

Determinism contract: given a fixed config (which includes every seed), two
runs produce byte-identical train logs and checkpoints.  All sampling flows
through explicit generators, batch order is a pure function of (seed, pass
index), and nothing wall-clock-dependent is logged.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .contrastive import mvco_loss
from .data import (Case, DatasetSplit, Vocabulary, encode_report,
                   generate_synthetic_dataset, split_dataset)
from .generator import beam_search, greedy_decode, sample_decode, xe_loss
from .metrics import MetricReport, evaluate_corpus, mixed_reward
from .model import ReportModel, load_checkpoint, model_from_checkpoint, save_checkpoint
from .vision import load_feature_archive

GENERATION, CONTRASTIVE = "generation", "contrastive"


def lr_pretrain(step: int, base_lr: float, warmup_steps: int) -> float:
    """Inverse-square-root schedule with linear warmup, normalized so the
    peak value at ``step == warmup_steps`` equals ``base_lr``."""
    if step <= 0:
        return 0.0
    scale = base_lr * warmup_steps**0.5
    return scale * min(step**-0.5, step * warmup_steps**-1.5)


def lr_rl(epoch: float, rl_lr: float, period: int = 15, floor_ratio: float = 0.01) -> float:
    """Cosine annealing from ``rl_lr`` down to a floor, restarting each period."""
    floor = rl_lr * floor_ratio
    phase = (epoch % period) / period
    return floor + (rl_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * phase))


def alternate_schedule(step: int, ratio: tuple[int, int] = (1, 1)) -> str:
    """Which branch trains at this step: G generation steps, then C
    contrastive steps, repeating."""
    gen, con = ratio
    return GENERATION if step % (gen + con) < gen else CONTRASTIVE


class TrainLog:
    """Append-only training log, persisted as JSONL."""

    def __init__(self) -> None:
        self.entries: list[dict] = []

    def append(self, **entry) -> None:
        self.entries.append(entry)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> list[dict]:
        with Path(path).open() as fh:
            return [json.loads(line) for line in fh if line.strip()]


class Trainer:
    def __init__(self, config: TrainConfig, cases: list[Case] | None = None):
        self.config = config
        if cases is None:
            cases = generate_synthetic_dataset(
                config.n_cases, config.n_findings, config.noise_level,
                seed=config.data_seed, image_size=config.image_size)
        self.split: DatasetSplit = split_dataset(cases, config.data_seed)
        self.vocab = Vocabulary.from_corpus([c.report for c in self.split.train],
                                            config.min_freq)
        self._encoded = {c.case_id: encode_report(c.report, self.vocab, config.max_len)
                         for c in cases}
        self.features = (load_feature_archive(config.features_archive)
                         if config.features_archive else None)
        torch.manual_seed(config.seed)
        self.model = ReportModel(config, len(self.vocab))
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.base_lr)
        self.rng = torch.Generator().manual_seed(config.seed + 1)
        self.log = TrainLog()
        # progress counters (all serialized for exact resume)
        self.update_step = 0   # optimizer updates, both phases
        self.sched_step = 0    # alternation schedule position
        self.gen_done = 0      # pretrain generation steps completed
        self.pre_batches = 0   # pretrain batches drawn from the stream
        self.rl_done = 0       # RL updates completed
        self.action_counts = [0, 0, 0]

    # -- data plumbing --------------------------------------------------------

    def _pass_order(self, pass_idx: int, n: int, salt: int) -> torch.Tensor:
        g = torch.Generator().manual_seed(self.config.seed * 100_003 + salt * 7919 + pass_idx)
        return torch.randperm(n, generator=g)

    def _draw_batch(self, counter: int, cases: list[Case], batch_size: int, salt: int) -> dict:
        n_batches = math.ceil(len(cases) / batch_size)
        pass_idx, slot = divmod(counter, n_batches)
        order = self._pass_order(pass_idx, len(cases), salt)
        chosen = [cases[i] for i in order[slot * batch_size:(slot + 1) * batch_size].tolist()]
        return self.collate(chosen)

    def collate(self, cases: list[Case]) -> dict:
        encoded = [self._encoded.get(c.case_id) or
                   encode_report(c.report, self.vocab, self.config.max_len) for c in cases]
        max_len = max(len(ids) for ids in encoded)
        tokens = torch.zeros(len(cases), max_len, dtype=torch.long)
        for i, ids in enumerate(encoded):
            tokens[i, :len(ids)] = torch.tensor(ids)
        batch = {
            "case_ids": [c.case_id for c in cases],
            "reports": [c.report for c in cases],
            "tokens": tokens,
            "lengths": torch.tensor([len(ids) for ids in encoded]),
        }
        if self.features is not None:
            batch["features_frontal"] = torch.stack(
                [torch.from_numpy(np.asarray(self.features[c.case_id]["frontal"], dtype=np.float32))
                 for c in cases])
            batch["features_lateral"] = torch.stack(
                [torch.from_numpy(np.asarray(self.features[c.case_id]["lateral"], dtype=np.float32))
                 for c in cases])
        else:
            batch["frontal"] = torch.stack([torch.from_numpy(c.frontal) for c in cases])
            batch["lateral"] = torch.stack([torch.from_numpy(c.lateral) for c in cases])
        return batch

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.split.train) / self.config.batch_size)

    @property
    def rl_steps_per_epoch(self) -> int:
        return math.ceil(len(self.split.train) / self.config.rl_batch_size)

    def _apply_update(self, loss: torch.Tensor, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.update_step += 1

    # -- pretraining ----------------------------------------------------------

    def _generation_memory(self, batch: dict) -> torch.Tensor:
        f_f, f_l = self.model.view_features(batch)
        if self.model.mode == "mvco_dot" and self.model.training:
            _, sample = self.model.route(f_f, f_l, self.config.tau_s, self.rng)
            for idx in sample.hard_index.tolist():
                self.action_counts[idx] += 1
            feats = self.model.generation_input(f_f, f_l, sample)
        else:
            feats = self.model.generation_input(f_f, f_l)
        return self.model.encode(feats)

    def pretrain_step_generation(self, batch: dict) -> float:
        self.model.train()
        memory = self._generation_memory(batch)
        logits, _, _ = self.model.decoder.forced(memory, batch["tokens"])
        loss = xe_loss(logits, batch["tokens"][:, 1:])
        self._apply_update(loss, lr_pretrain(self.update_step + 1, self.config.base_lr,
                                             self.config.warmup_steps))
        return float(loss.detach())

    def pretrain_step_contrastive(self, batch: dict) -> float:
        self.model.train()
        f_f, f_l = self.model.view_features(batch)
        x_f, x_l = self.model.contrastive_embeddings(f_f, f_l, batch["tokens"],
                                                     batch["lengths"])
        loss = mvco_loss(x_f, x_l, self.config.tau_c, self.config.mvco_symmetric)
        self._apply_update(loss, lr_pretrain(self.update_step + 1, self.config.base_lr,
                                             self.config.warmup_steps))
        return float(loss.detach())

    def _epoch_summary(self, phase: str) -> None:
        epoch = (self.gen_done // self.steps_per_epoch if phase == "pretrain"
                 else self.rl_done // self.rl_steps_per_epoch)
        entry: dict = {"kind": "epoch", "phase": phase, "epoch": epoch}
        if self.model.mode == "mvco_dot" and phase == "pretrain":
            total = sum(self.action_counts)
            if total:
                entry["action_freqs"] = [c / total for c in self.action_counts]
            self.action_counts = [0, 0, 0]
        total_epochs = (self.config.pretrain_epochs if phase == "pretrain"
                        else self.config.rl_epochs)
        if self.config.val_every > 0 and (epoch % self.config.val_every == 0
                                          or epoch == total_epochs):
            entry["val"] = self.evaluate("val", decode="greedy").as_dict()
        self.log.append(**entry)

    def pretrain_steps(self, max_steps: int | None = None) -> int:
        """Run pretraining schedule steps (both branches count); stops when the
        generation branch has completed its epoch budget."""
        budget = self.config.pretrain_epochs * self.steps_per_epoch
        contrastive_on = self.model.mode in ("mvco_cat", "mvco_fusion", "mvco_dot")
        ratio = (self.config.gen_steps, self.config.con_steps)
        executed = 0
        while self.gen_done < budget and (max_steps is None or executed < max_steps):
            kind = (alternate_schedule(self.sched_step, ratio)
                    if contrastive_on and self.config.con_steps > 0 else GENERATION)
            self.sched_step += 1
            batch = self._draw_batch(self.pre_batches, self.split.train,
                                     self.config.batch_size, salt=1)
            self.pre_batches += 1
            if kind == GENERATION:
                loss = self.pretrain_step_generation(batch)
                self.gen_done += 1
                self.log.append(kind="xe", step=self.update_step, loss=loss,
                                lr=self.optimizer.param_groups[0]["lr"])
                if self.gen_done % self.steps_per_epoch == 0:
                    self._epoch_summary("pretrain")
            else:
                loss = self.pretrain_step_contrastive(batch)
                self.log.append(kind="mvco", step=self.update_step, loss=loss,
                                lr=self.optimizer.param_groups[0]["lr"])
            executed += 1
        return executed

    # -- reinforcement fine-tuning ---------------------------------------------

    def _detok(self, ids: list[int]) -> list[str]:
        return self.vocab.decode(ids, strip_special=True)

    def scst_step(self, batch: dict) -> float:
        self.model.train()
        memory = self._generation_memory(batch)
        with torch.no_grad():
            greedy_ids, _, _ = greedy_decode(self.model.decoder, memory, self.config.max_len)
        sample_ids, sum_logp, _ = sample_decode(self.model.decoder, memory,
                                                self.config.max_len, self.rng)
        weights = self.config.reward_weights
        advantages = []
        r_samples, r_greedys = [], []
        for row in range(len(batch["reports"])):
            ref = batch["reports"][row]
            r_s = mixed_reward(self._detok(sample_ids[row].tolist()), ref, weights)
            r_g = mixed_reward(self._detok(greedy_ids[row].tolist()), ref, weights)
            advantages.append(r_s - r_g)
            r_samples.append(r_s)
            r_greedys.append(r_g)
        adv = torch.tensor(advantages, dtype=sum_logp.dtype)
        loss = -(adv * sum_logp).mean()
        loss_val = float(loss.detach())
        epoch_float = self.rl_done / self.rl_steps_per_epoch
        self._apply_update(loss, lr_rl(epoch_float, self.config.rl_lr,
                                       self.config.cosine_period_epochs,
                                       self.config.rl_lr_floor_ratio))
        self.rl_done += 1
        self.log.append(kind="rl", step=self.update_step, loss=loss_val,
                        reward_sample=sum(r_samples) / len(r_samples),
                        reward_greedy=sum(r_greedys) / len(r_greedys),
                        lr=self.optimizer.param_groups[0]["lr"])
        if self.rl_done % self.rl_steps_per_epoch == 0:
            self._epoch_summary("rl")
        return loss_val

    def rl_steps(self, max_steps: int | None = None) -> int:
        budget = self.config.rl_epochs * self.rl_steps_per_epoch
        executed = 0
        while self.rl_done < budget and (max_steps is None or executed < max_steps):
            batch = self._draw_batch(self.rl_done, self.split.train,
                                     self.config.rl_batch_size, salt=2)
            self.scst_step(batch)
            executed += 1
        return executed

    # -- evaluation -------------------------------------------------------------

    def _eval_cases(self, split: str) -> list[Case]:
        return {"train": self.split.train, "val": self.split.val,
                "test": self.split.test}[split]

    def evaluate(self, split: str | list[Case], decode: str | None = None,
                 views: str = "both") -> MetricReport:
        """Decode every case of a split under deterministic routing and score
        the corpus."""
        cases = self._eval_cases(split) if isinstance(split, str) else split
        decode = decode or self.config.eval_decode
        self.model.eval()
        candidates: list[list[str]] = []
        references: list[list[str]] = []
        bs = max(self.config.batch_size, 16)
        with torch.no_grad():
            for start in range(0, len(cases), bs):
                batch = self.collate(cases[start:start + bs])
                f_f, f_l = self.model.view_features(batch)
                feats = self.model.inference_input(
                    f_f if views in ("both", "frontal") else None,
                    f_l if views in ("both", "lateral") else None)
                memory = self.model.encode(feats)
                if decode == "greedy":
                    ids, _, _ = greedy_decode(self.model.decoder, memory, self.config.max_len)
                    rows = [ids[i].tolist() for i in range(ids.shape[0])]
                else:
                    rows = [beam_search(self.model.decoder, memory[i], self.config.eval_beam,
                                        self.config.max_len).ids
                            for i in range(memory.shape[0])]
                candidates.extend(self._detok(row) for row in rows)
                references.extend(batch["reports"])
        return evaluate_corpus(candidates, references)

    # -- orchestration ------------------------------------------------------------

    def train(self, run_dir: str | Path | None = None) -> dict:
        """Full regime: pretraining then RL; writes checkpoint + log if a run
        directory is given."""
        self.pretrain_steps()
        if self.config.rl_epochs > 0:
            self.rl_steps()
        test_metrics = self.evaluate("test")
        self.log.append(kind="final", test=test_metrics.as_dict())
        out = {"test": test_metrics}
        if run_dir is not None:
            run_dir = Path(run_dir)
            run_dir.mkdir(parents=True, exist_ok=True)
            self.save(run_dir / "checkpoint.pt")
            self.log.save(run_dir / "trainlog.jsonl")
            self.config.save(run_dir / "config.yaml")
            out["checkpoint"] = run_dir / "checkpoint.pt"
            out["trainlog"] = run_dir / "trainlog.jsonl"
        return out

    # -- checkpointing ---------------------------------------------------------

    def trainer_state(self) -> dict:
        return {
            "update_step": self.update_step,
            "sched_step": self.sched_step,
            "gen_done": self.gen_done,
            "pre_batches": self.pre_batches,
            "rl_done": self.rl_done,
            "action_counts": list(self.action_counts),
            "rng_state": self.rng.get_state(),
        }

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.model, self.vocab.id_to_token,
                        optimizer=self.optimizer, trainer_state=self.trainer_state())

    @classmethod
    def from_checkpoint(cls, path: str | Path, cases: list[Case] | None = None) -> "Trainer":
        payload = load_checkpoint(path)
        model, vocab = model_from_checkpoint(payload)
        trainer = cls(model.config, cases=cases)
        if trainer.vocab.id_to_token != vocab.id_to_token:
            # the checkpoint's token/id maps are authoritative
            trainer.vocab = vocab
            trainer._encoded = {
                c.case_id: encode_report(c.report, vocab, model.config.max_len)
                for split in (trainer.split.train, trainer.split.val, trainer.split.test)
                for c in split}
            trainer.model = ReportModel(model.config, len(vocab))
            trainer.optimizer = torch.optim.Adam(trainer.model.parameters(),
                                                 lr=model.config.base_lr)
        trainer.model.load_state_dict(payload["model"])
        if payload.get("optimizer") is not None:
            trainer.optimizer.load_state_dict(payload["optimizer"])
        state = payload.get("trainer_state") or {}
        for key in ("update_step", "sched_step", "gen_done", "pre_batches", "rl_done"):
            if key in state:
                setattr(trainer, key, state[key])
        if "action_counts" in state:
            trainer.action_counts = list(state["action_counts"])
        if "rng_state" in state:
            trainer.rng.set_state(state["rng_state"])
        return trainer
