"""End-to-end training of the parity networks and the decoder.

All three networks are optimized jointly by one AdamW optimizer.  Each
batch draws fresh messages and fresh channel noise from a generator seeded
by ``derive_seed(train.seed, "train-batch", batch_idx)``, so a run is
reproducible and can be resumed from any batch index.
"""

from __future__ import annotations

import logging
import math
import time
from pathlib import Path

import torch

from .channel import snr_to_sigma2
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .codec import MessageBlockSequence, partition_message
from .config import ExperimentConfig, TrainConfig
from .model import MBAFSystem
from .rng import derive_seed, torch_generator

log = logging.getLogger(__name__)

LOG_EPS = 1e-12
LOG_COLUMNS = ("batch_idx", "snr_db", "loss", "grad_norm", "wall_time")


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes NaN or infinite; ``state`` holds diagnostics."""

    def __init__(self, message: str, state: dict):
        super().__init__(message)
        self.state = state


def sample_batch(generator: torch.Generator, batch_size: int, K: int, m: int,
                 num_users: int = 2) -> list[MessageBlockSequence]:
    """I.i.d. uniform messages, one :class:`MessageBlockSequence` per user."""
    bits = torch.randint(0, 2, (batch_size, num_users, K), generator=generator)
    return [partition_message(bits[:, j], m) for j in range(num_users)]


def block_cross_entropy(W: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Per-example ``sum_i -log W[i, label_i]`` for ``W`` of shape ``(B, l, C)``."""
    p = torch.gather(W, -1, labels.unsqueeze(-1)).squeeze(-1)
    return -torch.log(p.clamp_min(LOG_EPS)).sum(dim=-1)


def loss(W_1: torch.Tensor, W_2: torch.Tensor, labels_1: torch.Tensor,
         labels_2: torch.Tensor) -> torch.Tensor:
    """Cross-entropy averaged over the two users and over the batch."""
    return 0.5 * (block_cross_entropy(W_1, labels_1) + block_cross_entropy(W_2, labels_2)).mean()


def episode_loss(probs: torch.Tensor, messages) -> torch.Tensor:
    """Loss for decoder output ``(B, l, J, C)`` against ``J`` users' labels."""
    per_user = [block_cross_entropy(probs[:, :, j], msg.labels) for j, msg in enumerate(messages)]
    return torch.stack(per_user).mean(dim=0).mean()


def curriculum_snr(batch_idx: int, cfg: TrainConfig) -> float:
    """Training SNR: linear ramp from ``snr_start_db`` down to the target, then flat.

    The ramp is only used when the target lies below the start value.
    """
    start, target, span = cfg.snr_start_db, cfg.snr_target_db, cfg.curriculum_batches
    if target >= start or span <= 0 or batch_idx >= span:
        return float(target)
    return start + (target - start) * batch_idx / span


def global_grad_norm(parameters) -> float:
    norms = [p.grad.detach().norm() for p in parameters if p.grad is not None]
    if not norms:
        return 0.0
    return float(torch.linalg.vector_norm(torch.stack(norms)))


def make_optimizer(system: MBAFSystem, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(system.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def train_step(system: MBAFSystem, optimizer: torch.optim.Optimizer, messages, snr_db: float,
               grad_clip: float, generator: torch.Generator | None = None,
               noise: torch.Tensor | None = None) -> dict:
    """One differentiable rollout, backward pass, clipping and optimizer update."""
    system.train()
    optimizer.zero_grad(set_to_none=True)
    _, result = system.rollout(messages, snr_to_sigma2(snr_db), generator=generator,
                               noise=noise, phase="train")
    value = episode_loss(result.probs, messages)
    loss_value = value.item()
    if not math.isfinite(loss_value):
        raise TrainingDiverged(f"non-finite loss {loss_value} at SNR {snr_db} dB",
                               {"loss": loss_value, "snr_db": snr_db})
    value.backward()
    grad_norm = float(torch.nn.utils.clip_grad_norm_(system.parameters(), grad_clip))
    clipped = global_grad_norm(system.parameters())
    optimizer.step()
    return {"loss": loss_value, "grad_norm": grad_norm, "clipped_grad_norm": clipped}


@torch.no_grad()
def calibrate_power(system: MBAFSystem, snr_db: float, seed: int, batch_size: int) -> None:
    """Pin the power-normalization statistics with one large batch."""
    cfg = system.cfg
    gen = torch_generator(seed, "calibrate")
    messages = sample_batch(gen, batch_size, cfg.code.K, cfg.code.m, cfg.num_users)
    system.rollout(messages, snr_to_sigma2(snr_db), generator=gen, phase="calibrate")


class Trainer:
    """Owns the model, the optimizer and the batch counter of one training run."""

    def __init__(self, cfg: ExperimentConfig, system: MBAFSystem | None = None,
                 optimizer: torch.optim.Optimizer | None = None, step: int = 0):
        self.cfg = cfg
        if system is None:
            torch.manual_seed(derive_seed(cfg.train.seed, "init"))
            system = MBAFSystem(cfg)
        self.system = system
        self.optimizer = optimizer or make_optimizer(system, cfg.train)
        self.step = step

    @classmethod
    def from_checkpoint(cls, path) -> "Trainer":
        ckpt = load_checkpoint(path)
        system = MBAFSystem(ckpt.config)
        system.load_state_dict(ckpt.model_state)
        optimizer = make_optimizer(system, ckpt.config.train)
        if ckpt.optimizer_state is not None:
            optimizer.load_state_dict(ckpt.optimizer_state)
        return cls(ckpt.config, system, optimizer, ckpt.step)

    def checkpoint(self, **meta) -> Checkpoint:
        return Checkpoint(config=self.cfg, model_state=self.system.state_dict(),
                          optimizer_state=self.optimizer.state_dict(), step=self.step, meta=meta)

    def save(self, path, **meta) -> None:
        save_checkpoint(path, self.checkpoint(**meta))

    def run(self, num_batches: int | None = None, log_path=None, dump_path=None,
            progress=None) -> list[dict]:
        """Train until ``train.total_batches`` (or ``num_batches`` more) and calibrate.

        Records ``LOG_COLUMNS`` every ``train.log_every`` batches; when
        ``log_path`` is given they are appended to it as CSV lines.
        """
        tc, code = self.cfg.train, self.cfg.code
        stop = tc.total_batches if num_batches is None else self.step + num_batches
        records = []
        fh = None
        if log_path is not None:
            log_path = Path(log_path)
            fresh = not log_path.exists() or log_path.stat().st_size == 0
            fh = log_path.open("a")
            if fresh:
                fh.write(",".join(LOG_COLUMNS) + "\n")
        t0 = time.perf_counter()
        try:
            while self.step < stop:
                snr = curriculum_snr(self.step, tc)
                gen = torch_generator(tc.seed, "train-batch", self.step)
                messages = sample_batch(gen, tc.batch_size, code.K, code.m, self.cfg.num_users)
                try:
                    metrics = train_step(self.system, self.optimizer, messages, snr,
                                         tc.grad_clip, generator=gen)
                except TrainingDiverged as exc:
                    exc.state["batch_idx"] = self.step
                    if dump_path is not None:
                        self.save(dump_path, diverged_at=self.step)
                        exc.state["dump"] = str(dump_path)
                    log.error("training diverged: %s %s", exc, exc.state)
                    raise
                if self.step % tc.log_every == 0 or self.step == stop - 1:
                    rec = {"batch_idx": self.step, "snr_db": snr, "loss": metrics["loss"],
                           "grad_norm": metrics["grad_norm"],
                           "wall_time": time.perf_counter() - t0}
                    records.append(rec)
                    if fh is not None:
                        fh.write(",".join(repr(rec[c]) if isinstance(rec[c], float) else str(rec[c])
                                          for c in LOG_COLUMNS) + "\n")
                        fh.flush()
                    if progress is not None:
                        progress(rec)
                self.step += 1
        finally:
            if fh is not None:
                fh.close()
        calibrate_power(self.system, tc.snr_target_db, tc.seed, tc.calibration_batch)
        self.system.eval()
        return records


def train(cfg: ExperimentConfig, log_path=None, progress=None) -> Trainer:
    trainer = Trainer(cfg)
    trainer.run(log_path=log_path, progress=progress)
    return trainer

