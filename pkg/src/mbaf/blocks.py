"""Learnable building blocks of the parity and decoder networks.

Every network is the same pipeline applied to a sequence of ``l`` per-block
knowledge vectors::

    FeatureExtractor -> + positional embedding -> TransformerEncoder -> head

The parity networks end with a scalar head followed by
:class:`PowerNormalizer`; the decoder ends with a softmax head producing one
distribution over ``2**m`` block values per user.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, StateError

PHASES = ("train", "eval", "calibrate")


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    # faster than torch.softmax on CPU for the very short axes used here
    e = torch.exp(x - x.amax(dim=dim, keepdim=True).detach())
    return e / e.sum(dim=dim, keepdim=True)


@dataclass(frozen=True)
class NetworkConfig:
    d_in: int
    seq_len: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    d_out: int = 1
    clamp_bound: float = 10.0
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("d_in", "seq_len", "d_model", "n_layers", "n_heads", "d_ff", "d_out"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigurationError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.clamp_bound <= 0:
            raise ConfigurationError(f"clamp_bound must be positive, got {self.clamp_bound}")


class FeatureExtractor(nn.Module):
    """Two ReLU hidden layers of width ``d_model``, output clamped to +-clamp_bound."""

    def __init__(self, d_in: int, d_model: int, clamp_bound: float = 10.0):
        super().__init__()
        self.d_in = d_in
        self.clamp_bound = clamp_bound
        self.fc1 = nn.Linear(d_in, d_model)
        self.fc2 = nn.Linear(d_model, d_model)
        self.fc3 = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.d_in:
            raise ConfigurationError(f"expected input width {self.d_in}, got {x.shape[-1]}")
        h = torch.relu(self.fc1(x))
        h = torch.relu(self.fc2(h))
        return torch.clamp(self.fc3(h), -self.clamp_bound, self.clamp_bound)


class SelfAttention(nn.Module):
    """Full (non-causal) multi-head self-attention."""

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        *lead, l, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        # (..., heads, l, d_head)
        q, k, v = (t.reshape(*lead, l, self.n_heads, self.d_head).transpose(-3, -2)
                   for t in (q, k, v))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        attn = self.drop(softmax(scores))
        out = (attn @ v).transpose(-3, -2).reshape(*lead, l, d)
        return self.proj(out)


class EncoderLayer(nn.Module):
    """Pre-norm transformer encoder layer."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, d_ff),
            nn.ReLU(),
            nn.Linear(d_ff, d_model),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.drop(self.attn(self.norm1(x)))
        return x + self.drop(self.ff(self.norm2(x)))


class SequenceEncoder(nn.Module):
    """Learned positional embedding followed by ``n_layers`` encoder layers."""

    def __init__(self, seq_len: int, d_model: int, n_layers: int, n_heads: int,
                 d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.pos_embedding = nn.Parameter(0.02 * torch.randn(seq_len, d_model))
        self.layers = nn.ModuleList(
            EncoderLayer(d_model, n_heads, d_ff, dropout) for _ in range(n_layers))
        self.norm = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] != self.pos_embedding.shape[0]:
            raise ConfigurationError(
                f"sequence length {x.shape[-2]} does not match "
                f"positional embedding length {self.pos_embedding.shape[0]}")
        x = x + self.pos_embedding
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)


class ParityHead(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_model)
        self.fc2 = nn.Linear(d_model, 1)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(v))).squeeze(-1)


class DecoderHead(nn.Module):
    """Maps each latent vector to ``num_users`` softmax distributions over ``2**m`` classes."""

    def __init__(self, d_model: int, num_users: int, m: int):
        super().__init__()
        self.num_users = num_users
        self.num_classes = 1 << m
        self.fc1 = nn.Linear(d_model, d_model)
        self.fc2 = nn.Linear(d_model, num_users * self.num_classes)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        logits = self.fc2(torch.relu(self.fc1(v)))
        logits = logits.reshape(*v.shape[:-1], self.num_users, self.num_classes)
        return softmax(logits)


class PowerNormalizer(nn.Module):
    """Per-round standardization that enforces unit average transmit power.

    In the ``train`` phase each round's symbols are standardized with the
    batch mean and standard deviation (taken over episodes and blocks), and
    exponential running averages are updated.  In the ``eval`` phase the
    frozen running statistics are used.  ``calibrate`` behaves like
    ``train`` but overwrites the running statistics with the batch ones, so
    that a large no-grad batch can pin the statistics after training.
    """

    def __init__(self, num_rounds: int, momentum: float = 0.01, eps: float = 1e-10):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", torch.zeros(num_rounds))
        self.register_buffer("running_std", torch.ones(num_rounds))
        self.register_buffer("calibrated", torch.zeros(num_rounds, dtype=torch.bool))

    def forward(self, x: torch.Tensor, round_idx: int, phase: str = "train") -> torch.Tensor:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        if phase == "eval":
            if not bool(self.calibrated[round_idx]):
                raise StateError(f"power statistics for round {round_idx + 1} are not calibrated")
            mean = self.running_mean[round_idx].to(x.dtype)
            std = self.running_std[round_idx].to(x.dtype)
            return (x - mean) / std
        mean = x.mean()
        std = torch.sqrt(((x - mean) ** 2).mean() + self.eps)
        with torch.no_grad():
            if phase == "calibrate" or not bool(self.calibrated[round_idx]):
                self.running_mean[round_idx] = mean.detach()
                self.running_std[round_idx] = std.detach()
            else:
                mom = self.momentum
                self.running_mean[round_idx] += mom * (mean.detach() - self.running_mean[round_idx])
                self.running_std[round_idx] += mom * (std.detach() - self.running_std[round_idx])
            self.calibrated[round_idx] = True
        return (x - mean) / std


class ParityNetwork(nn.Module):
    """Transmitter network: knowledge vectors ``(B, l, d_in)`` -> symbols ``(B, l)``."""

    def __init__(self, cfg: NetworkConfig, num_rounds: int):
        super().__init__()
        self.cfg = cfg
        self.extract = FeatureExtractor(cfg.d_in, cfg.d_model, cfg.clamp_bound)
        self.s2s = SequenceEncoder(cfg.seq_len, cfg.d_model, cfg.n_layers, cfg.n_heads,
                                   cfg.d_ff, cfg.dropout)
        self.head = ParityHead(cfg.d_model)
        self.power = PowerNormalizer(num_rounds)

    def raw_symbols(self, q: torch.Tensor) -> torch.Tensor:
        return self.head(self.s2s(self.extract(q)))

    def forward(self, q: torch.Tensor, round_idx: int, phase: str = "train") -> torch.Tensor:
        return self.power(self.raw_symbols(q), round_idx, phase)


class DecoderNetwork(nn.Module):
    """Receiver network: ``(B, l, T + J*m)`` -> probabilities ``(B, l, J, 2**m)``."""

    def __init__(self, cfg: NetworkConfig, num_users: int, m: int):
        super().__init__()
        self.cfg = cfg
        self.num_users = num_users
        self.m = m
        self.extract = FeatureExtractor(cfg.d_in, cfg.d_model, cfg.clamp_bound)
        self.s2s = SequenceEncoder(cfg.seq_len, cfg.d_model, cfg.n_layers, cfg.n_heads,
                                   cfg.d_ff, cfg.dropout)
        self.head = DecoderHead(cfg.d_model, num_users, m)

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        return self.head(self.s2s(self.extract(q)))
