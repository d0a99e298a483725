"""Two-user real AWGN multiple-access channel with output feedback.

The receiver sees ``y = c1 + c2 + n`` with ``n ~ N(0, sigma2 I)``.  Feedback
is perfect and instantaneous: the same ``y`` is handed back to both
transmitters as the return value of :func:`transmit`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .errors import ConfigurationError, ContractError


def snr_to_sigma2(snr_ff_db: float) -> float:
    """Noise variance for a forward SNR of ``snr_ff_db`` with unit signal power."""
    return 10.0 ** (-float(snr_ff_db) / 10.0)


@dataclass(frozen=True)
class ChannelConfig:
    snr_ff_db: float
    l: int  # noqa: E741
    num_users: int = 2

    def __post_init__(self):
        if not math.isfinite(self.snr_ff_db):
            raise ConfigurationError(f"SNR must be finite, got {self.snr_ff_db}")
        if self.num_users not in (1, 2):
            raise ConfigurationError(f"num_users must be 1 or 2, got {self.num_users}")

    @property
    def sigma2(self) -> float:
        return snr_to_sigma2(self.snr_ff_db)


def sample_noise(shape, sigma2: float, generator: torch.Generator | None = None,
                 dtype=torch.float32) -> torch.Tensor:
    return math.sqrt(sigma2) * torch.randn(shape, generator=generator, dtype=dtype)


def transmit(c1: torch.Tensor, c2: torch.Tensor | None = None, sigma2: float = 0.0,
             generator: torch.Generator | None = None,
             noise: torch.Tensor | None = None) -> torch.Tensor:
    """Superimpose the users' blocks and add Gaussian noise.

    Pass ``c2=None`` for the single-user channel.  ``noise`` overrides the
    internally drawn noise (used for gradient checks and replay); otherwise
    noise is drawn from ``generator``.  The noise enters additively, so
    gradients flow from ``y`` back to both ``c1`` and ``c2``.
    """
    if sigma2 < 0:
        raise ContractError(f"noise variance must be nonnegative, got {sigma2}")
    if c2 is not None and c1.shape != c2.shape:
        raise ContractError(f"block shapes differ: {tuple(c1.shape)} vs {tuple(c2.shape)}")
    y = c1 if c2 is None else c1 + c2
    if noise is None:
        if sigma2 == 0:
            return y
        noise = sample_noise(c1.shape, sigma2, generator, dtype=c1.dtype)
    elif noise.shape != c1.shape:
        raise ContractError(f"noise shape {tuple(noise.shape)} does not match block {tuple(c1.shape)}")
    return y + noise


def residual_feedback(y: torch.Tensor, c_j: torch.Tensor) -> torch.Tensor:
    """What transmitter ``j`` learns beyond its own symbols: the other user plus noise."""
    if y.shape != c_j.shape:
        raise ContractError(f"block shapes differ: {tuple(y.shape)} vs {tuple(c_j.shape)}")
    return y - c_j


@dataclass
class EpisodeTrace:
    """Everything that crossed the channel during a batch of episodes.

    ``sent`` has shape ``(J, T, B, l)``, ``noise`` and ``received`` have
    shape ``(T, B, l)``.
    """

    sent: torch.Tensor
    noise: torch.Tensor
    received: torch.Tensor
    extra: dict = field(default_factory=dict)

    @property
    def num_rounds(self) -> int:
        return self.received.shape[0]

    @property
    def channel_uses(self) -> int:
        return self.received.shape[0] * self.received.shape[2]

    def average_power(self) -> torch.Tensor:
        """Per-user mean over episodes of ``(1/N) sum_tau <c_j, c_j>``; shape ``(J,)``."""
        energy = (self.sent.detach() ** 2).sum(dim=(1, 3))  # (J, B)
        return energy.mean(dim=1) / self.channel_uses

    def per_episode_power(self) -> torch.Tensor:
        return (self.sent.detach() ** 2).sum(dim=(1, 3)) / self.channel_uses
