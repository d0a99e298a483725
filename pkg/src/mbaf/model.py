"""The complete learnable code: one or two parity networks plus the decoder."""

from __future__ import annotations

import torch
from torch import nn

from .blocks import DecoderNetwork, NetworkConfig, ParityNetwork
from .channel import EpisodeTrace
from .codec import partition_message
from .config import ExperimentConfig
from .decoder import DecodingResult
from .encoder import knowledge_width, run_episode


class MBAFSystem(nn.Module):
    """Parity networks and decoder network built from an :class:`ExperimentConfig`.

    With ``mode="single_user"`` there is a single transmitter and the decoder
    classifies one user, which is the point-to-point feedback code used as
    the time-division baseline.
    """

    def __init__(self, cfg: ExperimentConfig):
        super().__init__()
        self.cfg = cfg
        code, mc = cfg.code, cfg.model
        J = cfg.num_users
        common = dict(seq_len=code.l, d_model=mc.d_model, n_layers=mc.n_layers,
                      n_heads=mc.n_heads, d_ff=mc.d_ff, clamp_bound=mc.clamp_bound,
                      dropout=mc.dropout)
        parity_cfg = NetworkConfig(d_in=knowledge_width(code.m, code.T), d_out=1, **common)
        n_parity = 1 if (mc.share_parity_weights or J == 1) else J
        self.parity = nn.ModuleList(ParityNetwork(parity_cfg, code.T) for _ in range(n_parity))
        decoder_cfg = NetworkConfig(d_in=code.T + J * code.m, d_out=J << code.m, **common)
        self.decoder = DecoderNetwork(decoder_cfg, J, code.m)

    @property
    def num_users(self) -> int:
        return self.cfg.num_users

    def parity_nets(self) -> list:
        if len(self.parity) == self.num_users:
            return list(self.parity)
        return [self.parity[0]] * self.num_users

    def rollout(self, messages, sigma2: float, generator: torch.Generator | None = None,
                noise: torch.Tensor | None = None, phase: str | None = None,
                n_iter: int | None = None) -> tuple[EpisodeTrace, DecodingResult]:
        if phase is None:
            phase = "train" if self.training else "eval"
        dtype = next(self.parameters()).dtype
        return run_episode(self.parity_nets(), self.decoder, messages, sigma2, self.cfg.code.T,
                           self.cfg.code.n_iter if n_iter is None else n_iter,
                           generator=generator, noise=noise, phase=phase, dtype=dtype)

    @torch.no_grad()
    def simulate(self, bits: torch.Tensor, sigma2: float, generator: torch.Generator):
        """Evaluation hook: transmit ``bits`` of shape ``(B, J, K)``.

        Returns ``(decoded_bits, per_episode_power)`` with shapes ``(B, J, K)``
        and ``(J, B)``.
        """
        messages = [partition_message(bits[:, j], self.cfg.code.m) for j in range(bits.shape[1])]
        trace, result = self.rollout(messages, sigma2, generator=generator, phase="eval")
        return result.bits, trace.per_episode_power()

