"""Round-by-round parity encoding at the transmitters and full episode rollout.

Each transmitter keeps, per block, its message bits, the symbols it has
already sent and the residual feedback ``y - c_j`` it has observed.  The
knowledge vector of block ``i`` has a fixed layout of width ``m + 2(T-1)``::

    [ bits (+-1) | c^(1) ... c^(T-1) | r^(1) ... r^(T-1) ]

Slots for rounds that have not happened yet are zero, so slot ``k`` always
means the same round and one feature extractor serves every round.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .blocks import DecoderNetwork, ParityNetwork
from .channel import EpisodeTrace, residual_feedback, sample_noise, transmit
from .codec import MessageBlockSequence
from .decoder import DecodingResult, decode
from .errors import ConfigurationError, ProtocolError, StateError


def bipolar(bits: torch.Tensor, dtype=torch.float32) -> torch.Tensor:
    """0 -> -1, 1 -> +1."""
    return 2.0 * bits.to(dtype) - 1.0


@dataclass
class EncoderState:
    """What transmitter ``user`` knows at the start of round ``tau`` (1-based)."""

    user: int
    blocks: torch.Tensor
    sent: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    tau: int = 1

    def check(self):
        if len(self.sent) != self.tau - 1 or len(self.residual) != self.tau - 1:
            raise StateError(
                f"round {self.tau} needs {self.tau - 1} history entries, found "
                f"{len(self.sent)} sent and {len(self.residual)} residual")


def knowledge_width(m: int, T: int) -> int:
    return m + 2 * (T - 1)


def build_knowledge_vectors(state: EncoderState, T: int, dtype=torch.float32) -> torch.Tensor:
    """Knowledge vectors ``(B, l, m + 2(T-1))`` for the current round."""
    state.check()
    if state.tau > T:
        raise ProtocolError(f"round {state.tau} exceeds T={T}")
    b = bipolar(state.blocks, dtype)
    B, l, _ = b.shape
    pad = b.new_zeros(B, l, T - state.tau)
    parts = [b]
    parts += [c.unsqueeze(-1) for c in state.sent] + [pad]
    parts += [r.unsqueeze(-1) for r in state.residual] + [pad]
    return torch.cat(parts, dim=-1)


def encode_round(net: ParityNetwork, state: EncoderState, T: int, phase: str = "train",
                 dtype=torch.float32) -> torch.Tensor:
    """Symbols ``(B, l)`` for the current round; ``state`` is left untouched."""
    if state.tau > T:
        raise ProtocolError(f"round {state.tau} exceeds T={T}")
    return net(build_knowledge_vectors(state, T, dtype), state.tau - 1, phase)


def ingest_feedback(state: EncoderState, y: torch.Tensor, c: torch.Tensor,
                    tau: int | None = None) -> EncoderState:
    """Record round ``tau``'s own symbols and residual feedback, then advance.

    ``tau`` names the round the symbols belong to; feeding the same round
    twice raises :class:`ProtocolError`.
    """
    if tau is not None and tau != state.tau:
        raise ProtocolError(
            f"feedback for round {tau} arrived while the encoder is at round {state.tau}")
    state.sent.append(c)
    state.residual.append(residual_feedback(y, c))
    state.tau += 1
    return state


def run_episode(parity_nets, decoder_net: DecoderNetwork, messages, sigma2: float, T: int,
                n_iter: int, generator: torch.Generator | None = None,
                noise: torch.Tensor | None = None, phase: str = "train",
                dtype=torch.float32) -> tuple[EpisodeTrace, DecodingResult]:
    """Run ``T`` rounds of simultaneous encoding, channel use and feedback, then decode.

    ``parity_nets`` and ``messages`` hold one entry per user (one or two).
    ``messages`` are :class:`MessageBlockSequence` values with torch blocks of
    shape ``(B, l, m)``.  ``noise`` of shape ``(T, B, l)`` replaces the
    sampled channel noise.
    """
    if len(parity_nets) != len(messages) or len(parity_nets) not in (1, 2):
        raise ConfigurationError("need one parity network per message, for one or two users")
    if decoder_net.num_users != len(parity_nets):
        raise ConfigurationError(
            f"decoder expects {decoder_net.num_users} users, got {len(parity_nets)}")
    for net, msg in zip(parity_nets, messages):
        if not isinstance(msg, MessageBlockSequence):
            raise ConfigurationError("messages must be MessageBlockSequence values")
        if net.cfg.d_in != knowledge_width(msg.m, T):
            raise ConfigurationError(
                f"parity network input width {net.cfg.d_in} does not match "
                f"m + 2(T-1) = {knowledge_width(msg.m, T)}")
    states = [EncoderState(user=j + 1, blocks=msg.blocks) for j, msg in enumerate(messages)]
    B, l, _ = messages[0].blocks.shape
    if noise is None:
        noise = sample_noise((T, B, l), sigma2, generator, dtype=dtype)
    sent, received = [[] for _ in states], []
    for tau in range(1, T + 1):
        symbols = [encode_round(net, st, T, phase, dtype) for net, st in zip(parity_nets, states)]
        y = transmit(*symbols, sigma2=sigma2, noise=noise[tau - 1]) if len(symbols) == 2 \
            else transmit(symbols[0], None, sigma2=sigma2, noise=noise[tau - 1])
        received.append(y)
        for j, (st, c) in enumerate(zip(states, symbols)):
            sent[j].append(c)
            if tau < T:
                ingest_feedback(st, y, c, tau)
    trace = EpisodeTrace(
        sent=torch.stack([torch.stack(s) for s in sent]),
        noise=noise,
        received=torch.stack(received),
    )
    return trace, decode(decoder_net, trace.received, n_iter)
