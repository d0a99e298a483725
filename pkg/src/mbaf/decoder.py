"""Joint successive decoding at the receiver.

The decoder network first classifies every block of both users from the
received history alone (belief slots zero-filled).  Each refinement
iteration converts the previous class probabilities into per-bit beliefs
and runs the same network again on ``[y_i^(1..T), beliefs_1, beliefs_2]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .blocks import DecoderNetwork
from .codec import belief_from_probs, f_d2b, make_belief_matrix
from .errors import ContractError


@dataclass
class DecodingResult:
    """Decoder output for a batch of episodes.

    ``probs`` is ``(B, l, J, 2**m)``; ``labels`` is ``(B, J, l)``; ``bits`` is
    ``(B, J, K)``.  ``iterations`` keeps the probabilities after the initial
    pass and after every refinement.
    """

    probs: torch.Tensor
    labels: torch.Tensor
    blocks: torch.Tensor
    bits: torch.Tensor
    iterations: list


def _received_history(received: torch.Tensor) -> torch.Tensor:
    # (T, B, l) -> (B, l, T)
    return received.permute(1, 2, 0)


def decoder_input(y_history: torch.Tensor, beliefs: torch.Tensor | None, num_users: int,
                  m: int) -> torch.Tensor:
    """Concatenate received history ``(B, l, T)`` with belief slots of width ``J*m``."""
    B, l, _ = y_history.shape
    if beliefs is None:
        beliefs = y_history.new_zeros(B, l, num_users * m)
    else:
        beliefs = beliefs.reshape(B, l, num_users * m)
    return torch.cat([y_history, beliefs], dim=-1)


def refine_step(net: DecoderNetwork, y_history: torch.Tensor,
                prev_probs: torch.Tensor | None) -> torch.Tensor:
    """One decoder pass; ``prev_probs=None`` is the initial pass with empty beliefs."""
    beliefs = None
    if prev_probs is not None:
        beliefs = belief_from_probs(prev_probs, make_belief_matrix(net.m))
    return net(decoder_input(y_history, beliefs, net.num_users, net.m))


def harden(probs: torch.Tensor, m: int):
    """Argmax decisions (first maximal index wins) and the recovered bitstreams.

    Returns ``(labels, blocks, bits)`` with shapes ``(B, J, l)``,
    ``(B, J, l, m)`` and ``(B, J, l*m)``.
    """
    labels = torch.argmax(probs, dim=-1).transpose(1, 2)
    blocks = f_d2b(labels, m)
    bits = blocks.reshape(*labels.shape[:-1], -1)
    return labels, blocks, bits


def decode(net: DecoderNetwork, received: torch.Tensor, n_iter: int) -> DecodingResult:
    """Decode ``received`` of shape ``(T, B, l)`` (or ``(T, l)`` for one episode)."""
    if received.dim() == 2:
        received = received.unsqueeze(1)
    if received.dim() != 3:
        raise ContractError(f"received must be (T, B, l), got {tuple(received.shape)}")
    T, _, l = received.shape
    expected_T = net.cfg.d_in - net.num_users * net.m
    if T != expected_T or l != net.cfg.seq_len:
        raise ContractError(
            f"received shape (T={T}, l={l}) does not match decoder (T={expected_T}, "
            f"l={net.cfg.seq_len})")
    if n_iter < 0:
        raise ContractError(f"n_iter must be nonnegative, got {n_iter}")
    y_history = _received_history(received)
    probs = refine_step(net, y_history, None)
    iterations = [probs]
    for _ in range(n_iter):
        probs = refine_step(net, y_history, probs)
        iterations.append(probs)
    labels, blocks, bits = harden(probs, net.m)
    return DecodingResult(probs=probs, labels=labels, blocks=blocks, bits=bits,
                          iterations=iterations)
