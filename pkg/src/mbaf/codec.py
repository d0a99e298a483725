"""Bit and block arithmetic shared by the encoders, the decoder and training.

Bits are grouped big-endian: the first bit of a block is its most
significant bit, so block ``[1, 0, 1]`` has label 5.  All functions accept
numpy arrays or torch tensors with arbitrary leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from fractions import Fraction

import numpy as np
import torch

from .errors import ConfigurationError, ContractError

MAX_BLOCK_BITS = 16


def _place_values(m: int, like):
    powers = [1 << (m - 1 - k) for k in range(m)]
    if isinstance(like, torch.Tensor):
        return torch.tensor(powers, dtype=torch.int64, device=like.device)
    return np.asarray(powers, dtype=np.int64)


@dataclass(frozen=True)
class MessageBlockSequence:
    """A K-bit message cut into ``l`` blocks of ``m`` bits.

    ``bits`` has shape ``(..., K)``, ``blocks`` ``(..., l, m)`` and ``labels``
    ``(..., l)``; leading dimensions index independent messages.
    """

    bits: np.ndarray | torch.Tensor
    blocks: np.ndarray | torch.Tensor
    labels: np.ndarray | torch.Tensor
    m: int

    @property
    def K(self) -> int:
        return self.bits.shape[-1]

    @property
    def l(self) -> int:  # noqa: E743
        return self.blocks.shape[-2]


def partition_message(bits, m: int) -> MessageBlockSequence:
    """Split ``bits`` (last axis of length K) into blocks of ``m`` bits."""
    if m < 1:
        raise ConfigurationError(f"block size must be positive, got m={m}")
    if not isinstance(bits, torch.Tensor):
        bits = np.asarray(bits, dtype=np.int64)
    K = bits.shape[-1]
    if K % m:
        raise ConfigurationError(f"K={K} is not divisible by block size m={m}")
    blocks = bits.reshape(*bits.shape[:-1], K // m, m)
    return MessageBlockSequence(bits=bits, blocks=blocks, labels=f_b2d(blocks), m=m)


def f_d2b(index, m: int):
    """Big-endian ``m``-bit expansion of ``index`` (scalar or array)."""
    if not 1 <= m <= MAX_BLOCK_BITS:
        raise ConfigurationError(f"block size must be in [1, {MAX_BLOCK_BITS}], got {m}")
    if isinstance(index, torch.Tensor):
        if index.numel() and (index.min() < 0 or index.max() >= 1 << m):
            raise ContractError(f"index out of range [0, {1 << m})")
        shifts = torch.arange(m - 1, -1, -1, device=index.device)
        return (index.long().unsqueeze(-1) >> shifts) & 1
    arr = np.asarray(index, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= 1 << m):
        raise ContractError(f"index out of range [0, {1 << m})")
    return (arr[..., None] >> np.arange(m - 1, -1, -1)) & 1


def f_b2d(block):
    """Inverse of :func:`f_d2b`: reduce the last axis of a bit array to integers."""
    if not isinstance(block, torch.Tensor):
        block = np.asarray(block, dtype=np.int64)
        return (block * _place_values(block.shape[-1], block)).sum(axis=-1)
    return (block.long() * _place_values(block.shape[-1], block)).sum(dim=-1)


@dataclass(frozen=True)
class BeliefMatrix:
    """Binary ``m x 2**m`` matrix whose column ``c`` is the bit pattern of ``c``.

    Multiplying a class-probability vector by ``A`` gives the marginal
    probability that each bit of the block is one.
    """

    m: int
    A: np.ndarray

    def as_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor(self.A.tolist(), dtype=dtype)


@lru_cache(maxsize=None)
def make_belief_matrix(m: int) -> BeliefMatrix:
    if not 1 <= m <= MAX_BLOCK_BITS:
        raise ConfigurationError(f"block size must be in [1, {MAX_BLOCK_BITS}], got {m}")
    A = f_d2b(np.arange(1 << m), m).T.astype(np.int8)
    A.setflags(write=False)
    return BeliefMatrix(m=m, A=A)


def belief_from_probs(w, A: BeliefMatrix, atol: float = 1e-6):
    """Per-bit probabilities ``A @ w`` for probability vectors on the last axis."""
    if isinstance(w, torch.Tensor):
        if w.shape[-1] != A.A.shape[1]:
            raise ContractError(f"expected {A.A.shape[1]} class probabilities, got {w.shape[-1]}")
        if (w < 0).any() or ((w.sum(-1) - 1).abs() > atol).any():
            raise ContractError("probability vector is not normalized")
        return w @ A.as_tensor(w.dtype).T
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != A.A.shape[1]:
        raise ContractError(f"expected {A.A.shape[1]} class probabilities, got {w.shape[-1]}")
    if (w < 0).any() or (np.abs(w.sum(axis=-1) - 1) > atol).any():
        raise ContractError("probability vector is not normalized")
    return w @ A.A.T.astype(float)


@dataclass(frozen=True)
class RateSpec:
    K: int
    l: int  # noqa: E741
    T: int
    N: int
    R: Fraction


def sum_rate(K: int, l: int, T: int, num_users: int = 2) -> RateSpec:  # noqa: E741
    """Channel-use count ``N = T*l`` and sum-rate ``num_users*K/N``."""
    for name, v in (("K", K), ("l", l), ("T", T)):
        if int(v) != v or v < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {v}")
    N = T * l
    return RateSpec(K=K, l=l, T=T, N=N, R=Fraction(num_users * K, N))
