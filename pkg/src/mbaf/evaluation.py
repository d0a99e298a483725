"""Monte Carlo BLER estimation, the time-division baseline and reference curves.

A *system* is anything with ``num_users`` and a method
``simulate(bits, sigma2, generator) -> (decoded_bits, per_episode_power)``
where ``bits`` is ``(B, J, K)``.  :class:`~mbaf.model.MBAFSystem` and the
uncoded plug-in :class:`UncodedSystem` both qualify.

Episodes are simulated in chunks of ``batch_size``; chunk ``c`` draws its
messages and noise from ``derive_seed(seed, tag, c)``, so every episode's
randomness is fixed by ``(seed, episode index)`` and independent of how
many chunks run before it.  Only integer error counts are accumulated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch
from scipy.optimize import brentq
from scipy.special import erfc

from .channel import snr_to_sigma2
from .errors import ConfigurationError
from .rng import torch_generator

TDMA_SNR_OFFSET_DB = 3.0
RESULT_COLUMNS = ("snr_db", "T", "rate", "bler", "ci_low", "ci_high", "trials")
BOUND_COLUMNS = ("snr_db", "T", "n", "normal_approx_rate", "sum_capacity")


def wilson_interval(errors: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (95% by default)."""
    if trials <= 0:
        return 0.0, 1.0
    p = errors / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if errors == 0 else max(0.0, centre - half)
    hi = 1.0 if errors == trials else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class BlerEstimate:
    """Block error counts of one Monte Carlo run.

    ``errors`` holds one count per user.  ``bler`` is the per-user block
    error rate averaged over users; the Wilson interval treats the
    ``J * trials`` user-blocks as Bernoulli samples.
    """

    snr_db: float
    rate: Fraction
    T: int
    trials: int
    errors: tuple
    avg_power: tuple = ()

    @property
    def errors_user1(self) -> int:
        return self.errors[0]

    @property
    def errors_user2(self) -> int | None:
        return self.errors[1] if len(self.errors) > 1 else None

    @property
    def bler(self) -> float:
        return sum(self.errors) / (len(self.errors) * self.trials)

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(sum(self.errors), len(self.errors) * self.trials)

    @property
    def ci_half_width(self) -> float:
        lo, hi = self.ci
        return (hi - lo) / 2


class UncodedSystem:
    """Plug-in reference: each bit sent once as +-1, decided by its sign."""

    num_users = 1

    def __init__(self, K: int):
        self.K = K

    def simulate(self, bits: torch.Tensor, sigma2: float, generator: torch.Generator):
        x = 2.0 * bits.to(torch.float64) - 1.0
        y = x + math.sqrt(sigma2) * torch.randn(x.shape, generator=generator, dtype=torch.float64)
        decoded = (y > 0).long()
        power = (x ** 2).mean(dim=-1).transpose(0, 1)
        return decoded, power


def estimate_bler(system, snr_db: float, trials: int, seed: int, stop_at_errors: int | None = None,
                  batch_size: int = 4096, K: int | None = None, rate=None, T: int | None = None,
                  tag: str = "eval") -> BlerEstimate:
    """Count episodes in which any of a user's ``K`` bits is decoded wrongly.

    With ``stop_at_errors`` the run ends after the first chunk at which the
    summed error count across users reaches that value.
    """
    if trials < 1:
        raise ConfigurationError("trials must be at least 1")
    cfg = getattr(system, "cfg", None)
    if K is None:
        K = cfg.code.K if cfg is not None else system.K
    if T is None:
        T = cfg.code.T if cfg is not None else 1
    if rate is None:
        rate = Fraction(system.num_users * K, T * cfg.code.l) if cfg is not None else Fraction(1)
    J = system.num_users
    sigma2 = snr_to_sigma2(snr_db)
    errors = np.zeros(J, dtype=np.int64)
    energy = np.zeros(J, dtype=np.float64)
    done, chunk = 0, 0
    was_training = getattr(system, "training", False)
    if hasattr(system, "eval"):
        system.eval()
    try:
        while done < trials:
            n = min(batch_size, trials - done)
            gen = torch_generator(seed, tag, chunk)
            bits = torch.randint(0, 2, (n, J, K), generator=gen)
            decoded, power = system.simulate(bits, sigma2, gen)
            wrong = (decoded != bits).any(dim=-1)  # (n, J)
            errors += wrong.sum(dim=0).numpy()
            energy += power.sum(dim=1).double().numpy()
            done += n
            chunk += 1
            if stop_at_errors is not None and errors.sum() >= stop_at_errors:
                break
    finally:
        if was_training:
            system.train()
    return BlerEstimate(snr_db=float(snr_db), rate=Fraction(rate), T=T, trials=done,
                        errors=tuple(int(e) for e in errors),
                        avg_power=tuple(float(e) / done for e in energy))


def q_function(x):
    """Gaussian tail probability ``Q(x) = P(Z > x)``."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def q_inverse(p: float) -> float:
    """Inverse of :func:`q_function` by bracketing root search (xtol 1e-12)."""
    if not 0 < p < 1:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    lo, hi = -1.0, 1.0
    while q_function(lo) < p:
        lo *= 2
    while q_function(hi) > p:
        hi *= 2
    return brentq(lambda x: float(q_function(x)) - p, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps)


def uncoded_bler_oracle(K: int, snr_db: float) -> float:
    """Closed-form BLER of :class:`UncodedSystem`: ``1 - (1 - Q(1/sigma))**K``."""
    sigma = math.sqrt(snr_to_sigma2(snr_db))
    if sigma == 0:
        return 0.0
    return float(-np.expm1(K * np.log1p(-q_function(1.0 / sigma))))


def awgn_capacity(snr_linear: float) -> float:
    return 0.5 * math.log2(1.0 + snr_linear)


def awgn_dispersion(snr_linear: float) -> float:
    """Channel dispersion of the real AWGN channel in bits^2 per channel use."""
    S = snr_linear
    return S * (S + 2) / (2 * (S + 1) ** 2) * math.log2(math.e) ** 2


def normal_approx_rate(n: int, snr_linear: float, epsilon: float) -> float:
    """Normal approximation ``C - sqrt(V/n) Q^-1(eps) + log2(n)/(2n)`` in bits per use."""
    if n < 1:
        raise ValueError(f"blocklength must be positive, got {n}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    S = snr_linear
    return (awgn_capacity(S) - math.sqrt(awgn_dispersion(S) / n) * q_inverse(epsilon)
            + math.log2(n) / (2 * n))


def super_user_snr(snr_db: float, num_users: int = 2) -> float:
    """Receive SNR when all users' unit powers are pooled: ``num_users / sigma^2``."""
    return num_users / snr_to_sigma2(snr_db)


def mac_sum_capacity(total_snr: float) -> float:
    """Sum capacity of the Gaussian MAC without feedback, ``0.5 log2(1 + 2P/sigma^2)``.

    The argument is the pooled SNR ``2P/sigma^2`` (see :func:`super_user_snr`).
    """
    if total_snr < 0:
        raise ValueError(f"SNR must be nonnegative, got {total_snr}")
    return awgn_capacity(total_snr)


def reference_curves(snr_list, l: int, T_list, epsilon: float = 1e-6) -> list[dict]:
    """Finite-length and capacity sum-rates at ``n = T*l`` for every (SNR, T)."""
    rows = []
    for T in T_list:
        n = T * l
        for snr in snr_list:
            S = super_user_snr(snr)
            rows.append({"snr_db": float(snr), "T": int(T), "n": n,
                         "normal_approx_rate": normal_approx_rate(n, S, epsilon),
                         "sum_capacity": mac_sum_capacity(S)})
    rows.sort(key=lambda r: (r["snr_db"], r["T"]))
    return rows


def tdma_baseline(single_user_system, snr_db: float, T: int, K: int, trials: int, seed: int,
                  stop_at_errors: int | None = None, batch_size: int = 4096) -> BlerEstimate:
    """Time-division baseline: each user runs the single-user code for ``T/2`` rounds.

    Each user has the channel to itself for half the rounds, so its SNR is
    raised by 3 dB to keep the per-user energy equal to the two-user scheme.
    """
    if T % 2:
        raise ConfigurationError(f"time division needs an even number of rounds, got T={T}")
    if single_user_system.num_users != 1:
        raise ConfigurationError("the time-division baseline needs a single-user system")
    cfg = getattr(single_user_system, "cfg", None)
    if cfg is not None and cfg.code.T != T // 2:
        raise ConfigurationError(
            f"single-user model has T={cfg.code.T} rounds, expected T/2 = {T // 2}")
    l = cfg.code.l if cfg is not None else K
    snr = snr_db + TDMA_SNR_OFFSET_DB
    per_user = [estimate_bler(single_user_system, snr, trials, seed, stop_at_errors, batch_size,
                              K=K, T=T // 2, tag=f"tdma-user{j}") for j in (1, 2)]
    return BlerEstimate(snr_db=float(snr_db), rate=Fraction(2 * K, T * l), T=T,
                        trials=min(e.trials for e in per_user),
                        errors=tuple(e.errors[0] for e in per_user),
                        avg_power=tuple(e.avg_power[0] for e in per_user))


def _sci(x: float) -> str:
    return f"{x:.16e}"


def emit_results(estimates, bounds=None, path="results.csv") -> list[Path]:
    """Write BLER rows (sorted by SNR, then rate) and, optionally, reference curves.

    The curves go to ``<stem>_bounds.csv`` next to ``path``.  Returns the
    written paths.
    """
    estimates = list(estimates)
    if not estimates and not bounds:
        raise ValueError("nothing to write")
    path = Path(path)
    written = []
    if estimates:
        rows = sorted(estimates, key=lambda e: (e.snr_db, e.rate))
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            for e in rows:
                lo, hi = e.ci
                w.writerow([repr(e.snr_db), e.T, repr(float(e.rate)), _sci(e.bler), _sci(lo),
                            _sci(hi), e.trials])
        written.append(path)
    if bounds:
        bpath = path.with_name(path.stem + "_bounds.csv") if estimates else path
        write_bounds(bounds, bpath)
        written.append(bpath)
    return written


def write_bounds(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUND_COLUMNS)
        for r in sorted(rows, key=lambda r: (r["snr_db"], r["T"])):
            w.writerow([repr(r["snr_db"]), r["T"], r["n"], repr(r["normal_approx_rate"]),
                        repr(r["sum_capacity"])])
    return path
