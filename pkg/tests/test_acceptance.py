"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The desk-scale checks (4, 6 and 9) need two trained models.  They are
trained once and cached under pytest's cache directory, keyed by a hash of
the resolved config; set ``MBAF_RETRAIN=1`` to ignore the cache.  Training
is deterministic, so a cached checkpoint is the same file a fresh run
would write.

Run with ``pytest tests/test_acceptance.py -v`` or
``python3 tests/test_acceptance.py``; the summary lines appear at the end
of the pytest report.
"""

import hashlib
import math
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

from mbaf.channel import sample_noise, snr_to_sigma2
from mbaf.checkpoint import load_checkpoint
from mbaf.codec import make_belief_matrix, belief_from_probs, f_d2b
from mbaf.config import preset
from mbaf.evaluation import (UncodedSystem, emit_results, estimate_bler, mac_sum_capacity,
                             normal_approx_rate, super_user_snr, tdma_baseline,
                             uncoded_bler_oracle)
from mbaf.model import MBAFSystem
from mbaf.rng import derive_seed
from mbaf.training import Trainer, calibrate_power, episode_loss, sample_batch

from conftest import central_difference_check, tiny_config

RESULTS: dict[int, str] = {}
EVAL_TRIALS = 10_000
GOLDEN_NA_136 = 0.42650710071572604673  # mpmath oracle, see test_evaluation.py


@contextmanager
def criterion(number, title):
    t0 = time.perf_counter()
    notes = []
    try:
        yield notes
    except BaseException:
        RESULTS[number] = _line(number, "FAIL", title, notes, time.perf_counter() - t0)
        raise
    RESULTS[number] = _line(number, "PASS", title, notes, time.perf_counter() - t0)


def _line(number, status, title, notes, seconds):
    detail = f": {'; '.join(notes)}" if notes else ""
    return f"criterion {number:2d} {status}  {title}{detail} [{seconds:.1f} s]"


def tdma_config():
    return preset("desk").replace(mode="single_user", code={"T": 3}, channel={"snr_ff_db": 5.0},
                                  train={"snr_target_db": 5.0})


def _trained(request, name, cfg):
    cache = Path(request.config.cache.mkdir("mbaf-acceptance"))
    key = hashlib.sha256(cfg.dumps().encode()).hexdigest()[:16]
    path = cache / f"{name}-{key}.ckpt"
    if path.exists() and not os.environ.get("MBAF_RETRAIN"):
        ckpt = load_checkpoint(path)
        if ckpt.config == cfg and ckpt.step == cfg.train.total_batches:
            return Trainer.from_checkpoint(path).system
    log_path = cache / f"{name}-{key}.log.csv"
    log_path.unlink(missing_ok=True)
    trainer = Trainer(cfg)
    trainer.run(log_path=log_path)
    trainer.save(path)
    return trainer.system


@pytest.fixture(scope="session")
def desk_mac(request):
    return _trained(request, "desk-mac", preset("desk"))


@pytest.fixture(scope="session")
def desk_tdma(request):
    return _trained(request, "desk-tdma", tdma_config())


@pytest.fixture(scope="session")
def mac_estimate(desk_mac):
    cfg = desk_mac.cfg
    return estimate_bler(desk_mac, cfg.channel.snr_ff_db, EVAL_TRIALS, cfg.eval.seed)


def test_c01_belief_matrix_oracle():
    with criterion(1, "belief matrix oracle") as notes:
        t0 = time.perf_counter()
        A3 = make_belief_matrix(3).A
        assert A3.tolist() == [[0, 0, 0, 0, 1, 1, 1, 1], [0, 0, 1, 1, 0, 0, 1, 1],
                               [0, 1, 0, 1, 0, 1, 0, 1]]
        rng = np.random.default_rng(0)
        worst = 0.0
        for m in range(1, 7):
            A = make_belief_matrix(m)
            for _ in range(5):
                w = rng.dirichlet(np.ones(2 ** m))
                brute = sum(w[c] * np.array(f_d2b(c, m), dtype=float) for c in range(2 ** m))
                worst = max(worst, float(np.abs(belief_from_probs(w, A) - brute).max()))
        elapsed = time.perf_counter() - t0
        notes.append(f"max deviation {worst:.1e}")
        assert worst <= 1e-12
        assert elapsed < 1.0


def test_c02_channel_statistics():
    with criterion(2, "channel noise statistics") as notes:
        gen = torch.Generator().manual_seed(derive_seed(0, "acceptance-noise"))
        z = sample_noise((1_000_000,), 1.0, gen, dtype=torch.float64)
        mean, var = z.mean().item(), z.var().item()
        notes.append(f"mean {mean:+.4f}, variance {var:.4f}")
        assert -0.005 <= mean <= 0.005
        assert 0.98 <= var <= 1.02


def test_c03_full_episode_gradient_check():
    with criterion(3, "gradient check of the full episode") as notes:
        cfg = tiny_config()  # d_model=8, l=4, m=2, T=3, N_iter=1
        torch.manual_seed(derive_seed(0, "init"))
        system = MBAFSystem(cfg).double()
        B, T, l = 16, cfg.code.T, cfg.code.l
        gen = torch.Generator().manual_seed(3)
        msgs = sample_batch(gen, B, cfg.code.K, cfg.code.m)
        sigma2 = snr_to_sigma2(2.0)
        noise = math.sqrt(sigma2) * torch.randn(T, B, l, generator=gen, dtype=torch.float64)
        # additive probe on user 1's round-1 symbols: its gradient is the gradient
        # with respect to those symbols, which reaches the loss through the
        # receiver and, via feedback, through every later round
        probe = torch.zeros(B, l, dtype=torch.float64, requires_grad=True)
        system.parity[0].register_forward_hook(
            lambda mod, args, out: out + probe if args[1] == 0 else None)

        def loss_fn():
            _, res = system.rollout(msgs, sigma2, noise=noise, phase="train")
            return episode_loss(res.probs, msgs)

        rng = np.random.default_rng(7)
        groups = {}
        for name, p in system.named_parameters():
            groups.setdefault(name.split(".")[0] + "." + name.split(".")[1], []).append(p)
        checked = ok = 0
        for group, params in groups.items():
            c, k, _ = central_difference_check(loss_fn, params, 6, rng)
            checked, ok = checked + c, ok + k
        c, k, _ = central_difference_check(loss_fn, [probe], B * l, rng)
        checked, ok = checked + c, ok + k
        probe_grad = probe.grad.abs().sum().item()
        notes.append(f"{ok}/{checked} coordinates agree across {len(groups) + 1} groups")
        assert probe_grad > 0
        assert ok >= 0.99 * checked


@pytest.mark.slow
def test_c04_power_constraint(mac_estimate):
    with criterion(4, "average power after desk training") as notes:
        notes.append("per-user power " + ", ".join(f"{p:.4f}" for p in mac_estimate.avg_power)
                     + f" over {mac_estimate.trials} episodes")
        assert mac_estimate.trials >= 8192
        assert all(0.95 <= p <= 1.05 for p in mac_estimate.avg_power)


def test_c05_monte_carlo_harness():
    with criterion(5, "Monte Carlo harness against the uncoded oracle") as notes:
        est = estimate_bler(UncodedSystem(51), 0.0, 100_000, seed=5)
        oracle = uncoded_bler_oracle(51, 0.0)
        gap = abs(est.bler - oracle) / est.ci_half_width
        notes.append(f"estimate {est.bler:.5f}, oracle {oracle:.5f}, {gap:.2f} half-widths")
        assert gap <= 3


@pytest.mark.slow
def test_c06_learning_smoke(desk_mac, mac_estimate):
    with criterion(6, "desk training learns") as notes:
        cfg = desk_mac.cfg
        torch.manual_seed(derive_seed(cfg.train.seed, "init"))
        untrained = MBAFSystem(cfg)
        calibrate_power(untrained, cfg.channel.snr_ff_db, cfg.train.seed,
                        cfg.train.calibration_batch)
        base = estimate_bler(untrained, cfg.channel.snr_ff_db, EVAL_TRIALS, cfg.eval.seed)
        notes.append(f"BLER {mac_estimate.bler:.2e} trained vs {base.bler:.4f} untrained "
                     f"at {cfg.channel.snr_ff_db} dB")
        assert mac_estimate.bler <= 0.1
        assert base.bler >= 0.99


def test_c07_causality_and_protocol():
    with criterion(7, "causality and protocol invariants") as notes:
        cfg = preset("desk")
        torch.manual_seed(0)
        system = MBAFSystem(cfg)
        calibrate_power(system, 2.0, 0, 1024)
        system.eval()
        T, l, B = cfg.code.T, cfg.code.l, 32
        gen = torch.Generator().manual_seed(11)
        msgs = sample_batch(gen, B, cfg.code.K, cfg.code.m)
        noise = torch.randn(T, B, l, generator=gen)
        with torch.no_grad():
            base, _ = system.rollout(msgs, 1.0, noise=noise)
            assert base.sent.shape == (2, T, B, l)
            assert base.channel_uses == T * l
            for tau in range(1, T + 1):
                bumped = noise.clone()
                bumped[tau - 1] += 2.0
                pert, _ = system.rollout(msgs, 1.0, noise=bumped)
                assert torch.equal(pert.sent[:, :tau], base.sent[:, :tau])
            other = sample_batch(torch.Generator().manual_seed(12), B, cfg.code.K, cfg.code.m)
            swapped, _ = system.rollout([msgs[0], other[1]], 1.0, noise=noise)
            assert torch.equal(swapped.sent[0, 0], base.sent[0, 0])
        notes.append(f"{T} rounds x {l} blocks = {T * l} symbols per user")


def test_c08_reference_curves():
    with criterion(8, "reference curves") as notes:
        t0 = time.perf_counter()
        cap_err = abs(mac_sum_capacity(2.0) - 0.5 * math.log2(3))
        assert cap_err <= 1e-12
        assert abs(normal_approx_rate(136, 2.0, 1e-6) - GOLDEN_NA_136) <= 1e-12
        gaps = []
        for snr in np.linspace(-1, 1, 21):
            S = super_user_snr(snr)
            gaps.append(mac_sum_capacity(S) - normal_approx_rate(136, S, 1e-6))
        notes.append(f"capacity minus normal approximation in [{min(gaps):.4f}, {max(gaps):.4f}]")
        assert min(gaps) > 0
        assert time.perf_counter() - t0 < 1.0


@pytest.mark.slow
def test_c09_tdma_ordering(desk_mac, desk_tdma, mac_estimate):
    with criterion(9, "joint code versus time division at equal resources") as notes:
        cfg = desk_mac.cfg
        td = tdma_baseline(desk_tdma, cfg.channel.snr_ff_db, cfg.code.T, cfg.code.K,
                           EVAL_TRIALS, cfg.eval.seed)
        assert td.rate == mac_estimate.rate
        notes.append(f"BLER {mac_estimate.bler:.2e} joint vs {td.bler:.2e} time division "
                     f"at rate {td.rate}")
        assert mac_estimate.bler <= td.bler


def _deterministic_columns(path):
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    keep = [i for i, c in enumerate(header) if c != "wall_time"]
    return [[row.split(",")[i] for i in keep] for row in lines]


def test_c10_determinism_and_persistence(tmp_path):
    with criterion(10, "determinism and persistence") as notes:
        cfg = preset("desk").replace(train={"log_every": 1})
        runs = []
        for tag in ("a", "b"):
            tr = Trainer(cfg)
            tr.run(num_batches=8, log_path=tmp_path / f"{tag}.log.csv")
            est = estimate_bler(tr.system, 2.0, 2000, seed=3)
            emit_results([est], path=tmp_path / f"{tag}.csv")
            runs.append(tr)
        assert _deterministic_columns(tmp_path / "a.log.csv") == \
            _deterministic_columns(tmp_path / "b.log.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

        runs[0].save(tmp_path / "m.ckpt")
        back = Trainer.from_checkpoint(tmp_path / "m.ckpt")
        back.save(tmp_path / "m2.ckpt")
        assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()
        for (k, v), (k2, v2) in zip(runs[0].system.state_dict().items(),
                                    back.system.state_dict().items()):
            assert k == k2 and torch.equal(v, v2)
        emit_results([estimate_bler(back.system, 2.0, 2000, seed=3)], path=tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_bytes() == (tmp_path / "a.csv").read_bytes()
        notes.append("logs (wall-clock column excluded), BLER CSVs and checkpoints identical")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
