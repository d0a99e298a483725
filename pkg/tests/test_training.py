import math

import numpy as np
import pytest
import torch
from scipy import stats

from mbaf.channel import snr_to_sigma2
from mbaf.checkpoint import (Checkpoint, decode, encode, load_checkpoint, save_checkpoint)
from mbaf.config import TrainConfig
from mbaf.errors import CheckpointVersionError
from mbaf.evaluation import estimate_bler
from mbaf.model import MBAFSystem
from mbaf.training import (Trainer, TrainingDiverged, block_cross_entropy, curriculum_snr,
                           episode_loss, loss, make_optimizer, sample_batch, train_step)

from conftest import tiny_config


class TestSampleBatch:
    def test_shapes(self):
        msgs = sample_batch(torch.Generator().manual_seed(0), 32, 12, 2)
        assert len(msgs) == 2
        assert msgs[0].blocks.shape == (32, 6, 2)
        assert msgs[1].labels.shape == (32, 6)

    def test_uniform_bits(self):
        msgs = sample_batch(torch.Generator().manual_seed(1), 500_000, 2, 1, num_users=1)
        mean = msgs[0].bits.double().mean().item()
        assert 0.499 <= mean <= 0.501

    def test_labels_uniform_chi_square(self):
        msgs = sample_batch(torch.Generator().manual_seed(2), 250_000, 8, 2, num_users=1)
        counts = np.bincount(msgs[0].labels.reshape(-1).numpy(), minlength=4)
        assert counts.sum() == 1_000_000
        assert stats.chisquare(counts).pvalue > 0.01


class TestLoss:
    def test_perfect_prediction(self):
        labels = torch.tensor([[1, 3, 0]])
        W = torch.nn.functional.one_hot(labels, 4).double()
        assert loss(W, W, labels, labels).item() == 0.0

    def test_uniform_prediction(self):
        m, l = 3, 5
        W = torch.full((2, l, 2 ** m), 2.0 ** -m)
        labels = torch.randint(0, 8, (2, l))
        assert loss(W, W, labels, labels).item() == pytest.approx(l * m * math.log(2), rel=1e-6)

    def test_block_order_invariance(self):
        W = torch.softmax(torch.randn(4, 6, 4), -1)
        labels = torch.randint(0, 4, (4, 6))
        perm = torch.randperm(6)
        a = loss(W, W, labels, labels)
        b = loss(W[:, perm], W[:, perm], labels[:, perm], labels[:, perm])
        assert a.item() == pytest.approx(b.item(), rel=1e-6)

    def test_zero_probability_is_clamped(self):
        W = torch.tensor([[[1.0, 0.0]]])
        assert block_cross_entropy(W, torch.tensor([[1]])).item() == pytest.approx(-math.log(1e-12))

    def test_nonnegative(self):
        W = torch.softmax(torch.randn(8, 3, 4), -1)
        labels = torch.randint(0, 4, (8, 3))
        assert loss(W, W, labels, labels).item() >= 0

    def test_episode_loss_matches_two_user_loss(self):
        probs = torch.softmax(torch.randn(4, 6, 2, 4), -1)
        msgs = sample_batch(torch.Generator().manual_seed(0), 4, 12, 2)
        expected = loss(probs[:, :, 0], probs[:, :, 1], msgs[0].labels, msgs[1].labels)
        torch.testing.assert_close(episode_loss(probs, msgs), expected)


class TestCurriculum:
    def test_default_schedule(self):
        cfg = TrainConfig(snr_target_db=1.0)
        assert curriculum_snr(0, cfg) == 3.0
        assert curriculum_snr(30_000, cfg) == 1.0
        assert curriculum_snr(100_000, cfg) == 1.0

    def test_midpoint(self):
        assert curriculum_snr(15_000, TrainConfig(snr_target_db=-1.0)) == pytest.approx(1.0)

    def test_endpoint_exact(self):
        for target in (-1.0, 0.3, 2.9):
            cfg = TrainConfig(snr_target_db=target, curriculum_batches=777)
            assert curriculum_snr(cfg.curriculum_batches, cfg) == target

    def test_monotone_ramp(self):
        cfg = TrainConfig(snr_target_db=-0.5, curriculum_batches=100)
        values = [curriculum_snr(i, cfg) for i in range(120)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_high_target_is_constant(self):
        cfg = TrainConfig(snr_target_db=5.0)
        assert curriculum_snr(0, cfg) == 5.0


def _setup(seed=0, **kw):
    cfg = tiny_config(**kw)
    torch.manual_seed(seed)
    system = MBAFSystem(cfg)
    return cfg, system, make_optimizer(system, cfg.train)


class TestTrainStep:
    def test_clipped_norm(self):
        cfg, system, opt = _setup()
        gen = torch.Generator().manual_seed(0)
        msgs = sample_batch(gen, 64, cfg.code.K, cfg.code.m)
        metrics = train_step(system, opt, msgs, 2.0, 0.5, generator=gen)
        assert metrics["clipped_grad_norm"] <= 0.5 + 1e-6
        assert metrics["grad_norm"] > 0

    def test_gradients_reach_every_parameter(self):
        cfg, system, opt = _setup()
        gen = torch.Generator().manual_seed(1)
        msgs = sample_batch(gen, 64, cfg.code.K, cfg.code.m)
        opt.zero_grad()
        _, res = system.rollout(msgs, snr_to_sigma2(2.0), gen)
        episode_loss(res.probs, msgs).backward()
        for name, p in system.named_parameters():
            assert p.grad is not None and p.grad.abs().sum() > 0, name

    def test_gradient_reaches_round_one_symbols_through_feedback(self):
        cfg, system, _ = _setup()
        gen = torch.Generator().manual_seed(2)
        msgs = sample_batch(gen, 32, cfg.code.K, cfg.code.m)
        captured = []
        system.parity[0].register_forward_hook(
            lambda mod, args, out: captured.append(out) if args[1] == 0 else None)
        _, res = system.rollout(msgs, 1.0, gen)
        grad = torch.autograd.grad(episode_loss(res.probs, msgs), captured[0])[0]
        assert grad.abs().sum() > 0

    def test_non_finite_loss_aborts(self):
        cfg, system, opt = _setup()
        with torch.no_grad():
            system.decoder.head.fc2.bias.fill_(float("nan"))
        msgs = sample_batch(torch.Generator().manual_seed(0), 8, cfg.code.K, cfg.code.m)
        with pytest.raises(TrainingDiverged) as info:
            train_step(system, opt, msgs, 2.0, 0.5, generator=torch.Generator().manual_seed(0))
        assert "loss" in info.value.state

    def test_trainer_dumps_state_on_divergence(self, tmp_path):
        cfg = tiny_config()
        tr = Trainer(cfg)
        with torch.no_grad():
            tr.system.decoder.head.fc2.bias.fill_(float("nan"))
        dump = tmp_path / "dump.ckpt"
        with pytest.raises(TrainingDiverged) as info:
            tr.run(num_batches=2, dump_path=dump)
        assert info.value.state["batch_idx"] == 0
        assert load_checkpoint(dump).meta["diverged_at"] == 0

    def test_identical_seeds_identical_loss_curves(self):
        cfg = tiny_config()
        a = Trainer(cfg).run(num_batches=5)
        b = Trainer(cfg).run(num_batches=5)
        assert [r["loss"] for r in a] == [r["loss"] for r in b]
        c = Trainer(cfg.replace(train={"seed": 1})).run(num_batches=5)
        assert [r["loss"] for r in a] != [r["loss"] for r in c]

    def test_loss_halves_on_tiny_config(self):
        cfg = tiny_config().replace(train={"batch_size": 128, "total_batches": 600,
                                           "log_every": 20, "lr": 3e-3})
        tr = Trainer(cfg)
        records = tr.run(num_batches=600)
        start = np.mean([r["loss"] for r in records[:2]])
        end = np.mean([r["loss"] for r in records[-3:]])
        assert end <= 0.5 * start


class TestCheckpoint:
    def test_round_trip_is_byte_identical(self, tmp_path):
        cfg = tiny_config()
        tr = Trainer(cfg)
        tr.run(num_batches=3)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        tr.save(p1, note="x")
        Trainer.from_checkpoint(p1).save(p2, note="x")
        assert p1.read_bytes() == p2.read_bytes()

    def test_round_trip_restores_state(self, tmp_path):
        cfg = tiny_config()
        tr = Trainer(cfg)
        tr.run(num_batches=3)
        path = tmp_path / "c.ckpt"
        tr.save(path)
        back = Trainer.from_checkpoint(path)
        assert back.step == 3 and back.cfg == cfg
        for (k, v), (k2, v2) in zip(tr.system.state_dict().items(),
                                    back.system.state_dict().items()):
            assert k == k2 and torch.equal(v, v2)
        # resumed training continues exactly as uninterrupted training
        tr.run(num_batches=2)
        back.run(num_batches=2)
        for v, v2 in zip(tr.system.state_dict().values(), back.system.state_dict().values()):
            assert torch.equal(v, v2)

    def test_evaluation_reproduced_after_load(self, tmp_path):
        cfg = tiny_config()
        tr = Trainer(cfg)
        tr.run(num_batches=3)
        path = tmp_path / "d.ckpt"
        tr.save(path)
        back = Trainer.from_checkpoint(path)
        a = estimate_bler(tr.system, 2.0, 300, seed=4, batch_size=128)
        b = estimate_bler(back.system, 2.0, 300, seed=4, batch_size=128)
        assert a == b

    def test_bad_magic(self):
        with pytest.raises(CheckpointVersionError):
            decode(b"NOTACKPT" + bytes(40))

    def test_version_mismatch_names_versions(self):
        blob = bytearray(encode(Checkpoint(config=tiny_config(), model_state={})))
        blob[8] = 7
        with pytest.raises(CheckpointVersionError, match="version 7.*version 1"):
            decode(bytes(blob))

    def test_corrupted_header(self, tmp_path):
        blob = bytearray(encode(Checkpoint(config=tiny_config(),
                                           model_state={"w": torch.ones(3)})))
        blob[25] ^= 0xFF
        with pytest.raises(CheckpointVersionError):
            decode(bytes(blob))

    def test_truncated_payload(self):
        blob = encode(Checkpoint(config=tiny_config(), model_state={"w": torch.ones(30)}))
        with pytest.raises(CheckpointVersionError):
            decode(blob[:-8])

    def test_atomic_write(self, tmp_path):
        path = tmp_path / "e.ckpt"
        save_checkpoint(path, Checkpoint(config=tiny_config(), model_state={"w": torch.ones(2)}))
        assert [p.name for p in tmp_path.iterdir()] == ["e.ckpt"]

    def test_embeds_config(self, tmp_path):
        cfg = tiny_config().replace(channel={"snr_ff_db": 1.5})
        path = tmp_path / "f.ckpt"
        save_checkpoint(path, Checkpoint(config=cfg, model_state={}))
        assert load_checkpoint(path).config == cfg
