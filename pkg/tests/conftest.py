import sys
import numpy as np
import pytest
import torch

from mbaf.config import CodeConfig, ExperimentConfig, ModelConfig, TrainConfig


def tiny_config(mode="mac2", T=3, n_iter=1, m=2, l=4, d_model=8) -> ExperimentConfig:
    return ExperimentConfig(
        code=CodeConfig(K=l * m, m=m, l=l, T=T, n_iter=n_iter),
        model=ModelConfig(d_model=d_model, n_heads=2, d_ff=4 * d_model),
        train=TrainConfig(batch_size=16, total_batches=10, curriculum_batches=0, snr_target_db=2.0,
                          calibration_batch=256),
        mode=mode,
    )


@pytest.fixture
def tiny_cfg():
    return tiny_config()


def central_difference_check(loss_fn, params, n_samples, rng, step=1e-5):
    """Compare autograd gradients with central differences on sampled coordinates.

    Returns ``(n_checked, n_ok, worst)`` where a coordinate is ok when the
    two agree within rtol 1e-3 (with a small absolute floor for gradients
    that vanish).
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() for p in params]
    checked = ok = 0
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.view(-1)
        idx = rng.choice(flat.numel(), size=min(n_samples, flat.numel()), replace=False)
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
            fd = (up - down) / (2 * step)
            an = g.view(-1)[i].item()
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            checked += 1
            if abs(fd - an) <= 1e-3 * max(abs(fd), abs(an)) + 1e-8:
                ok += 1
            worst = max(worst, err)
    return checked, ok, worst


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
