"""One two-user episode, round by round, with an untrained model."""
import torch

from mbaf.channel import snr_to_sigma2
from mbaf.config import preset
from mbaf.model import MBAFSystem
from mbaf.training import calibrate_power, sample_batch

spacer = "_" * 60
cfg = preset("desk")
print("desk preset:", cfg.code)

torch.manual_seed(0)
system = MBAFSystem(cfg)
print("parity networks:", len(system.parity), " decoder input width:", system.decoder.cfg.d_in)
print("parameters:", sum(p.numel() for p in system.parameters()))

print("\nEvaluation needs frozen power statistics, so calibrate first.")
calibrate_power(system, cfg.channel.snr_ff_db, seed=0, batch_size=2048)
system.eval()

print(spacer)
gen = torch.Generator().manual_seed(1)
msgs = sample_batch(gen, 4, cfg.code.K, cfg.code.m)
print("user 1 labels of episode 0:", msgs[0].labels[0].tolist())
print("user 2 labels of episode 0:", msgs[1].labels[0].tolist())
with torch.no_grad():
    trace, result = system.rollout(msgs, snr_to_sigma2(cfg.channel.snr_ff_db), gen)

print("\nsent symbols   (users, rounds, episodes, blocks):", tuple(trace.sent.shape))
print("received       (rounds, episodes, blocks):       ", tuple(trace.received.shape))
print("channel uses per episode:", trace.channel_uses)
print("superposition holds:", torch.allclose(trace.received, trace.sent.sum(0) + trace.noise))
print("per-user power of this small batch:", trace.average_power().tolist())

print(spacer)
print("\nThe receiver refines its guess", cfg.code.n_iter, "times; final decisions:")
print("user 1:", result.labels[0, 0].tolist())
print("user 2:", result.labels[0, 1].tolist())
print("An untrained code gets almost every block wrong; see 05_train_and_compare.py.")
