"""Train the desk code briefly, then compare it with time division.

    python3 demos/05_train_and_compare.py [batches]

The full desk schedule is 5000 batches (tens of minutes on one CPU core);
the default here is a 300-batch taste.  Both codes use the same rate and
per-user energy: the time-division user talks for T/2 rounds at +3 dB.
"""
import sys
import time

from mbaf.config import preset
from mbaf.evaluation import estimate_bler, tdma_baseline
from mbaf.training import Trainer

batches = int(sys.argv[1]) if len(sys.argv) > 1 else 300
trials = 4000
cfg = preset("desk").replace(train={"total_batches": batches,
                                    "curriculum_batches": min(1000, batches), "log_every": 50})
single = cfg.replace(mode="single_user", code={"T": cfg.code.T // 2},
                     channel={"snr_ff_db": cfg.channel.snr_ff_db + 3},
                     train={"snr_target_db": cfg.channel.snr_ff_db + 3})


def report(rec):
    print(f"  batch {rec['batch_idx']:5d}  snr {rec['snr_db']:.2f} dB  loss {rec['loss']:.4f}")


t0 = time.time()
print(f"two-user code, {batches} batches:")
joint = Trainer(cfg)
joint.run(progress=report)
print(f"single-user code for time division, {batches} batches:")
td = Trainer(single)
td.run(progress=report)
print(f"training took {time.time() - t0:.0f} s")

snr = cfg.channel.snr_ff_db
a = estimate_bler(joint.system, snr, trials, seed=1)
b = tdma_baseline(td.system, snr, cfg.code.T, cfg.code.K, trials, seed=1)
print(f"\nsum-rate {a.rate} at {snr} dB, {trials} episodes")
print(f"joint feedback code: BLER {a.bler:.4f}  power {[round(p, 3) for p in a.avg_power]}")
print(f"time division:       BLER {b.bler:.4f}  power {[round(p, 3) for p in b.avg_power]}")
