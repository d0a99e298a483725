"""The BLER harness checked against a closed form.

Sending each bit once as +-1 and deciding by sign fails a K-bit block with
probability 1 - (1 - Q(1/sigma))^K.  The Monte Carlo estimate should land
within a few Wilson half-widths of it.
"""
from mbaf.evaluation import UncodedSystem, estimate_bler, uncoded_bler_oracle

K = 12
trials = 20_000
system = UncodedSystem(K)

print(f"uncoded, K = {K}, {trials} trials per point")
print(f"{'snr_db':>6} {'estimate':>10} {'oracle':>10} {'95% Wilson interval':>26} {'gap':>6}")
for snr in (0.0, 2.0, 4.0, 6.0, 8.0, 10.0):
    est = estimate_bler(system, snr, trials, seed=0)
    oracle = uncoded_bler_oracle(K, snr)
    lo, hi = est.ci
    gap = abs(est.bler - oracle) / max(est.ci_half_width, 1e-300)
    print(f"{snr:6.1f} {est.bler:10.5f} {oracle:10.5f}   [{lo:.5f}, {hi:.5f}] {gap:6.2f}")

print("\nRerunning with the same seed and chunk size reproduces the counts exactly:")
a = estimate_bler(system, 4.0, 5000, seed=42)
b = estimate_bler(system, 4.0, 5000, seed=42)
print(a.errors, b.errors)
print("Each chunk of batch_size episodes has its own derived seed, so changing")
print("batch_size draws a different (equally valid) sample:")
print(estimate_bler(system, 4.0, 5000, seed=42, batch_size=1000).errors)
