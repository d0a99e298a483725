"""Finite-length and capacity sum-rates for two users with pooled power."""
import numpy as np

from mbaf.evaluation import (awgn_dispersion, mac_sum_capacity, normal_approx_rate,
                             q_inverse, reference_curves, super_user_snr)

spacer = "_" * 60

print("Both users at unit power with noise variance sigma^2 act like one user at")
print("SNR 2/sigma^2. At 0 dB that is S = 2:")
S = super_user_snr(0.0)
print("S =", S)
print("sum capacity 0.5*log2(1+S) =", mac_sum_capacity(S))
print("dispersion V(S) =", awgn_dispersion(S), "bits^2")
print("Q^-1(1e-6) =", q_inverse(1e-6))

print(spacer)
print("\nThe normal approximation at blocklength n = T*l sits below capacity:")
for n in (34, 68, 136, 1360, 13600):
    print(f"n = {n:6d}   R = {normal_approx_rate(n, S, 1e-6):.5f}")

print(spacer)
print("\nSweep SNR over [-1, 1] dB at n = 8*17 = 136 and eps = 1e-6:")
print(f"{'snr_db':>7} {'normal approx':>14} {'capacity':>9}")
for row in reference_curves(np.linspace(-1, 1, 9), l=17, T_list=[8]):
    print(f"{row['snr_db']:7.2f} {row['normal_approx_rate']:14.5f} {row['sum_capacity']:9.5f}")

print("\nThe same table as a CSV comes from:  mbaf bounds --out bounds.csv")
