"""Message blocks, block labels and the belief matrix."""
import numpy as np
import torch

from mbaf.codec import belief_from_probs, f_b2d, f_d2b, make_belief_matrix, partition_message, sum_rate

spacer = "_" * 60

print("A user's message is cut into l blocks of m bits; each block gets a class label.")
bits = np.array([1, 0, 1, 0, 0, 0, 1, 1, 1])
msg = partition_message(bits, 3)
print("bits   =", bits)
print("blocks =", msg.blocks.tolist())
print("labels =", msg.labels.tolist())
print("K, l, m =", msg.K, msg.l, msg.m)

print(spacer)
print("\nLabels and bit patterns convert both ways (big-endian):")
for c in (0, 5, 7):
    print(f"f_d2b({c}, 3) = {f_d2b(c, 3).tolist()}   f_b2d(...) = {f_b2d(f_d2b(c, 3))}")

print(spacer)
print("\nColumn c of the belief matrix A is the bit pattern of label c:")
A = make_belief_matrix(3)
print(A.A)
print("row sums:", A.A.sum(axis=1))

print("\nA maps a distribution over 8 labels to per-bit probabilities of a one.")
w = np.zeros(8)
w[5], w[4] = 0.75, 0.25
print("w =", w)
print("A @ w =", belief_from_probs(w, A))
print("uniform w gives", belief_from_probs(np.full(8, 1 / 8), A))

print("\nIt works on batches of torch tensors too:")
W = torch.softmax(torch.randn(2, 8, dtype=torch.float64), -1)
print(belief_from_probs(W, A))

print(spacer)
rs = sum_rate(51, 17, 8)
print(f"\nK=51, l=17, T=8: N = {rs.N} channel uses, sum-rate R = {rs.R} = {float(rs.R):.4f}")
