"""
The bidirectional WKV operator
==============================

Every output token is a weighted average of all value tokens. The weight
of token i seen from token t is exp(k_i - (|t-i| - 1) / T * w), and the
token itself gets exp(u + k_t) instead. The direct formula costs O(T^2).
Two exponent-shifted scans (left to right, then right to left) give the
same numbers in O(T).
"""

import time

import numpy as np

from crwkv import wkv

rng = np.random.default_rng(0)

# a batch of one sequence, 6 tokens, 2 channels
k = rng.standard_normal((1, 6, 2))
v = rng.standard_normal((1, 6, 2))
w = np.array([0.5, -1.0])  # per-channel decay; negative w favours distant tokens
u = np.array([0.2, 0.2])   # bonus for the current token

slow = wkv.biwkv_reference(k, v, w, u)
fast = wkv.biwkv_scan(k, v, w, u)
print("reference:\n", slow[0])
print("max |scan - reference| =", np.abs(fast - slow).max())

# Outputs are convex combinations of the values, so they never leave [min v, max v],
# even for keys far outside the range where exp() is representable.
k_big = np.full((1, 6, 2), 800.0)
out = wkv.biwkv_scan(k_big, v, w, u)
print("huge keys stay finite:", np.isfinite(out).all(), "within value range:",
      bool((out >= v.min(axis=1)).all() and (out <= v.max(axis=1)).all()))

# The bias is symmetric in |t - i|, so reversing the sequence reverses the output.
rev = wkv.biwkv_scan(k[:, ::-1], v[:, ::-1], w, u)[:, ::-1]
print("reversal deviation:", np.abs(rev - fast).max())

# %%
# Scaling: doubling T doubles the scan time but quadruples the reference.
for T in (512, 1024, 2048):
    k = rng.standard_normal((1, T, 4))
    v = rng.standard_normal((1, T, 4))
    w4, u4 = np.linspace(-1, 1, 4), np.full(4, 0.5)
    wkv.biwkv_scan(k, v, w4, u4)  # first call compiles
    t0 = time.perf_counter()
    wkv.biwkv_scan(k, v, w4, u4)
    t1 = time.perf_counter()
    wkv.biwkv_reference(k, v, w4, u4)
    t2 = time.perf_counter()
    print(f"T={T:5d}  scan {1e3 * (t1 - t0):7.2f} ms   reference {1e3 * (t2 - t1):8.2f} ms")

# %%
# Gradients for all four inputs come from the same pair of scans run backwards.
k, v, gy = rng.standard_normal((3, 1, 5, 2))
gk, gv, gw, gu = wkv.biwkv_backward(k, v, w, u, gy)
print("d/dw:", gw, " d/du:", gu)
