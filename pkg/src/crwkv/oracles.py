"""Slow, loop-based reference computations.

These share no code with the fast paths they are used to check; keep them
naive.
"""

import math

import numpy as np


def naive_linear(x, weight, bias):
    B, Ci, H, W = x.shape
    Co = weight.shape[1]
    y = np.zeros((B, Co, H, W))
    for b in range(B):
        for o in range(Co):
            for i in range(H):
                for j in range(W):
                    acc = bias[o]
                    for c in range(Ci):
                        acc += x[b, c, i, j] * weight[c, o]
                    y[b, o, i, j] = acc
    return y


def naive_conv2d(x, kernel, bias, stride, padding):
    B, Ci, H, W = x.shape
    Co, _, kh, kw = kernel.shape
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    y = np.zeros((B, Co, Ho, Wo))
    for b in range(B):
        for o in range(Co):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if bias is None else bias[o]
                    for c in range(Ci):
                        for di in range(kh):
                            for dj in range(kw):
                                yi = i * stride + di - padding
                                xj = j * stride + dj - padding
                                if 0 <= yi < H and 0 <= xj < W:
                                    acc += x[b, c, yi, xj] * kernel[o, c, di, dj]
                    y[b, o, i, j] = acc
    return y


def naive_dft2(x):
    """Direct double-sum 2-D DFT of an ``(H, W)`` array."""
    H, W = x.shape
    out = np.zeros((H, W), dtype=complex)
    for u in range(H):
        for v in range(W):
            acc = 0j
            for m in range(H):
                for n in range(W):
                    acc += x[m, n] * complex(math.cos(-2 * math.pi * (u * m / H + v * n / W)),
                                             math.sin(-2 * math.pi * (u * m / H + v * n / W)))
            out[u, v] = acc
    return out


def direct_biwkv(k, v, w, u):
    """BiWKV for one channel straight from the summation formula (1-indexed bias)."""
    T = len(k)
    out = []
    for t in range(1, T + 1):
        terms = []
        for i in range(1, T + 1):
            if i == t:
                terms.append((u + k[t - 1], v[t - 1]))
            else:
                terms.append((-(abs(t - i) - 1) / T * w + k[i - 1], v[i - 1]))
        top = max(s for s, _ in terms)
        num = sum(math.exp(s - top) * val for s, val in terms)
        den = sum(math.exp(s - top) for s, _ in terms)
        out.append(num / den)
    return out


def naive_psnr(a, b):
    total = 0.0
    n = 0
    for va, vb in zip(np.ravel(a), np.ravel(b)):
        total += (float(va) - float(vb)) ** 2
        n += 1
    mse = total / n
    if mse < 1e-10:
        return 100.0
    return 10.0 * math.log10(1.0 / mse)


def naive_ssim(a, b, win=11, sigma=1.5, K1=0.01, K2=0.03):
    """Scalar-loop SSIM over every valid window, averaged over channels."""
    half = (win - 1) / 2
    g = [[math.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma**2)) for j in range(win)] for i in range(win)]
    gs = sum(sum(r) for r in g)
    g = [[val / gs for val in r] for r in g]
    C1, C2 = K1**2, K2**2
    H, W, C = a.shape
    per_channel = []
    for c in range(C):
        vals = []
        for y0 in range(H - win + 1):
            for x0 in range(W - win + 1):
                mx = my = sxx = syy = sxy = 0.0
                for i in range(win):
                    for j in range(win):
                        p = float(a[y0 + i, x0 + j, c])
                        q = float(b[y0 + i, x0 + j, c])
                        wt = g[i][j]
                        mx += wt * p
                        my += wt * q
                        sxx += wt * p * p
                        syy += wt * q * q
                        sxy += wt * p * q
                sxx -= mx * mx
                syy -= my * my
                sxy -= mx * my
                vals.append(((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2)))
        per_channel.append(sum(vals) / len(vals))
    return sum(per_channel) / C


def finite_difference(f, x, h_scale=1e-5):
    """Central differences of scalar ``f`` at every entry of ``x`` (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = h_scale * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g
