"""Bidirectional WKV operator.

For one channel with keys ``k``, values ``v``, decay ``w`` and bonus ``u``::

    y_t = (sum_{i != t} exp(b(t,i) w + k_i) v_i + exp(u + k_t) v_t)
          / (sum_{i != t} exp(b(t,i) w + k_i)     + exp(u + k_t))

    b(t, i) = -(|t - i| - 1) / T

Two evaluations are provided: an O(T^2) reference that materializes every
weight, and an O(T) scan that runs one recurrence left-to-right and one
right-to-left. The scan stores every accumulator as ``exp(p) * mantissa`` with
a running maximum exponent ``p`` so it never overflows.

Array convention for the public functions: ``k`` and ``v`` are ``(B, T, C)``,
``w`` and ``u`` are length ``C``. The lane functions (``wkv_forward``,
``wkv_backward``) take ``(L, T)`` arrays with per-lane ``w`` and ``u``; the
network calls those directly on flattened ``(B*C, H*W)`` feature maps.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


def position_bias(t, i, T):
    """Relative position bias between tokens ``t`` and ``i`` (1-indexed)."""
    if t == i:
        raise ValueError("position_bias is undefined on the diagonal; the bonus u applies there")
    if not (1 <= t <= T and 1 <= i <= T):
        raise ValueError(f"token indices must lie in [1, {T}], got t={t}, i={i}")
    return -(abs(t - i) - 1) / T


# ---------------------------------------------------------------------------
# reference form
# ---------------------------------------------------------------------------


def _lane_weights(k, w, u):
    """Log-weights ``s[t, i]`` for one lane."""
    T = k.shape[0]
    idx = np.arange(T)
    dist = np.abs(idx[:, None] - idx[None, :])
    s = -(dist - 1) / T * w + k[None, :]
    s[idx, idx] = u + k
    return s, dist


def _check_seq(k, v, w, u):
    k = np.asarray(k)
    v = np.asarray(v)
    if k.shape != v.shape or k.ndim != 3:
        raise ValueError(f"k and v must share a (B, T, C) shape, got {k.shape} and {v.shape}")
    C = k.shape[2]
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), (C,))
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), (C,))
    return k, v, w, u


def biwkv_reference(k, v, w, u):
    """Quadratic-time BiWKV with per-row max subtraction.

    Parameters
    ----------
    k, v : ndarray, shape (B, T, C)
    w, u : array_like, shape (C,)

    Returns
    -------
    ndarray, shape (B, T, C), in the dtype of ``v``
    """
    k, v, w, u = _check_seq(k, v, w, u)
    B, T, C = k.shape
    out = np.empty((B, T, C), dtype=np.float64)
    for b in range(B):
        for c in range(C):
            kk = k[b, :, c].astype(np.float64)
            vv = v[b, :, c].astype(np.float64)
            s, _ = _lane_weights(kk, w[c], u[c])
            e = np.exp(s - s.max(axis=1, keepdims=True))
            out[b, :, c] = (e @ vv) / e.sum(axis=1)
    return out.astype(v.dtype, copy=False)


def biwkv_reference_backward(k, v, w, u, gy):
    """Quadratic-time gradients of :func:`biwkv_reference`.

    Returns ``(grad_k, grad_v, grad_w, grad_u)`` with ``grad_w`` and
    ``grad_u`` summed over the batch.
    """
    k, v, w, u = _check_seq(k, v, w, u)
    B, T, C = k.shape
    gk = np.zeros((B, T, C))
    gv = np.zeros((B, T, C))
    gw = np.zeros(C)
    gu = np.zeros(C)
    for b in range(B):
        for c in range(C):
            kk = k[b, :, c].astype(np.float64)
            vv = v[b, :, c].astype(np.float64)
            g = gy[b, :, c].astype(np.float64)
            s, dist = _lane_weights(kk, w[c], u[c])
            e = np.exp(s - s.max(axis=1, keepdims=True))
            pi = e / e.sum(axis=1, keepdims=True)
            y = pi @ vv
            gv[b, :, c] = pi.T @ g
            ds = g[:, None] * pi * (vv[None, :] - y[:, None])
            gk[b, :, c] = ds.sum(axis=0)
            diag = np.diag(ds).copy()
            gu[c] += diag.sum()
            bias = -(dist - 1) / T
            np.fill_diagonal(bias, 0.0)
            gw[c] += (ds * bias).sum()
    return gk, gv, gw, gu


# ---------------------------------------------------------------------------
# scan form (numba kernels, float64 accumulation)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _scan_forward(k, v, w, u, y):
    L, T = k.shape
    pf = np.empty(T)
    af = np.empty(T)
    bf = np.empty(T)
    for lane in range(L):
        lam = w[lane] / T
        uu = u[lane]
        p = -np.inf
        a = 0.0
        b = 0.0
        for t in range(T):
            pf[t] = p
            af[t] = a
            bf[t] = b
            pd = p - lam
            kt = k[lane, t]
            q = max(pd, kt)
            e1 = math.exp(pd - q)
            e2 = math.exp(kt - q)
            a = e1 * a + e2 * v[lane, t]
            b = e1 * b + e2
            p = q
        p = -np.inf
        a = 0.0
        b = 0.0
        for t in range(T - 1, -1, -1):
            kt = k[lane, t]
            d = uu + kt
            q = max(max(pf[t], p), d)
            ef = math.exp(pf[t] - q)
            eb = math.exp(p - q)
            ed = math.exp(d - q)
            y[lane, t] = (ef * af[t] + eb * a + ed * v[lane, t]) / (ef * bf[t] + eb * b + ed)
            pd = p - lam
            q = max(pd, kt)
            e1 = math.exp(pd - q)
            e2 = math.exp(kt - q)
            a = e1 * a + e2 * v[lane, t]
            b = e1 * b + e2
            p = q


@njit(cache=True)
def _scan_backward(k, v, w, u, gy, gk, gv, gw, gu):
    L, T = k.shape
    # forward-direction state before token t: exponent, num, den, d/dlam num, d/dlam den
    pf = np.empty(T)
    af = np.empty(T)
    bf = np.empty(T)
    daf = np.empty(T)
    dbf = np.empty(T)
    y = np.empty(T)
    logd = np.empty(T)
    # gradient scans: exponent, sum of g-terms, sum of (g*y)-terms
    qf = np.empty(T)
    sgf = np.empty(T)
    shf = np.empty(T)
    for lane in range(L):
        lam = w[lane] / T
        uu = u[lane]

        p = -np.inf
        a = 0.0
        b = 0.0
        da = 0.0
        db = 0.0
        for t in range(T):
            pf[t] = p
            af[t] = a
            bf[t] = b
            daf[t] = da
            dbf[t] = db
            pd = p - lam
            kt = k[lane, t]
            q = max(pd, kt)
            e1 = math.exp(pd - q)
            e2 = math.exp(kt - q)
            da = e1 * (da - a)
            db = e1 * (db - b)
            a = e1 * a + e2 * v[lane, t]
            b = e1 * b + e2
            p = q

        p = -np.inf
        a = 0.0
        b = 0.0
        da = 0.0
        db = 0.0
        dlam = 0.0
        for t in range(T - 1, -1, -1):
            kt = k[lane, t]
            d = uu + kt
            q = max(max(pf[t], p), d)
            ef = math.exp(pf[t] - q)
            eb = math.exp(p - q)
            ed = math.exp(d - q)
            num = ef * af[t] + eb * a + ed * v[lane, t]
            den = ef * bf[t] + eb * b + ed
            yt = num / den
            y[t] = yt
            logd[t] = q + math.log(den)
            dnum = ef * daf[t] + eb * da
            dden = ef * dbf[t] + eb * db
            g = gy[lane, t]
            dlam += g * (dnum - yt * dden) / den
            pii = ed / den
            gu[lane] += g * pii * (v[lane, t] - yt)
            pd = p - lam
            q = max(pd, kt)
            e1 = math.exp(pd - q)
            e2 = math.exp(kt - q)
            da = e1 * (da - a)
            db = e1 * (db - b)
            a = e1 * a + e2 * v[lane, t]
            b = e1 * b + e2
            p = q
        gw[lane] += dlam / T

        # sum_{t != i} exp(b(t,i) w - logD_t) * {g_t, g_t y_t}
        p = -np.inf
        sg = 0.0
        sh = 0.0
        for t in range(T):
            qf[t] = p
            sgf[t] = sg
            shf[t] = sh
            pd = p - lam
            key = -logd[t]
            q = max(pd, key)
            e1 = math.exp(pd - q)
            e2 = math.exp(key - q)
            g = gy[lane, t]
            sg = e1 * sg + e2 * g
            sh = e1 * sh + e2 * g * y[t]
            p = q
        p = -np.inf
        sg = 0.0
        sh = 0.0
        for t in range(T - 1, -1, -1):
            kt = k[lane, t]
            g = gy[lane, t]
            pii = math.exp(uu + kt - logd[t])
            vt = v[lane, t]
            q = max(qf[t], p)
            if q == -np.inf:
                off_g = 0.0
                off_h = 0.0
            else:
                ef = math.exp(qf[t] - q)
                eb = math.exp(p - q)
                scale = math.exp(kt + q)
                off_g = scale * (ef * sgf[t] + eb * sg)
                off_h = scale * (ef * shf[t] + eb * sh)
            dv = off_g + g * pii
            gv[lane, t] = dv
            gk[lane, t] = vt * dv - (off_h + g * y[t] * pii)
            pd = p - lam
            key = -logd[t]
            q = max(pd, key)
            e1 = math.exp(pd - q)
            e2 = math.exp(key - q)
            sg = e1 * sg + e2 * g
            sh = e1 * sh + e2 * g * y[t]
            p = q


def _lanes64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def wkv_forward(k, v, w, u):
    """Linear-time BiWKV over lanes.

    ``k``, ``v`` are ``(L, T)``; ``w``, ``u`` are ``(L,)``. Accumulation is
    float64; the result has the dtype of ``v``.
    """
    k64 = _lanes64(k)
    v64 = _lanes64(v)
    y = np.empty_like(k64)
    _scan_forward(k64, v64, _lanes64(w), _lanes64(u), y)
    return y.astype(np.asarray(v).dtype, copy=False)


def wkv_backward(k, v, w, u, gy):
    """Gradients of :func:`wkv_forward`: ``(gk, gv, gw, gu)`` per lane."""
    k64 = _lanes64(k)
    gk = np.empty_like(k64)
    gv = np.empty_like(k64)
    L = k64.shape[0]
    gw = np.zeros(L)
    gu = np.zeros(L)
    _scan_backward(k64, _lanes64(v), _lanes64(w), _lanes64(u), _lanes64(gy), gk, gv, gw, gu)
    dt = np.asarray(v).dtype
    return gk.astype(dt, copy=False), gv.astype(dt, copy=False), gw, gu


def _to_lanes(a):
    B, T, C = a.shape
    return a.transpose(0, 2, 1).reshape(B * C, T)


def _from_lanes(a, B, C):
    T = a.shape[1]
    return a.reshape(B, C, T).transpose(0, 2, 1)


def biwkv_scan(k, v, w, u):
    """Linear-time BiWKV on ``(B, T, C)`` sequences; same value as :func:`biwkv_reference`."""
    k, v, w, u = _check_seq(k, v, w, u)
    B, T, C = k.shape
    y = wkv_forward(_to_lanes(k), _to_lanes(v), np.tile(w, B), np.tile(u, B))
    return _from_lanes(y, B, C)


def biwkv_backward(k, v, w, u, gy):
    """Linear-time gradients on ``(B, T, C)`` sequences.

    Returns ``(grad_k, grad_v, grad_w, grad_u)``; ``grad_w`` and ``grad_u``
    are summed over the batch.
    """
    k, v, w, u = _check_seq(k, v, w, u)
    B, T, C = k.shape
    gk, gv, gw, gu = wkv_backward(
        _to_lanes(k), _to_lanes(v), np.tile(w, B), np.tile(u, B), _to_lanes(np.asarray(gy))
    )
    return (
        _from_lanes(gk, B, C),
        _from_lanes(gv, B, C),
        gw.reshape(B, C).sum(axis=0),
        gu.reshape(B, C).sum(axis=0),
    )


def init_decay(channels):
    """Per-channel decay, linearly spaced over [-1, 1]."""
    if channels == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, channels)


def init_bonus(channels):
    return 0.5 + 0.05 * ((np.arange(channels) % 4) - 1.5)
