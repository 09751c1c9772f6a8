"""Composite blocks: spatial mix (CRM), channel mix (CMix), frequency mix (FMix)
and the residual wrapper (CRB) that pairs one of the first or third with a CMix.

All blocks map ``(B, C, H, W) -> (B, C, H, W)``.
"""

from __future__ import annotations

import numpy as np

from . import wkv
from .numerics import (
    DEFAULT_DTYPE,
    LEAKY_SLOPE,
    LayerNorm,
    LeakyReLU,
    Linear,
    Module,
    Parameter,
    Sigmoid,
    SquaredReLU,
    fft2d,
    ifft2d,
)
from .shift import TokenShift


class CRM(Module):
    """Spatial mixing: ``sigmoid(r) * Norm(BiWKV(k, v))`` on a shared token shift.

    Pixels are flattened row-major into the token axis.
    """

    def __init__(self, channels, rng, shift="cts", dtype=DEFAULT_DTYPE):
        C = channels
        self.shift = TokenShift(shift, dtype)
        # bias-free: a per-channel constant added to k cancels inside BiWKV
        self.receptance = Linear(C, C, rng, dtype, bias=False)
        self.key = Linear(C, C, rng, dtype, bias=False)
        self.value = Linear(C, C, rng, dtype, bias=False)
        self.decay = Parameter(wkv.init_decay(C).astype(dtype), decay=False)
        self.bonus = Parameter(wkv.init_bonus(C).astype(dtype), decay=False)
        self.norm = LayerNorm(C, dtype)
        self.gate = Sigmoid()

    def forward(self, x):
        B, C, H, W = x.shape
        xs = self.shift(x)
        r = self.receptance(xs)
        k = self.key(xs).reshape(B * C, H * W)
        v = self.value(xs).reshape(B * C, H * W)
        w = np.tile(self.decay.data, B)
        u = np.tile(self.bonus.data, B)
        self._wkv_in = (k, v, w, u)
        a = wkv.wkv_forward(k, v, w, u).reshape(B, C, H, W)
        self._n = self.norm(a)
        self._g = self.gate(r)
        return self._g * self._n

    def backward(self, dy):
        B, C, H, W = dy.shape
        dg = dy * self._n
        dn = dy * self._g
        dr = self.gate.backward(dg)
        da = self.norm.backward(dn).reshape(B * C, H * W)
        gk, gv, gw, gu = wkv.wkv_backward(*self._wkv_in, da)
        self.decay.grad += gw.reshape(B, C).sum(axis=0).astype(self.decay.grad.dtype)
        self.bonus.grad += gu.reshape(B, C).sum(axis=0).astype(self.bonus.grad.dtype)
        dxs = self.receptance.backward(dr)
        dxs += self.key.backward(gk.reshape(B, C, H, W))
        dxs += self.value.backward(gv.reshape(B, C, H, W))
        return self.shift.backward(dxs)


class CMix(Module):
    """Channel mixing: ``sigmoid(L(shift_r(z))) * Norm(P(relu(L_k(shift_k(z)))^2))``.

    ``L_k`` expands to ``expansion * C`` channels and ``P`` projects back.
    """

    def __init__(self, channels, rng, shift="cts", expansion=4, dtype=DEFAULT_DTYPE):
        C = channels
        hidden = expansion * C
        self.shift_r = TokenShift(shift, dtype)
        self.shift_k = TokenShift(shift, dtype)
        self.receptance = Linear(C, C, rng, dtype)
        self.key = Linear(C, hidden, rng, dtype)
        self.value = Linear(hidden, C, rng, dtype)
        self.norm = LayerNorm(C, dtype)
        self.gate = Sigmoid()
        self.act = SquaredReLU()

    def forward(self, z):
        g = self.gate(self.receptance(self.shift_r(z)))
        h = self.value(self.act(self.key(self.shift_k(z))))
        n = self.norm(h)
        self._g, self._n = g, n
        return g * n

    def backward(self, dy):
        dz = self.shift_r.backward(self.receptance.backward(self.gate.backward(dy * self._n)))
        dh = self.norm.backward(dy * self._g)
        dz += self.shift_k.backward(self.key.backward(self.act.backward(self.value.backward(dh))))
        return dz


class FMix(Module):
    """Frequency mixing: ``Norm(Re(iFFT(LReLU(Linear(FFT(x))))) * x)``.

    The complex spectrum is stacked as ``2C`` real channels (real parts, then
    imaginary parts) and mixed by one dense ``2C -> 2C`` map per frequency.
    """

    def __init__(self, channels, rng, slope=LEAKY_SLOPE, dtype=DEFAULT_DTYPE):
        self.freq = Linear(2 * channels, 2 * channels, rng, dtype)
        self.act = LeakyReLU(slope)
        self.norm = LayerNorm(channels, dtype)

    def forward(self, x):
        C = x.shape[1]
        xf = fft2d(x)
        stacked = np.concatenate([xf.real, xf.imag], axis=1).astype(x.dtype, copy=False)
        z = self.act(self.freq(stacked))
        s, _ = ifft2d(z[:, :C] + 1j * z[:, C:])
        s = s.astype(x.dtype, copy=False)
        self._x, self._s = x, s
        return self.norm(s * x)

    def backward(self, dy):
        x, s = self._x, self._s
        B, C, H, W = x.shape
        N = H * W
        dp = self.norm.backward(dy)
        ds = dp * x
        dx = dp * s
        dsf = fft2d(ds) / N
        dz = np.concatenate([dsf.real, dsf.imag], axis=1).astype(x.dtype, copy=False)
        dstack = self.freq.backward(self.act.backward(dz))
        dxf = dstack[:, :C] + 1j * dstack[:, C:]
        dx += (np.fft.ifft2(dxf, axes=(-2, -1)).real * N).astype(x.dtype, copy=False)
        return dx


class CRB(Module):
    """Residual block pairing FMix or CRM with CMix.

    ``fmix`` kind::

        z1  = Norm(FMix(x)) + a1 * x
        out = Norm(CMix(z1)) + a2 * z1

    ``crm`` kind is identical with CRM in place of FMix. ``a1`` and ``a2`` are
    learnable scalars initialized to 1.
    """

    def __init__(
        self,
        channels,
        kind,
        rng,
        shift="cts",
        expansion=4,
        cts_in_crm=True,
        cts_in_cmix=True,
        dtype=DEFAULT_DTYPE,
    ):
        if kind not in ("fmix", "crm"):
            raise ValueError(f"block kind must be 'fmix' or 'crm', got {kind!r}")
        self.kind = kind
        if kind == "fmix":
            self.mixer = FMix(channels, rng, dtype=dtype)
        else:
            self.mixer = CRM(channels, rng, shift if cts_in_crm else "none", dtype)
        self.norm1 = LayerNorm(channels, dtype)
        self.cmix = CMix(channels, rng, shift if cts_in_cmix else "none", expansion, dtype)
        self.norm2 = LayerNorm(channels, dtype)
        self.scale1 = Parameter(np.ones(1, dtype=dtype), decay=False)
        self.scale2 = Parameter(np.ones(1, dtype=dtype), decay=False)

    def forward(self, x):
        self._x = x
        z1 = self.norm1(self.mixer(x)) + self.scale1.data * x
        self._z1 = z1
        return self.norm2(self.cmix(z1)) + self.scale2.data * z1

    def backward(self, dy):
        self.scale2.grad += np.sum(dy * self._z1)
        dz1 = self.cmix.backward(self.norm2.backward(dy)) + self.scale2.data * dy
        self.scale1.grad += np.sum(dz1 * self._x)
        return self.mixer.backward(self.norm1.backward(dz1)) + self.scale1.data * dz1
