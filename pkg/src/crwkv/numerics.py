"""Differentiable numerical substrate.

Every learnable piece of the network is a :class:`Module` whose ``forward``
caches what ``backward`` needs. ``backward`` takes the upstream gradient,
accumulates parameter gradients into ``Parameter.grad`` and returns the
gradient with respect to the input. Feature maps are ``(B, C, H, W)`` arrays.

The functional ops (``linear``, ``conv2d``, ``layer_norm``, ``fft2d`` ...)
are usable on their own; the modules are thin stateful wrappers around them.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32
LEAKY_SLOPE = 0.2
LN_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when array shapes do not satisfy an op's contract."""


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------


def linear(x, weight, bias=None):
    """Per-position affine map over the channel axis.

    Parameters
    ----------
    x : ndarray, shape (B, C_in, H, W)
    weight : ndarray, shape (C_in, C_out)
    bias : ndarray, shape (C_out,), optional

    Returns
    -------
    ndarray, shape (B, C_out, H, W)
    """
    if x.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}"
        )
    B, C, H, W = x.shape
    y = np.matmul(weight.T, x.reshape(B, C, H * W))
    if bias is not None:
        y += bias[None, :, None]
    return y.reshape(B, weight.shape[1], H, W)


def linear_backward(dy, x, weight, with_bias=True):
    B, C, H, W = x.shape
    Co = weight.shape[1]
    xf = x.reshape(B, C, H * W)
    dyf = dy.reshape(B, Co, H * W)
    dx = np.matmul(weight, dyf).reshape(x.shape)
    dw = np.einsum("bcn,bon->co", xf, dyf)
    db = dyf.sum(axis=(0, 2)) if with_bias else None
    return dx, dw, db


def _conv_out_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _check_conv(x, kernel, stride, padding):
    if stride <= 0:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be non-negative, got {padding}")
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"conv2d: input shape {x.shape} incompatible with kernel shape {kernel.shape}"
        )
    k = kernel.shape[2]
    H, W = x.shape[2:]
    if k > H + 2 * padding or kernel.shape[3] > W + 2 * padding:
        raise ValueError(
            f"conv2d: kernel {kernel.shape[2:]} larger than padded input {(H + 2 * padding, W + 2 * padding)}"
        )


def _im2col(x, kh, kw, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    B, C, Ho, Wo = win.shape[:4]
    # (B, Ho, Wo, C, kh, kw) flattened to rows of patches
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    return cols, Ho, Wo


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2-D cross-correlation with zero padding.

    ``kernel`` has shape ``(C_out, C_in, kh, kw)``. Output spatial size is
    ``(H + 2*padding - k) // stride + 1`` per axis.
    """
    _check_conv(x, kernel, stride, padding)
    Co, Ci, kh, kw = kernel.shape
    B = x.shape[0]
    cols, Ho, Wo = _im2col(x, kh, kw, stride, padding)
    y = cols @ kernel.reshape(Co, -1).T
    if bias is not None:
        y += bias
    return y.reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2)


def conv2d_backward(dy, x, kernel, stride=1, padding=0, with_bias=True):
    Co, Ci, kh, kw = kernel.shape
    B, C, H, W = x.shape
    Ho, Wo = dy.shape[2:]
    cols, _, _ = _im2col(x, kh, kw, stride, padding)
    dyr = dy.transpose(0, 2, 3, 1).reshape(-1, Co)
    dk = (dyr.T @ cols).reshape(kernel.shape)
    db = dyr.sum(axis=0) if with_bias else None
    dxp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("bohw,oc->bchw", dy, kernel[:, :, i, j], optimize=True)
            dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += contrib
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp, dk, db


def layer_norm(x, gamma, beta, eps=LN_EPS):
    """Normalize the channel vector at every spatial position.

    Returns the output and a cache tuple for :func:`layer_norm_backward`.
    """
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return y, (xhat, rstd)


def layer_norm_backward(dy, gamma, cache):
    xhat, rstd = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    g = dy * gamma[None, :, None, None]
    dx = rstd * (
        g - g.mean(axis=1, keepdims=True) - xhat * (g * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x >= 0, x, slope * x)


def squared_relu(x):
    r = np.maximum(x, 0)
    return r * r


def fft2d(x):
    """Unnormalized forward DFT over the two trailing (spatial) axes."""
    return np.fft.fft2(x, axes=(-2, -1))


def ifft2d(z):
    """Inverse DFT with ``1/(H*W)`` scaling.

    Returns
    -------
    real : ndarray
        Real part of the inverse transform.
    residual : float
        Largest absolute imaginary component that was discarded.
    """
    s = np.fft.ifft2(z, axes=(-2, -1))
    residual = float(np.max(np.abs(s.imag))) if s.size else 0.0
    return s.real, residual


def pixel_shuffle(x, r=2):
    B, C, H, W = x.shape
    if C % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {C} not divisible by {r * r}")
    c = C // (r * r)
    return x.reshape(B, c, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, c, H * r, W * r)


def pixel_unshuffle(x, r=2):
    B, c, Hr, Wr = x.shape
    H, W = Hr // r, Wr // r
    return x.reshape(B, c, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, c * r * r, H, W)


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------


class Parameter:
    """A learnable array and its accumulated gradient.

    ``decay`` marks whether AdamW applies weight decay to it.
    """

    __slots__ = ("data", "grad", "decay")

    def __init__(self, data, decay=True):
        self.data = data
        self.grad = np.zeros_like(data)
        self.decay = decay

    @property
    def shape(self):
        return self.data.shape


class Module:
    """Base class: recursive parameter discovery in attribute order."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, c_in, c_out, rng, dtype=DEFAULT_DTYPE, bias=True):
        self.weight = Parameter(uniform_init(rng, (c_in, c_out), c_in, dtype))
        self.bias = Parameter(uniform_init(rng, (c_out,), c_in, dtype)) if bias else None
        self._x = None

    def forward(self, x):
        self._x = x
        return linear(x, self.weight.data, None if self.bias is None else self.bias.data)

    def backward(self, dy):
        dx, dw, db = linear_backward(dy, self._x, self.weight.data, self.bias is not None)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, dtype=DEFAULT_DTYPE):
        fan_in = c_in * k * k
        self.weight = Parameter(uniform_init(rng, (c_out, c_in, k, k), fan_in, dtype))
        self.bias = Parameter(uniform_init(rng, (c_out,), fan_in, dtype))
        self.stride = stride
        self.padding = padding
        self._x = None

    def forward(self, x):
        self._x = x
        return conv2d(x, self.weight.data, self.bias.data, self.stride, self.padding)

    def backward(self, dy):
        dx, dk, db = conv2d_backward(dy, self._x, self.weight.data, self.stride, self.padding)
        self.weight.grad += dk
        self.bias.grad += db
        return dx


class LayerNorm(Module):
    def __init__(self, channels, dtype=DEFAULT_DTYPE, eps=LN_EPS):
        self.gamma = Parameter(np.ones(channels, dtype=dtype), decay=False)
        self.beta = Parameter(np.zeros(channels, dtype=dtype), decay=False)
        self.eps = eps
        self._cache = None

    def forward(self, x):
        y, self._cache = layer_norm(x, self.gamma.data, self.beta.data, self.eps)
        return y

    def backward(self, dy):
        dx, dg, db = layer_norm_backward(dy, self.gamma.data, self._cache)
        self.gamma.grad += dg
        self.beta.grad += db
        return dx


class Sigmoid(Module):
    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, dy):
        return dy * self._y * (1 - self._y)


class LeakyReLU(Module):
    def __init__(self, slope=LEAKY_SLOPE):
        self.slope = slope

    def forward(self, x):
        self._mask = x >= 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, dy):
        return np.where(self._mask, dy, self.slope * dy)


class SquaredReLU(Module):
    def forward(self, x):
        self._r = np.maximum(x, 0)
        return self._r * self._r

    def backward(self, dy):
        return 2 * self._r * dy


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def relative_error(analytic, numeric):
    """Largest absolute deviation, scaled by the magnitude of the gradient array."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradcheck(module, inputs, rng, h_scale=1e-5, max_coords=12, check_inputs=True):
    """Compare a module's analytic gradients with central finite differences.

    The scalar objective is ``sum(upstream * module(*inputs))`` for a fixed
    random ``upstream``. At most ``max_coords`` coordinates per array are
    probed. Returns ``{name: relative_error}`` covering every parameter and,
    if ``check_inputs``, every input (named ``input.<i>``).
    """
    if not isinstance(inputs, (list, tuple)):
        inputs = [inputs]
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    out = module(*inputs)
    upstream = rng.standard_normal(out.shape)

    module.zero_grad()
    module(*inputs)
    dins = module.backward(upstream)
    if not isinstance(dins, (list, tuple)):
        dins = [dins]

    def objective():
        return float(np.sum(upstream * module(*inputs)))

    def probe(array, analytic):
        flat = array.reshape(-1)
        n = flat.size
        idx = rng.choice(n, size=min(n, max_coords), replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            h = h_scale * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = objective()
            flat[i] = orig - h
            fm = objective()
            flat[i] = orig
            num[j] = (fp - fm) / (2 * h)
        return relative_error(analytic.reshape(-1)[idx], num)

    errors = {}
    for name, p in module.named_parameters():
        errors[name] = probe(p.data, p.grad.copy())
    if check_inputs:
        for i, (a, g) in enumerate(zip(inputs, dins)):
            errors[f"input.{i}"] = probe(a, g)
    return errors
