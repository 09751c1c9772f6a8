"""Token shifts over a fixed offset dictionary.

A shift fills contiguous channel spans of an output map with spatially
displaced copies of the input (one span per offset, zero fill at borders)
and blends the result with the input: ``omega * o + (1 - omega) * x``.

Channel budget per offset is proportional to ``1 / manhattan(offset)``.
Displacement convention: output pixel ``(y, x)`` of an offset-``(dy, dx)``
span reads input pixel ``(y - dy, x - dx)``, so ``(0, 1)`` pulls in the
previous pixel of the row.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .numerics import DEFAULT_DTYPE, Module, Parameter, sigmoid

VARIANTS = ("uni", "bi", "quad", "cts", "cts_plus", "none")


class OffsetDictionary:
    """Ordered set of non-zero 2-D offsets weighted by inverse Manhattan distance."""

    def __init__(self, offsets):
        offsets = [tuple(int(c) for c in o) for o in offsets]
        if not offsets:
            raise ValueError("offset dictionary is empty")
        if any(o == (0, 0) for o in offsets):
            raise ValueError("offset dictionary contains the zero offset")
        if len(set(offsets)) != len(offsets):
            raise ValueError("offset dictionary contains duplicate offsets")
        self.offsets = offsets

    def __len__(self):
        return len(self.offsets)

    def __iter__(self):
        return iter(self.offsets)

    def distances(self):
        return [abs(dy) + abs(dx) for dy, dx in self.offsets]

    def weights(self):
        return [Fraction(1, d) for d in self.distances()]

    def p_sum(self):
        return sum(self.weights())

    def reach(self):
        return max(max(abs(dy), abs(dx)) for dy, dx in self.offsets)

    def __repr__(self):
        return f"OffsetDictionary({self.offsets})"


def manhattan_ring(d):
    """All offsets at Manhattan distance exactly ``d``: axis-aligned first, then diagonals."""
    axis = [(0, d), (0, -d), (d, 0), (-d, 0)]
    diag = []
    for dy in range(1, d):
        dx = d - dy
        diag += [(dy, dx), (dy, -dx), (-dy, dx), (-dy, -dx)]
    return axis + diag


CTS_OFFSETS = manhattan_ring(1) + manhattan_ring(2)
CTS_PLUS_OFFSETS = CTS_OFFSETS + [(0, 3), (0, -3), (3, 0), (-3, 0)]
BASELINE_OFFSETS = {
    "uni": [(0, 1)],
    "bi": [(0, 1), (0, -1)],
    "quad": [(0, 1), (0, -1), (1, 0), (-1, 0)],
    "cts": CTS_OFFSETS,
    "cts_plus": CTS_PLUS_OFFSETS,
}


def dictionary_for(variant):
    if variant not in BASELINE_OFFSETS:
        raise ValueError(f"unknown shift variant {variant!r}; expected one of {VARIANTS}")
    return OffsetDictionary(BASELINE_OFFSETS[variant])


def partition_channels(D, C):
    """Assign a contiguous channel span to every offset.

    Span size is ``floor(C * w_p / p_sum)`` computed exactly; the final span
    absorbs the rounding residue so the spans cover ``[0, C)``.

    Returns
    -------
    list of (offset, start, count)
    """
    if C <= 0:
        raise ValueError(f"channel count must be positive, got {C}")
    k = Fraction(C) / D.p_sum()
    sizes = [int(k * w) for w in D.weights()]
    sizes[-1] += C - sum(sizes)
    spans = []
    start = 0
    for offset, n in zip(D, sizes):
        spans.append((offset, start, n))
        start += n
    return spans


def _shift_into(out, src, dy, dx):
    """``out[..., y, x] = src[..., y - dy, x - dx]`` where in range (``out`` pre-zeroed)."""
    H, W = src.shape[-2:]
    if abs(dy) >= H or abs(dx) >= W:
        return
    ys, yd = (slice(0, H - dy), slice(dy, H)) if dy >= 0 else (slice(-dy, H), slice(0, H + dy))
    xs, xd = (slice(0, W - dx), slice(dx, W)) if dx >= 0 else (slice(-dx, W), slice(0, W + dx))
    out[..., yd, xd] = src[..., ys, xs]


def shifted(x, spans):
    """The pure shifted map ``o``: every span filled from its displaced channels."""
    o = np.zeros_like(x)
    for (dy, dx), start, n in spans:
        if n:
            _shift_into(o[:, start : start + n], x[:, start : start + n], dy, dx)
    return o


def shifted_backward(do, spans):
    """Adjoint of :func:`shifted`: move each span's gradient back by its offset."""
    dx = np.zeros_like(do)
    for (dy, dxo), start, n in spans:
        if n:
            _shift_into(dx[:, start : start + n], do[:, start : start + n], -dy, -dxo)
    return dx


def cts(x, D, omega):
    """Context-guided token shift with a fixed blend weight ``omega``.

    Offsets reaching past the map border contribute all-zero spans.
    """
    o = shifted(x, partition_channels(D, x.shape[1]))
    return omega * o + (1 - omega) * x


def baseline_shift(x, variant, omega):
    """Uni-, Bi- or Quad-shift (or either CTS dictionary) blended with ``omega``."""
    return cts(x, dictionary_for(variant), omega)


class TokenShift(Module):
    """Learnable-blend token shift; ``omega = sigmoid(raw)`` stays in [0, 1].

    ``variant="none"`` is the identity map with no parameters (for ablations
    that drop the shift).
    """

    def __init__(self, variant="cts", dtype=DEFAULT_DTYPE):
        self.variant = variant
        if variant == "none":
            self.dictionary = None
        else:
            self.dictionary = dictionary_for(variant)
            self.omega_raw = Parameter(np.zeros(1, dtype=dtype), decay=False)

    @property
    def omega(self):
        return float(sigmoid(self.omega_raw.data)[0])

    def forward(self, x):
        if self.dictionary is None:
            return x
        self._spans = partition_channels(self.dictionary, x.shape[1])
        self._x = x
        self._o = shifted(x, self._spans)
        om = sigmoid(self.omega_raw.data)
        self._om = om
        return om * self._o + (1 - om) * x

    def backward(self, dy):
        if self.dictionary is None:
            return dy
        om = self._om
        domega = np.sum(dy * (self._o - self._x))
        self.omega_raw.grad += domega * om * (1 - om)
        return om * shifted_backward(dy, self._spans) + (1 - om) * dy
