"""Fast invariant suite behind ``crwkv selftest``.

Each check returns a named pass/fail with the measured metric. Checks are
grouped by the prefix before the first dot (``wkv``, ``grad``, ``fft``,
``cts``, ``metrics``) for ``--filter``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from . import numerics as N
from . import oracles, shift, wkv
from .blocks import CMix, CRM, FMix


@dataclass
class CheckResult:
    name: str
    passed: bool
    metric: float
    tolerance: float


def _rel(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def check_scan_vs_reference(scan, instances=50):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(instances):
        T = int(rng.integers(1, 65))
        C = int(rng.integers(1, 9))
        k = rng.standard_normal((1, T, C))
        v = rng.standard_normal((1, T, C))
        w = rng.standard_normal(C)
        u = rng.standard_normal(C)
        worst = max(worst, _rel(scan(k, v, w, u), wkv.biwkv_reference(k, v, w, u)))
    return worst, 1e-10


def check_reversal(scan, instances=20):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(instances):
        T = int(rng.integers(2, 65))
        k = rng.standard_normal((1, T, 3))
        v = rng.standard_normal((1, T, 3))
        w = rng.standard_normal(3)
        u = rng.standard_normal(3)
        fwd = scan(k, v, w, u)
        rev = scan(k[:, ::-1], v[:, ::-1], w, u)[:, ::-1]
        worst = max(worst, float(np.max(np.abs(fwd - rev))))
    return worst, 1e-6


def check_direct_formula(scan):
    k = [0.1, -0.2, 0.3]
    v = [1.0, 2.0, 3.0]
    expected = oracles.direct_biwkv(k, v, 0.5, 0.2)
    got = scan(np.array(k).reshape(1, 3, 1), np.array(v).reshape(1, 3, 1), [0.5], [0.2])
    return _rel(got.ravel(), expected), 1e-10


def check_wkv_gradients():
    rng = np.random.default_rng(13)
    k = rng.standard_normal((1, 5, 2))
    v = rng.standard_normal((1, 5, 2))
    w = rng.standard_normal(2)
    u = rng.standard_normal(2)
    gy = rng.standard_normal((1, 5, 2))
    gk, gv, gw, gu = wkv.biwkv_backward(k, v, w, u, gy)
    f = lambda: float(np.sum(gy * wkv.biwkv_reference(k, v, w, u)))
    worst = 0.0
    for analytic, arr in ((gk, k), (gv, v), (gw, w), (gu, u)):
        worst = max(worst, N.relative_error(analytic, oracles.finite_difference(f, arr)))
    return worst, 1e-4


def _module_grad(factory, shape):
    rng = np.random.default_rng(14)
    module = factory(rng)
    errs = N.gradcheck(module, rng.standard_normal(shape), rng, max_coords=6)
    return max(errs.values()), 1e-4


def check_fft_roundtrip():
    x = np.random.default_rng(15).standard_normal((2, 3, 8, 6))
    back, _ = N.ifft2d(N.fft2d(x))
    return _rel(back, x), 1e-6


def check_fft_naive():
    x = np.zeros((4, 4))
    x[1, 2] = 1.0
    x += np.random.default_rng(16).standard_normal((4, 4))
    return _rel(N.fft2d(x), oracles.naive_dft2(x)), 1e-6


def check_parseval():
    x = np.random.default_rng(17).standard_normal((1, 2, 8, 8))
    lhs = np.sum(np.abs(N.fft2d(x)) ** 2)
    rhs = 64 * np.sum(x * x)
    return abs(lhs - rhs) / rhs, 1e-5


def check_cts_partition():
    D12 = shift.dictionary_for("cts")
    spans = shift.partition_channels(D12, 48)
    counts = [n for _, _, n in spans]
    bad = 0.0 if counts == [6] * 4 + [3] * 8 else 1.0
    for C in range(12, 257):
        sp = shift.partition_channels(D12, C)
        pos = 0
        for _, start, n in sp:
            if start != pos or n < 0:
                bad = 1.0
            pos += n
        if pos != C:
            bad = 1.0
    return bad, 0.0


def check_cts_identity():
    x = np.random.default_rng(18).standard_normal((1, 12, 6, 6))
    return float(np.max(np.abs(shift.cts(x, shift.dictionary_for("cts"), 0.0) - x))), 0.0


def check_psnr_closed_form():
    a = np.full((8, 8, 3), 0.5)
    return abs(D.psnr(a + 1 / 255, a) - 48.1308036), 0.01


def check_ssim_identity():
    a = np.random.default_rng(19).random((16, 16, 3))
    return abs(D.ssim(a, a) - 1.0), 0.0


def _metric_pair():
    rng = np.random.default_rng(20)
    a = rng.random((13, 14, 3))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    return a, b


def check_psnr_oracle():
    a, b = _metric_pair()
    return abs(D.psnr(a, b) - oracles.naive_psnr(a, b)), 1e-6


def check_ssim_oracle():
    a, b = _metric_pair()
    return abs(D.ssim(a, b) - oracles.naive_ssim(a, b)), 1e-4


def all_checks(scan=wkv.biwkv_scan):
    f64 = np.float64
    return [
        ("wkv.scan_vs_reference", lambda: check_scan_vs_reference(scan)),
        ("wkv.direct_formula", lambda: check_direct_formula(scan)),
        ("wkv.reversal", lambda: check_reversal(scan)),
        ("wkv.gradients", check_wkv_gradients),
        ("grad.linear", lambda: _module_grad(lambda r: N.Linear(3, 4, r, f64), (2, 3, 2, 2))),
        ("grad.conv2d", lambda: _module_grad(lambda r: N.Conv2d(2, 3, 3, r, stride=2, padding=1, dtype=f64), (1, 2, 5, 5))),
        ("grad.layer_norm", lambda: _module_grad(lambda r: N.LayerNorm(4, f64), (2, 4, 3, 3))),
        ("grad.crm", lambda: _module_grad(lambda r: CRM(4, r, dtype=f64), (1, 4, 4, 4))),
        ("grad.cmix", lambda: _module_grad(lambda r: CMix(4, r, dtype=f64), (1, 4, 4, 4))),
        ("grad.fmix", lambda: _module_grad(lambda r: FMix(2, r, dtype=f64), (1, 2, 4, 4))),
        ("fft.roundtrip", check_fft_roundtrip),
        ("fft.naive_dft", check_fft_naive),
        ("fft.parseval", check_parseval),
        ("cts.partition", check_cts_partition),
        ("cts.identity", check_cts_identity),
        ("metrics.psnr_closed_form", check_psnr_closed_form),
        ("metrics.ssim_identity", check_ssim_identity),
        ("metrics.psnr_oracle", check_psnr_oracle),
        ("metrics.ssim_oracle", check_ssim_oracle),
    ]


def run_selftest(filter=None, scan=wkv.biwkv_scan):
    """Run every check whose name starts with ``filter`` (all if None)."""
    results = []
    for name, fn in all_checks(scan):
        if filter and not name.startswith(filter):
            continue
        try:
            metric, tol = fn()
            passed = bool(np.isfinite(metric) and metric <= tol)
        except Exception:
            metric, tol, passed = float("nan"), float("nan"), False
        results.append(CheckResult(name, passed, float(metric), float(tol)))
    return results


def format_table(results):
    width = max((len(r.name) for r in results), default=10)
    lines = [f"{'check':<{width}}  status  metric      tolerance"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.metric:<10.3e}  {r.tolerance:.1e}")
    return "\n".join(lines)


def write_csv(results, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["check", "passed", "metric", "tolerance"])
        for r in results:
            w.writerow([r.name, int(r.passed), f"{r.metric:.6e}", f"{r.tolerance:.1e}"])
