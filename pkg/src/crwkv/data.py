"""Images, noise synthesis, patches, quality metrics and feature spectra.

Images live in memory as float arrays ``(H, W, 3)`` in [0, 1] and on disk as
8-bit RGB PNG.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy.signal import convolve2d

log = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
PSNR_CAP = 100.0
SPECTRUM_FLOOR = -30.0


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------


def _png_bit_depth(path):
    with open(path, "rb") as f:
        head = f.read(33)
    if len(head) < 33 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise OSError(f"{path}: not a PNG file")
    return head[24]


def load_png(path):
    """Read an 8-bit PNG as an ``(H, W, 3)`` float32 array in [0, 1]."""
    path = Path(path)
    depth = _png_bit_depth(path)
    if depth != 8:
        raise OSError(f"{path}: unsupported PNG bit depth {depth} (only 8-bit is supported)")
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as exc:  # PIL raises a zoo of types on corrupt data
        raise OSError(f"{path}: cannot decode PNG ({exc})") from exc
    return arr.astype(np.float32) / 255.0


def to_uint8(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(img)).save(path, format="PNG")


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """``kind`` is ``awgn``, ``poisson`` or ``mixed`` (Poisson then AWGN).

    ``sigma`` is on the 0-255 scale; ``peak`` is the photon count at intensity 1.
    """

    kind: str = "mixed"
    sigma: float = 10.0
    peak: float = 255.0

    def __post_init__(self):
        if self.kind not in ("awgn", "poisson", "mixed"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.peak <= 0:
            raise ValueError("peak must be positive")


def add_noise(clean, spec, seed):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = np.asarray(clean, dtype=np.float64)
    if spec.kind in ("poisson", "mixed"):
        y = rng.poisson(y * spec.peak) / spec.peak
    if spec.kind in ("awgn", "mixed") and spec.sigma > 0:
        y = y + rng.normal(0.0, spec.sigma / 255.0, size=y.shape)
    return np.clip(y, 0.0, 1.0).astype(np.asarray(clean).dtype)


# ---------------------------------------------------------------------------
# patches and augmentation
# ---------------------------------------------------------------------------


def extract_patches(img, size=128, count=None):
    """Non-overlapping ``size x size`` grid crops in row-major order."""
    H, W = img.shape[:2]
    if H < size or W < size:
        log.warning("image %sx%s smaller than patch size %s; skipped", H, W, size)
        return []
    patches = []
    for y in range(0, H - size + 1, size):
        for x in range(0, W - size + 1, size):
            if count is not None and len(patches) >= count:
                return patches
            patches.append(img[y : y + size, x : x + size])
    return patches


def dihedral(patch, index):
    """Element ``index`` (0-7) of the dihedral group: ``index % 4`` quarter turns, then a flip if ``index >= 4``."""
    out = np.rot90(patch, index % 4, axes=(0, 1))
    if index >= 4:
        out = out[:, ::-1]
    return out


def dihedral_inverse(patch, index):
    out = patch
    if index >= 4:
        out = out[:, ::-1]
    return np.rot90(out, -(index % 4), axes=(0, 1))


def augment(patch, seed):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.ascontiguousarray(dihedral(patch, int(rng.integers(8))))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def psnr(a, b):
    """PSNR in dB for data in [0, 1]; capped at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse < 1e-10:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range=1.0, K1=0.01, K2=0.03, win_size=11, sigma=1.5):
    """Mean SSIM over the valid window positions, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < win_size:
        raise ValueError(f"ssim: image {a.shape[:2]} smaller than the {win_size}x{win_size} window")
    win = gaussian_window(win_size, sigma)[::-1, ::-1]
    C1 = (K1 * data_range) ** 2
    C2 = (K2 * data_range) ** 2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]

        def filt(z):
            return convolve2d(z, win, mode="valid")

        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        num = (2 * mx * my + C1) * (2 * sxy + C2)
        den = (mx * mx + my * my + C1) * (sxx + syy + C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# spectrum analysis
# ---------------------------------------------------------------------------


@dataclass
class SpectrumProfile:
    bins: np.ndarray
    log_amplitude: np.ndarray
    layer: str = ""

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["bin", "log_amplitude", "layer"])
            for b, v in zip(self.bins, self.log_amplitude):
                w.writerow([int(b), f"{v:.6f}", self.layer])


def power_spectrum(feat, layer=""):
    """Radially averaged power spectrum of a ``(B, C, H, W)`` or ``(C, H, W)`` map.

    Power ``|FFT|^2`` is centred, averaged over batch, channels and integer-radius
    rings, and reported as ``log10`` (floored at -30). There are
    ``min(H, W) // 2`` bins.
    """
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim == 3:
        feat = feat[None]
    H, W = feat.shape[2:]
    power = np.abs(np.fft.fftshift(np.fft.fft2(feat, axes=(-2, -1)), axes=(-2, -1))) ** 2
    power = power.mean(axis=(0, 1))
    yy, xx = np.indices((H, W))
    r = np.floor(np.hypot(yy - H // 2, xx - W // 2)).astype(int)
    nbins = min(H, W) // 2
    totals = np.bincount(r.ravel(), weights=power.ravel(), minlength=nbins)[:nbins]
    counts = np.bincount(r.ravel(), minlength=nbins)[:nbins]
    mean = totals / np.maximum(counts, 1)
    with np.errstate(divide="ignore"):
        logp = np.maximum(np.log10(mean), SPECTRUM_FLOOR)
    return SpectrumProfile(np.arange(nbins), logp, layer)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def synthetic_textures(count, size=64, seed=0):
    """Smooth procedural RGB images: sinusoid gratings, soft blobs and a few edges."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    images = []
    for _ in range(count):
        img = np.zeros((size, size, 3))
        base = rng.uniform(0.2, 0.8, size=3)
        img += base
        for _ in range(3):
            fy, fx = rng.uniform(0.5, 4.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.05, 0.2, size=3)
            img += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)[..., None]
        for _ in range(2):
            cy, cx = rng.uniform(0, 1, size=2)
            rad = rng.uniform(0.08, 0.3)
            amp = rng.uniform(-0.3, 0.3, size=3)
            img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rad**2))[..., None]
        ang = rng.uniform(0, np.pi)
        edge = (np.cos(ang) * (yy - 0.5) + np.sin(ang) * (xx - 0.5)) > rng.uniform(-0.3, 0.3)
        img += rng.uniform(-0.15, 0.15, size=3) * edge[..., None]
        images.append(np.clip(img, 0, 1).astype(np.float32))
    return images


def load_paired_dir(root):
    """Load ``root/clean/*.png`` and, if present, the matching ``root/noisy/*.png``.

    Returns ``(clean_images, noisy_images_or_None, names)``.
    """
    root = Path(root)
    clean_dir = root / "clean"
    if not clean_dir.is_dir():
        raise FileNotFoundError(f"{root}: missing clean/ directory")
    names = sorted(p.name for p in clean_dir.glob("*.png"))
    if not names:
        raise FileNotFoundError(f"{clean_dir}: no PNG files")
    clean = [load_png(clean_dir / n) for n in names]
    noisy_dir = root / "noisy"
    noisy = None
    if noisy_dir.is_dir():
        missing = [n for n in names if not (noisy_dir / n).exists()]
        if missing:
            raise FileNotFoundError(f"{noisy_dir}: no match for {missing[:3]}")
        noisy = [load_png(noisy_dir / n) for n in names]
    return clean, noisy, names


def write_png_fixture(path, pixels):
    """Minimal independent PNG encoder (8-bit RGB, no filtering); used to author fixtures."""
    import zlib

    pixels = np.asarray(pixels, dtype=np.uint8)
    H, W, _ = pixels.shape
    raw = b"".join(b"\x00" + pixels[y].tobytes() for y in range(H))

    def chunk(tag, body):
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", W, H, 8, 2, 0, 0, 0)
    data = PNG_SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")
    Path(path).write_bytes(data)
