"""Losses, AdamW, the learning-rate schedule and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .model import CheckpointError, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

CHARBONNIER_EPS = 1e-3
LOSSES = ("l1", "charbonnier", "mse", "psnr")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss(kind, y, target, eps=CHARBONNIER_EPS):
    """Mean-reduced loss and its gradient with respect to ``y``.

    ``psnr`` is the negated PSNR of data in [0, 1] (uncapped; 1e-12 is added to
    the MSE so identical inputs stay finite).
    """
    if y.shape != target.shape:
        raise ValueError(f"loss: shape mismatch {y.shape} vs {target.shape}")
    d = y - target
    n = d.size
    if kind == "l1":
        return float(np.mean(np.abs(d))), np.sign(d) / n
    if kind == "charbonnier":
        r = np.sqrt(d * d + eps * eps)
        return float(np.mean(r)), d / r / n
    if kind == "mse":
        return float(np.mean(d * d)), 2 * d / n
    if kind == "psnr":
        mse = float(np.mean(d * d)) + 1e-12
        value = 10.0 * math.log10(mse)
        return value, (10.0 / math.log(10.0)) * (2 * d / n) / mse
    raise ValueError(f"unknown loss {kind!r}; expected one of {LOSSES}")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamW:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, named_params, lr):
        """One decoupled-weight-decay Adam update over ``(name, Parameter)`` pairs."""
        for name, p in named_params:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r} at step {self.t + 1}")
        self.t += 1
        bc1 = 1 - self.beta1**self.t
        bc2 = 1 - self.beta2**self.t
        for name, p in named_params:
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            if p.decay and self.weight_decay:
                p.data *= 1 - lr * self.weight_decay
            p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.data.dtype)


def clip_grad_norm(params, max_norm):
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


def lr_schedule(t, total=288_000, base=3e-4, floor=1e-6, decay_start=192_000):
    """Constant ``base`` until ``decay_start``, then cosine down to ``floor`` at ``total``."""
    if t < decay_start:
        return base
    if t >= total:
        return floor
    frac = (t - decay_start) / (total - decay_start)
    return floor + 0.5 * (base - floor) * (1 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 288_000
    batch_size: int = 4
    patch_size: int = 128
    lr: float = 3e-4
    lr_floor: float = 1e-6
    decay_start: int = None
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    loss: str = "l1"
    log_every: int = 100
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.decay_start is None:
            # same 2/3 proportion as 192k of 288k
            self.decay_start = (2 * self.iterations) // 3
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    def lr_at(self, t):
        return lr_schedule(t, self.iterations, self.lr, self.lr_floor, self.decay_start)


class PatchDataset:
    """Clean patches (and optional fixed noisy counterparts) for training.

    Without noisy counterparts, noise from ``noise`` is drawn fresh for every
    sample.
    """

    def __init__(self, clean_images, noisy_images=None, patch_size=128, noise=None):
        if not clean_images:
            raise ValueError("dataset is empty")
        if noisy_images is None and noise is None:
            raise ValueError("need either noisy images or a noise spec")
        self.noise = noise
        self.clean = []
        self.noisy = [] if noisy_images is not None else None
        for i, img in enumerate(clean_images):
            self.clean += D.extract_patches(img, patch_size)
            if noisy_images is not None:
                self.noisy += D.extract_patches(noisy_images[i], patch_size)
        if not self.clean:
            raise ValueError(f"no image is at least {patch_size}x{patch_size}")

    def __len__(self):
        return len(self.clean)

    def sample(self, rng, batch_size):
        """Return ``(noisy, clean)`` batches shaped ``(B, 3, P, P)``."""
        idx = rng.integers(len(self.clean), size=batch_size)
        xs, ys = [], []
        for i in idx:
            k = int(rng.integers(8))
            clean = D.dihedral(self.clean[i], k)
            if self.noisy is not None:
                noisy = D.dihedral(self.noisy[i], k)
            else:
                noisy = D.add_noise(clean, self.noise, rng)
            xs.append(noisy)
            ys.append(clean)
        to_batch = lambda imgs: np.ascontiguousarray(np.stack(imgs).transpose(0, 3, 1, 2))
        return to_batch(xs), to_batch(ys)


@dataclass
class TrainState:
    model: object
    optimizer: AdamW
    config: TrainConfig

    @property
    def t(self):
        return self.optimizer.t

    def save(self, path):
        extra = {}
        for name in self.optimizer.m:
            extra[f"adam.m/{name}"] = self.optimizer.m[name]
            extra[f"adam.v/{name}"] = self.optimizer.v[name]
        meta = {"iteration": self.optimizer.t, "train_seed": self.config.seed}
        save_checkpoint(path, self.model, extra=extra, meta=meta)

    @classmethod
    def load(cls, path, config, expected_model_config=None):
        model, header, extra = load_checkpoint(path, expected_model_config)
        if header["meta"].get("train_seed") != config.seed:
            raise CheckpointError(f"{path}: trained with seed {header['meta'].get('train_seed')}, resuming with {config.seed}")
        opt = AdamW(weight_decay=config.weight_decay, t=int(header["meta"].get("iteration", 0)))
        for key, a in extra.items():
            kind, name = key.split("/", 1)
            (opt.m if kind == "adam.m" else opt.v)[name] = a.astype(model.dtype)
        return cls(model, opt, config)


def batch_psnr(y, target):
    return float(np.mean([D.psnr(np.clip(a, 0, 1), b) for a, b in zip(y, target)]))


def train(state, dataset, until=None, log_path=None, checkpoint_dir=None, callback=None):
    """Run iterations ``state.t .. until`` (default: the configured total).

    Every iteration draws its batch from an RNG seeded by ``(seed, t)``, so a
    run resumed from a checkpoint at ``t`` replays the same sequence as an
    uninterrupted one. Returns the list of logged rows
    ``(iter, lr, loss, psnr)``.
    """
    cfg = state.config
    model = state.model
    until = cfg.iterations if until is None else until
    named = list(model.named_parameters())
    params = [p for _, p in named]
    rows = []
    writer = None
    fh = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        new = not log_path.exists() or state.t == 0
        fh = open(log_path, "w" if new else "a", newline="")
        writer = csv.writer(fh)
        if new:
            writer.writerow(["iter", "lr", "loss", "psnr"])
    try:
        while state.t < until:
            t = state.t
            rng = np.random.default_rng([cfg.seed, t])
            noisy, clean = dataset.sample(rng, cfg.batch_size)
            noisy = noisy.astype(model.dtype)
            clean = clean.astype(model.dtype)
            model.zero_grad()
            y = model(noisy)
            value, dy = loss(cfg.loss, y, clean)
            model.backward(dy.astype(model.dtype))
            clip_grad_norm(params, cfg.clip_norm)
            lr = cfg.lr_at(t)
            state.optimizer.step(named, lr)
            if t % cfg.log_every == 0 or t == until - 1:
                row = (t, lr, value, batch_psnr(y, clean))
                rows.append(row)
                if writer:
                    writer.writerow([t, f"{lr:.6e}", f"{value:.8f}", f"{row[3]:.6f}"])
                    fh.flush()
                log.info("iter %d lr %.3e loss %.5f psnr %.2f", *row)
                if callback:
                    callback(row)
            if checkpoint_dir and cfg.checkpoint_every and state.t % cfg.checkpoint_every == 0:
                state.save(Path(checkpoint_dir) / f"ckpt_{state.t:07d}.crwkv")
    finally:
        if fh:
            fh.close()
    return rows


def evaluate(model, noisy_images, clean_images):
    """Mean PSNR/SSIM of the model output and of the noisy input against the clean images."""
    from .model import denoise_array

    out_p, out_s, in_p, in_s = [], [], [], []
    for noisy, clean in zip(noisy_images, clean_images):
        y = np.clip(denoise_array(model, noisy), 0, 1)
        out_p.append(D.psnr(y, clean))
        in_p.append(D.psnr(noisy, clean))
        if min(clean.shape[:2]) >= 11:
            out_s.append(D.ssim(y, clean))
            in_s.append(D.ssim(noisy, clean))
    mean = lambda v: float(np.mean(v)) if v else float("nan")
    return {
        "psnr": mean(out_p),
        "ssim": mean(out_s),
        "noisy_psnr": mean(in_p),
        "noisy_ssim": mean(in_s),
    }
