"""U-shaped CRWKV denoiser, its configuration, and the checkpoint format.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic b"CRWKVCKP"
    4 bytes   format version (uint32)
    8 bytes   header length N (uint64)
    N bytes   UTF-8 JSON header: config, config_hash, seed, meta, and a manifest
              of {"name", "shape", "offset"} entries (offset in bytes into the blob)
    rest      blob of little-endian float32 arrays, C order, in manifest order
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocks import CRB
from .numerics import (
    DEFAULT_DTYPE,
    Conv2d,
    Module,
    ShapeError,
    pixel_shuffle,
    pixel_unshuffle,
)
from .shift import VARIANTS

MAGIC = b"CRWKVCKP"
FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def _default_split(depths):
    return tuple((0, d) for d in depths[:3]) + ((depths[3], 0),)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``fmix_split[k] = (a_k, b_k)`` gives the number of FMix-type and CRM-type
    blocks in stage ``k``; FMix-type blocks come first within a stage. When
    omitted, stages 1-3 are all CRM-type and stage 4 all FMix-type.
    """

    base_channels: int = 48
    stage_depths: tuple = (3, 4, 4, 6)
    fmix_split: tuple = None
    shift: str = "cts"
    expansion: int = 4
    in_channels: int = 3
    global_residual: bool = True
    cts_in_crm: bool = True
    cts_in_cmix: bool = True

    def __post_init__(self):
        depths = tuple(int(d) for d in self.stage_depths)
        object.__setattr__(self, "stage_depths", depths)
        if len(depths) != 4 or any(d < 0 for d in depths):
            raise ConfigError(f"stage_depths must be four non-negative ints, got {depths}")
        split = self.fmix_split
        split = _default_split(depths) if split is None else tuple(tuple(int(v) for v in s) for s in split)
        object.__setattr__(self, "fmix_split", split)
        if len(split) != 4:
            raise ConfigError(f"fmix_split needs one (a, b) pair per stage, got {split}")
        for k, ((a, b), L) in enumerate(zip(split, depths), start=1):
            if a < 0 or b < 0 or a + b != L:
                raise ConfigError(f"stage {k}: split ({a}, {b}) does not sum to depth {L}")
        if self.shift not in VARIANTS:
            raise ConfigError(f"unknown shift {self.shift!r}; expected one of {VARIANTS}")
        if self.base_channels < 1 or self.expansion < 1 or self.in_channels < 1:
            raise ConfigError("base_channels, expansion and in_channels must be positive")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["stage_depths"] = list(self.stage_depths)
        d["fmix_split"] = [list(s) for s in self.fmix_split]
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# key = value config files
# ---------------------------------------------------------------------------


def read_config_file(path):
    """Parse a flat ``key = value`` file (``#`` starts a comment)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value.strip('"').strip("'")
    return values


def _parse_bool(s):
    s = str(s).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def model_config_from_file_values(values):
    kw = {}
    if "base_channels" in values:
        kw["base_channels"] = int(values["base_channels"])
    if "stage_depths" in values:
        kw["stage_depths"] = tuple(int(s) for s in values["stage_depths"].split(","))
    if "fmix_split" in values:
        kw["fmix_split"] = tuple(tuple(int(v) for v in pair.split(":")) for pair in values["fmix_split"].split(","))
    for key in ("shift",):
        if key in values:
            kw[key] = values[key]
    for key in ("expansion", "in_channels"):
        if key in values:
            kw[key] = int(values[key])
    for key in ("global_residual", "cts_in_crm", "cts_in_cmix"):
        if key in values:
            kw[key] = _parse_bool(values[key])
    return ModelConfig(**kw)


# ---------------------------------------------------------------------------
# resampling and skip fusion
# ---------------------------------------------------------------------------


class Downsample(Module):
    """2x2 stride-2 convolution: ``(B, C, H, W) -> (B, 2C, H/2, W/2)``."""

    def __init__(self, channels, rng, dtype=DEFAULT_DTYPE):
        self.conv = Conv2d(channels, 2 * channels, 2, rng, stride=2, dtype=dtype)

    def forward(self, x):
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"downsample needs even spatial dims, got {x.shape[2:]}")
        return self.conv(x)

    def backward(self, dy):
        return self.conv.backward(dy)


class Upsample(Module):
    """1x1 channel-doubling conv then pixel shuffle: ``(B, C, H, W) -> (B, C/2, 2H, 2W)``."""

    def __init__(self, channels, rng, dtype=DEFAULT_DTYPE):
        if channels % 2:
            raise ShapeError(f"upsample needs an even channel count, got {channels}")
        self.conv = Conv2d(channels, 2 * channels, 1, rng, dtype=dtype)

    def forward(self, x):
        return pixel_shuffle(self.conv(x), 2)

    def backward(self, dy):
        return self.conv.backward(pixel_unshuffle(dy, 2))


class SkipFuse(Module):
    """Concatenate decoder and encoder features, 1x1 conv back to decoder width."""

    def __init__(self, channels, rng, dtype=DEFAULT_DTYPE):
        self.channels = channels
        self.conv = Conv2d(2 * channels, channels, 1, rng, dtype=dtype)

    def forward(self, dec, enc):
        if dec.shape != enc.shape:
            raise ShapeError(f"skip fusion needs matching shapes, got {dec.shape} and {enc.shape}")
        return self.conv(np.concatenate([dec, enc], axis=1))

    def backward(self, dy):
        d = self.conv.backward(dy)
        return d[:, : self.channels], d[:, self.channels :]


class Stage(Module):
    def __init__(self, channels, split, rng, config, dtype=DEFAULT_DTYPE):
        a, b = split
        self.blocks = [
            CRB(
                channels,
                kind,
                rng,
                shift=config.shift,
                expansion=config.expansion,
                cts_in_crm=config.cts_in_crm,
                cts_in_cmix=config.cts_in_cmix,
                dtype=dtype,
            )
            for kind in ["fmix"] * a + ["crm"] * b
        ]

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x

    def backward(self, dy):
        for block in reversed(self.blocks):
            dy = block.backward(dy)
        return dy


# ---------------------------------------------------------------------------
# the network
# ---------------------------------------------------------------------------


ENCODER_TAGS = ("encoder_layer.0", "encoder_layer.1", "encoder_layer.2")
DECODER_TAGS = ("decoder_layer.0", "decoder_layer.1", "decoder_layer.2")
LAYER_TAGS = ("input_proj",) + ENCODER_TAGS + ("latent",) + DECODER_TAGS + ("output",)


class CRWKV(Module):
    """Four-stage encoder/decoder with long skips.

    Stage ``k`` runs at ``base_channels * 2**(k-1)`` channels. Decoder stages
    mirror encoder stages 3, 2, 1 with the same depth and split; stage 4 is a
    single latent stack. ``decoder_layer.0`` is the deepest decoder stage.
    """

    def __init__(self, config=None, seed=0, dtype=DEFAULT_DTYPE):
        config = config or ModelConfig()
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        C0 = config.base_channels
        widths = [C0 * 2**i for i in range(4)]
        self.input_proj = Conv2d(config.in_channels, C0, 3, rng, padding=1, dtype=dtype)
        self.encoders = []
        self.downs = []
        for i in range(3):
            self.encoders.append(Stage(widths[i], config.fmix_split[i], rng, config, dtype))
            self.downs.append(Downsample(widths[i], rng, dtype))
        self.latent = Stage(widths[3], config.fmix_split[3], rng, config, dtype)
        self.ups = []
        self.fuses = []
        self.decoders = []
        for i in (2, 1, 0):
            self.ups.append(Upsample(widths[i + 1], rng, dtype))
            self.fuses.append(SkipFuse(widths[i], rng, dtype))
            self.decoders.append(Stage(widths[i], config.fmix_split[i], rng, config, dtype))
        self.output_proj = Conv2d(C0, config.in_channels, 3, rng, padding=1, dtype=dtype)

    def forward(self, x, taps=None):
        """Denoise ``(B, in_channels, H, W)`` with ``H`` and ``W`` divisible by 8.

        If ``taps`` is a dict, intermediate feature maps are stored in it
        under the names in ``LAYER_TAGS``.
        """
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected (B, {self.config.in_channels}, H, W), got {x.shape}")
        if x.shape[2] % 8 or x.shape[3] % 8:
            raise ShapeError(f"spatial dims must be divisible by 8, got {x.shape[2:]}")
        x = np.asarray(x, dtype=self.dtype)

        def tap(name, value):
            if taps is not None:
                taps[name] = value

        h = self.input_proj(x)
        tap("input_proj", h)
        skips = []
        for i in range(3):
            h = self.encoders[i](h)
            tap(ENCODER_TAGS[i], h)
            skips.append(h)
            h = self.downs[i](h)
        h = self.latent(h)
        tap("latent", h)
        for j in range(3):
            h = self.ups[j](h)
            h = self.fuses[j](h, skips[2 - j])
            h = self.decoders[j](h)
            tap(DECODER_TAGS[j], h)
        out = self.output_proj(h)
        tap("output", out)
        if self.config.global_residual:
            out = out + x
        return out

    def backward(self, dy):
        dh = self.output_proj.backward(dy)
        dskips = [None] * 3
        for j in (2, 1, 0):
            dh = self.decoders[j].backward(dh)
            dh, dskips[2 - j] = self.fuses[j].backward(dh)
            dh = self.ups[j].backward(dh)
        dh = self.latent.backward(dh)
        for i in (2, 1, 0):
            dh = self.downs[i].backward(dh) + dskips[i]
            dh = self.encoders[i].backward(dh)
        dx = self.input_proj.backward(dh)
        if self.config.global_residual:
            dx = dx + dy
        return dx

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, arrays):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
        for name, p in params.items():
            a = arrays[name]
            if a.shape != p.data.shape:
                raise CheckpointError(f"parameter {name}: checkpoint shape {a.shape} != model shape {p.data.shape}")
            p.data[...] = a


def build(config=None, seed=0, dtype=DEFAULT_DTYPE):
    """Build a model and its parameter-count report ``(total, breakdown)``."""
    model = CRWKV(config, seed=seed, dtype=dtype)
    return model, count_parameters(model)


def count_parameters(model):
    breakdown = {name: int(p.data.size) for name, p in model.named_parameters()}
    return sum(breakdown.values()), breakdown


def denoise_array(model, img):
    """Run the model on an ``(H, W, C)`` image of any size via reflect padding to multiples of 8."""
    H, W = img.shape[:2]
    ph, pw = (-H) % 8, (-W) % 8
    mode = "reflect" if ph < H and pw < W else "edge"
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode=mode)
    x = padded.transpose(2, 0, 1)[None]
    y = model(x)[0].transpose(1, 2, 0)
    return y[:H, :W]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model, extra=None, meta=None):
    """Write model parameters (plus optional extra named arrays) to ``path``."""
    arrays = dict(model.state_dict())
    for name, a in (extra or {}).items():
        arrays[name] = a
    manifest = []
    chunks = []
    offset = 0
    for name, a in arrays.items():
        raw = np.ascontiguousarray(a, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(a)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "seed": int(model.seed),
        "dtype": "<f4",
        "meta": meta or {},
        "arrays": manifest,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(hb)))
        f.write(hb)
        for raw in chunks:
            f.write(raw)


def read_checkpoint(path):
    """Return ``(header, arrays)`` where arrays maps name -> float32 ndarray."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a CRWKV checkpoint")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20 : 20 + hlen])
    blob = memoryview(data)[20 + hlen :]
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        a = np.frombuffer(blob[start : start + 4 * n], dtype="<f4").astype(np.float32)
        arrays[entry["name"]] = a.reshape(entry["shape"])
    config = ModelConfig.from_dict(header["config"])
    if config.config_hash() != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch (file corrupt or edited)")
    return header, arrays


def load_checkpoint(path, expected_config=None, dtype=DEFAULT_DTYPE):
    """Rebuild the model stored at ``path``.

    Returns ``(model, header, extra_arrays)`` where ``extra_arrays`` holds
    entries that are not model parameters (e.g. optimizer moments).
    """
    header, arrays = read_checkpoint(path)
    config = ModelConfig.from_dict(header["config"])
    if expected_config is not None and expected_config.config_hash() != config.config_hash():
        raise CheckpointError(
            f"{path}: config hash {config.config_hash()} does not match expected {expected_config.config_hash()}"
        )
    model = CRWKV(config, seed=header["seed"], dtype=dtype)
    model.load_state_dict(arrays)
    names = {n for n, _ in model.named_parameters()}
    extra = {k: v for k, v in arrays.items() if k not in names}
    return model, header, extra
