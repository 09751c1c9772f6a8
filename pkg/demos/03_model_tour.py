"""
Building and running the denoiser
=================================

A four-stage encoder/decoder. Stages 1 to 3 use blocks built on the
spatial WKV mixer; the narrowest stage uses frequency-domain mixing. Every
block is followed by channel mixing, with learnable residual scales.
"""

import numpy as np

from crwkv import CRWKV, ModelConfig, build
from crwkv.model import LAYER_TAGS, denoise_array

model, (total, breakdown) = build()
print(f"default model: {total:,} parameters")
groups = {}
for name, n in breakdown.items():
    top = name.split(".")[0]
    groups[top] = groups.get(top, 0) + n
for top, n in groups.items():
    print(f"  {top:12s} {n:>10,}")

# %%
# A small model is enough to see the data flow.
cfg = ModelConfig(base_channels=8, stage_depths=(1, 1, 1, 2))
small = CRWKV(cfg, seed=0)
x = np.random.default_rng(0).random((1, 3, 32, 32)).astype(np.float32)
taps = {}
y = small(x, taps=taps)
for tag in LAYER_TAGS:
    print(f"{tag:16s} {taps[tag].shape}")
print("output:", y.shape, y.dtype)

# Input sides must be multiples of 8; denoise_array pads and crops for you.
img = np.random.default_rng(1).random((45, 70, 3)).astype(np.float32)
print("arbitrary size:", denoise_array(small, img).shape)

# %%
# Configurations are validated up front.
try:
    ModelConfig(stage_depths=(2, 2, 2, 2), fmix_split=((1, 1), (0, 2), (0, 3), (2, 0)))
except ValueError as exc:
    print("rejected:", exc)
