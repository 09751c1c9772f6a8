"""
Feature spectra and scaling
===========================

Radially averaged power spectra show how much high-frequency content each
stage keeps. The benchmark harness measures runtime and peak memory
against input size and fits a log-log slope.
"""

import numpy as np

from crwkv import CRWKV, ModelConfig
from crwkv import bench as B
from crwkv import data as D
from crwkv.model import LAYER_TAGS

model = CRWKV(ModelConfig(base_channels=8, stage_depths=(1, 1, 1, 1)), seed=0)
img = D.synthetic_textures(1, 64, seed=3)[0]
x = img.transpose(2, 0, 1)[None]
taps = {}
model(x, taps=taps)

print("layer             bins   low-band  high-band (log10 power)")
for tag in LAYER_TAGS:
    prof = D.power_spectrum(taps[tag], layer=tag)
    n = len(prof.bins)
    lo = prof.log_amplitude[1 : max(2, n // 4)].mean()
    hi = prof.log_amplitude[n // 2 :].mean()
    print(f"{tag:16s} {n:5d}   {lo:8.2f}  {hi:8.2f}")

# %%
rows = B.bench_wkv([1024, 2048, 4096, 8192], repeats=3, channels=16, variants=("scan",))
rows += B.bench_wkv([256, 512, 1024], repeats=1, channels=4, variants=("reference",))
for size, ms, peak, variant in rows:
    print(f"{variant:9s} T={size:5d}  {ms:8.2f} ms  {peak / 1e6:7.2f} MB")
print("slopes:", {k: round(v, 2) for k, v in B.slopes(rows).items()})

rows = B.bench_model([32, 64, 128], repeats=1, config=ModelConfig(base_channels=4, stage_depths=(1, 1, 1, 1)))
print("model peak-memory slope vs pixels:", round(B.slopes(rows, "peak_bytes", size_power=2)["model"], 2))
