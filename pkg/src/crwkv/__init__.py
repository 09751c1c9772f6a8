"""CRWKV: attention-free image denoising with a bidirectional WKV operator.

Pure numpy with hand-written backward passes; the WKV scans are numba kernels.
"""

from .blocks import CMix, CRB, CRM, FMix
from .model import CRWKV, ModelConfig, build, count_parameters, load_checkpoint, save_checkpoint
from .shift import OffsetDictionary, TokenShift, baseline_shift, cts, partition_channels
from .wkv import biwkv_backward, biwkv_reference, biwkv_scan, position_bias

__version__ = "0.1.0"

__all__ = [
    "CMix",
    "CRB",
    "CRM",
    "CRWKV",
    "FMix",
    "ModelConfig",
    "OffsetDictionary",
    "TokenShift",
    "baseline_shift",
    "biwkv_backward",
    "biwkv_reference",
    "biwkv_scan",
    "build",
    "count_parameters",
    "cts",
    "load_checkpoint",
    "partition_channels",
    "position_bias",
    "save_checkpoint",
]
