"""
Checking gradients and invariants
=================================

Every module carries a hand-written backward pass. gradcheck compares it
with central finite differences; the selftest suite bundles the checks
that guard the numerics.
"""

import numpy as np

from crwkv import selftest
from crwkv.blocks import CRB
from crwkv.numerics import gradcheck

rng = np.random.default_rng(0)
block = CRB(4, "crm", rng, dtype=np.float64)
errs = gradcheck(block, rng.standard_normal((1, 4, 4, 4)), rng, max_coords=4)
for name, err in sorted(errs.items(), key=lambda kv: -kv[1])[:5]:
    print(f"{name:32s} {err:.2e}")
print("worst:", max(errs.values()))

# %%
results = selftest.run_selftest()
print(selftest.format_table(results))


# A deliberately wrong operator is caught by the same checks.
def off_by_a_bit(k, v, w, u):
    return selftest.wkv.biwkv_scan(k, v, w, u) + 1e-6


bad = selftest.run_selftest("wkv", scan=off_by_a_bit)
print("broken scan:", {r.name: r.passed for r in bad})
