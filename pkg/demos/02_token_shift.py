"""
Context-guided token shift
==========================

Before the projections in each block, channels are split into spans and
every span is replaced by a copy of the map displaced by one offset from
a small neighbourhood dictionary. Nearer offsets get more channels, in
proportion to 1 / manhattan distance.
"""

import numpy as np

from crwkv import shift

D = shift.dictionary_for("cts")
print("offsets:", list(D))
print("weights:", [str(x) for x in D.weights()], " sum:", D.p_sum())

for C in (48, 50, 12):
    spans = shift.partition_channels(D, C)
    print(f"C={C:3d} ->", [n for _, _, n in spans])

# %%
# A single bright pixel in all 48 channels, full shift (omega = 1):
# the first channel of each span shows where its offset moved the pixel.
# (With very few channels the floor leaves some spans empty and the last
# span absorbs the remainder, as C=12 above shows.)
x = np.zeros((1, 48, 5, 5))
x[0, :, 2, 2] = 1.0
o = shift.cts(x, D, omega=1.0)
for (dy, dx), start, n in shift.partition_channels(D, 48):
    yy, xx = np.argwhere(o[0, start])[0]
    print(f"offset ({dy:+d},{dx:+d}) -> pixel lands at ({yy}, {xx})")

# omega blends the shifted map with the input; omega = 0 is the identity.
print("identity at omega=0:", np.array_equal(shift.cts(x, D, 0.0), x))

# %%
# The baseline shifts used in ablations are smaller dictionaries.
for variant in ("uni", "bi", "quad", "cts_plus"):
    d = shift.dictionary_for(variant)
    print(f"{variant:9s} {len(d):2d} offsets, reach {d.reach()}")

# The learnable module keeps omega = sigmoid(raw) in [0, 1], starting at 0.5.
ts = shift.TokenShift("cts")
print("initial omega:", ts.omega)
