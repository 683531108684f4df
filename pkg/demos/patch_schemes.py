"""
Three ways to cut an image into tokens
======================================

Square patches, full-height columns and full-width rows. Each scheme is a
pure reshape, so turning tokens back into pixels is exact.
"""

import numpy as np

from vitfill.patching import PatchScheme, depatchify, patchify, token_count, token_dim

rng = np.random.default_rng(0)
image = rng.uniform(size=(3, 64, 64)).astype(np.float32)

# %%
# Token counts and widths for a 3 x 64 x 64 image.
for text in ("square:16", "column:1", "column:2", "column:4", "row:1", "row:2", "row:4"):
    s = PatchScheme.parse(text)
    print(f"{text:>10}: {token_count(s, 64, 64):3d} tokens of {token_dim(s, 3, 64, 64):4d} values")

# %%
# A 2-column token holds one 64 x 2 vertical strip of every channel.
grid = patchify(image, PatchScheme.parse("column:2"))
strip = image[:, :, 4:6]
print("token 2 is the strip at x=4..5:", np.array_equal(grid.tokens[2], strip.reshape(-1)))

# %%
# Round trip, bit for bit.
print("round trip exact:", np.array_equal(depatchify(grid), image))

# %%
# Sizes that do not tile the image are refused up front.
try:
    token_count(PatchScheme.parse("column:3"), 64, 64)
except ValueError as exc:
    print("rejected:", exc)
