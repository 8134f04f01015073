# %% [markdown]
# Rectifying an oblique view
#
# Builds a checkerboard, distorts it with a known homography, then recovers
# a front-on view from the four corner clicks.

# %%
import sys
from pathlib import Path

import numpy as np

from framescope import write_png
from framescope.geometry import QuadCorrespondence, estimate_homography, project, rectangle_corners, rectify_quad, warp

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/rectification")
out.mkdir(parents=True, exist_ok=True)

side = 160
yy, xx = np.mgrid[0:side, 0:side]
board = ((yy // 20 + xx // 20) % 2).astype(float)
flat = np.stack([0.2 + 0.6 * board, 0.3 + 0.4 * board, 0.5 * np.ones_like(board)], axis=2)

# %%
# where the board corners land in the oblique photo (TL, TR, BR, BL)
oblique_corners = np.array([[30.0, 20.0], [150.0, 40.0], [140.0, 150.0], [12.0, 120.0]])
h = estimate_homography(QuadCorrespondence(rectangle_corners(side, side), oblique_corners))
photo = warp(flat, h, side, side)
print("corner reprojection error:", np.abs(project(h, rectangle_corners(side, side)) - oblique_corners).max())

# %%
restored = rectify_quad(photo, oblique_corners, side, side)
inner = slice(20, side - 20)
print("mean abs error inside the board:", np.abs(restored - flat)[inner, inner].mean().round(4))
for name, im in (("flat", flat), ("photo", photo), ("restored", restored)):
    write_png(out / f"{name}.png", im)
