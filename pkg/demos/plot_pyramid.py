"""
Image pyramids
==============

Each level is the previous one smoothed by the separable [1/4, 1/2, 1/4]
kernel and subsampled by two.  Borders are mirrored, so a constant image
stays constant on every level.
"""

import numpy as np

from tet import GrayImage, build_pyramid
from tet.image import pyr_down

img = GrayImage(np.full((480, 640), 0.3))
pyr = build_pyramid(img, 3)
for i, level in enumerate(pyr.levels):
    print("level %d: %dx%d, max deviation %.1e" % (i, level.width, level.height,
                                                   np.abs(level.data - 0.3).max()))

###############################################################################
# A 4x4 checkerboard averages out to a flat 2x2 gray.

board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
print(board)
print(pyr_down(board).data)

###############################################################################
# Odd sizes round down, and asking for too many levels clamps the depth with
# a warning rather than producing windows that cannot fit.

print([lvl.shape for lvl in build_pyramid(GrayImage(np.zeros((61, 83))), 3).levels])

import warnings
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    deep = build_pyramid(GrayImage(np.zeros((40, 40))), 6)
print(len(deep), "levels;", caught[0].message)
