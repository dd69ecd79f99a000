"""Vectorized numpy splat kernel (fallback for the compiled one).

Expands every point into its splat footprint, then resolves each pixel with
one lexsort keyed (pixel, depth, point index), which reproduces the compiled
kernel's nearest-wins / lowest-index-on-ties rule bit for bit.
"""

import numpy as np


def splat_points(u, v, z, colors, height, width, radius):
    rgb = np.zeros((height, width, 3), dtype=np.float32)
    depth = np.full((height, width), np.inf, dtype=np.float64)
    n = len(u)
    if n == 0:
        return rgb, depth

    offsets = np.arange(-radius, radius + 1)
    du, dv = np.meshgrid(offsets, offsets, indexing="xy")
    px = (u[:, None] + du.ravel()[None, :]).ravel()
    py = (v[:, None] + dv.ravel()[None, :]).ravel()
    footprint = (2 * radius + 1) ** 2
    idx = np.repeat(np.arange(n, dtype=np.int64), footprint)
    zz = np.repeat(np.asarray(z, dtype=np.float64), footprint)

    inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
    if not inside.any():
        return rgb, depth
    px, py, idx, zz = px[inside], py[inside], idx[inside], zz[inside]
    pix = py * width + px

    order = np.lexsort((idx, zz, pix))
    pix_sorted = pix[order]
    first = np.flatnonzero(np.r_[True, pix_sorted[1:] != pix_sorted[:-1]])
    winners = order[first]

    flat_rgb = rgb.reshape(-1, 3)
    flat_depth = depth.reshape(-1)
    flat_rgb[pix[winners]] = colors[idx[winners]]
    flat_depth[pix[winners]] = zz[winners]
    return rgb, depth
