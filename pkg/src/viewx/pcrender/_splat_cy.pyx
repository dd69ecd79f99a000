# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled z-buffer splat kernel: nearest depth wins, ties keep the
earliest point. Semantically identical to _splat_py.splat_points."""

import numpy as np

cimport numpy as cnp


def splat_points(cnp.int64_t[::1] u, cnp.int64_t[::1] v, double[::1] z,
                 float[:, ::1] colors, int height, int width, int radius):
    rgb = np.zeros((height, width, 3), dtype=np.float32)
    depth = np.full((height, width), np.inf, dtype=np.float64)
    cdef float[:, :, ::1] rgb_v = rgb
    cdef double[:, ::1] depth_v = depth
    cdef Py_ssize_t i, n = u.shape[0]
    cdef cnp.int64_t px, py
    cdef int du, dv
    cdef double zi
    for i in range(n):
        zi = z[i]
        for dv in range(-radius, radius + 1):
            py = v[i] + dv
            if py < 0 or py >= height:
                continue
            for du in range(-radius, radius + 1):
                px = u[i] + du
                if px < 0 or px >= width:
                    continue
                if zi < depth_v[py, px]:
                    depth_v[py, px] = zi
                    rgb_v[py, px, 0] = colors[i, 0]
                    rgb_v[py, px, 1] = colors[i, 1]
                    rgb_v[py, px, 2] = colors[i, 2]
    return rgb, depth
