"""Compare the compiled splat kernel against the numpy fallback.

Builds a synthetic colored cloud the size of a real depth-map unprojection,
renders it through both kernels at several splat radii, checks the outputs
are bitwise identical, and reports timings.

    python benchmarks/bench_splat.py [--points 307200] [--repeats 5]
"""

import argparse
import time

import numpy as np

from viewx.pcrender import _splat_py

try:
    from viewx.pcrender import _splat_cy
except ImportError:
    _splat_cy = None

WIDTH, HEIGHT = 640, 480


def make_cloud(points, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.integers(-2, WIDTH + 2, size=points)
    v = rng.integers(-2, HEIGHT + 2, size=points)
    z = rng.uniform(0.5, 10.0, size=points)
    colors = rng.random((points, 3)).astype(np.float32)
    return (
        np.ascontiguousarray(u),
        np.ascontiguousarray(v),
        np.ascontiguousarray(z),
        np.ascontiguousarray(colors),
    )


def bench(fn, args, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - start)
    return best, result


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--points", type=int, default=WIDTH * HEIGHT)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    u, v, z, colors = make_cloud(args.points)
    print(f"{args.points} points into {WIDTH}x{HEIGHT}, best of {args.repeats}")
    print(f"{'radius':>6} {'numpy (ms)':>12} {'cython (ms)':>12} {'speedup':>8}")
    for radius in (0, 1, 2):
        py_t, py_out = bench(
            _splat_py.splat_points, (u, v, z, colors, HEIGHT, WIDTH, radius), args.repeats
        )
        if _splat_cy is None:
            print(f"{radius:>6} {py_t * 1e3:>12.2f} {'n/a':>12} {'n/a':>8}")
            continue
        cy_t, cy_out = bench(
            _splat_cy.splat_points, (u, v, z, colors, HEIGHT, WIDTH, radius), args.repeats
        )
        same = np.array_equal(py_out[0], cy_out[0]) and np.array_equal(py_out[1], cy_out[1])
        flag = "" if same else "  OUTPUTS DIFFER!"
        print(f"{radius:>6} {py_t * 1e3:>12.2f} {cy_t * 1e3:>12.2f} {py_t / cy_t:>8.1f}x{flag}")


if __name__ == "__main__":
    main()
