"""Benchmark the numba kernels against the pure-numpy fallback.

Run: python benchmarks/bench_kernels.py [--size 512]
The same inputs go through both backends; outputs are cross-checked before
timing so the numbers compare identical work.
"""

import argparse
import time

import numpy as np

from caricature_forge._kernels import numpy_impl

try:
    from caricature_forge._kernels import numba_impl
except ImportError:
    numba_impl = None


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm (and JIT-compile)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_rasterize(size, rng):
    from caricature_forge.param import build_chart
    from caricature_forge.synthetic import make_face

    mesh = make_face(32, 64)
    chart = build_chart(mesh, size)
    px = chart.vertex_px()
    attrs = rng.normal(size=(mesh.n_vertices, 4))
    args = (px, mesh.triangles, attrs, size)
    return "rasterize_attributes", args


def bench_render(size, rng):
    from caricature_forge.synthetic import fit_camera, make_face

    mesh = make_face(32, 64)
    cam = fit_camera(mesh, (size, size))
    xy = cam.project(mesh.vertices)
    depth = cam.depth(mesh.vertices)
    keep = np.ones(mesh.n_triangles, dtype=np.uint8)
    tex = rng.uniform(0, 1, (size, size, 3))
    nrm = rng.normal(size=(mesh.n_vertices, 3))
    stretch = rng.uniform(0.5, 2, mesh.n_triangles)
    args = (xy, depth, mesh.triangles, keep, xy, tex, nrm, nrm, stretch, size, size)
    return "render_mesh", args


def bench_grid_resample(size, rng):
    from caricature_forge.render import build_grid

    grid = build_grid(size, size, 24)
    deformed = grid.rest + rng.normal(0, 2.0, grid.rest.shape)
    img = rng.uniform(0, 1, (size, size, 3))
    args = (img, grid.rest, deformed, grid.tris, np.zeros(3))
    return "grid_resample", args


def bench_maxflow(size, rng):
    n = size  # grid side of the band graph
    us, vs, ws = [], [], []
    ids = np.arange(n * n).reshape(n, n)
    w = rng.uniform(0.01, 1.0, (n, n))
    for dy, dx in ((0, 1), (1, 0)):
        a = ids[: n - dy, : n - dx].ravel()
        b = ids[dy:, dx:].ravel()
        us.append(a)
        vs.append(b)
        ws.append((w[: n - dy, : n - dx] + w[dy:, dx:]).ravel())
    us = np.concatenate(us)
    vs = np.concatenate(vs)
    ws = np.concatenate(ws)
    s, t = n * n, n * n + 1
    src = ids[0]
    snk = ids[-1]
    n_arcs = 2 * (us.size + src.size + snk.size)
    head = np.full(n * n + 2, -1, dtype=np.int64)
    nxt = np.empty(n_arcs, dtype=np.int64)
    to = np.empty(n_arcs, dtype=np.int64)
    cap = np.empty(n_arcs, dtype=np.float64)
    k = 0
    for u, v, c, rc in (
        (us, vs, ws, ws),
        (np.full(src.size, s), src, np.full(src.size, 1e18), np.zeros(src.size)),
        (snk, np.full(snk.size, t), np.full(snk.size, 1e18), np.zeros(snk.size)),
    ):
        m = u.size
        to[k : k + 2 * m : 2] = v
        to[k + 1 : k + 2 * m : 2] = u
        cap[k : k + 2 * m : 2] = c
        cap[k + 1 : k + 2 * m : 2] = rc
        for i in range(m):
            nxt[k + 2 * i] = head[u[i]]
            head[u[i]] = k + 2 * i
            nxt[k + 2 * i + 1] = head[v[i]]
            head[v[i]] = k + 2 * i + 1
        k += 2 * m
    args = (n * n + 2, head, nxt, to, cap, s, t)
    return "maxflow", args


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--maxflow-side", type=int, default=48)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    benches = [
        bench_rasterize(args.size, rng),
        bench_render(args.size, rng),
        bench_grid_resample(args.size, rng),
        bench_maxflow(args.maxflow_side, rng),
    ]
    print(f"{'kernel':<24}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, call_args in benches:
        np_fn = getattr(numpy_impl, name)
        t_np = timeit(np_fn, *call_args)
        if numba_impl is None:
            print(f"{name:<24}{t_np * 1e3:>10.1f}ms{'n/a':>12}{'':>10}")
            continue
        nb_fn = getattr(numba_impl, name)
        got_nb = nb_fn(*call_args)
        got_np = np_fn(*call_args)
        if not isinstance(got_nb, tuple):
            got_nb, got_np = (got_nb,), (got_np,)
        for a, b in zip(got_nb, got_np):
            assert np.allclose(np.asarray(a, dtype=np.float64),
                               np.asarray(b, dtype=np.float64),
                               atol=1e-9), f"{name}: backend mismatch"
        t_nb = timeit(nb_fn, *call_args)
        print(
            f"{name:<24}{t_np * 1e3:>10.1f}ms{t_nb * 1e3:>10.1f}ms{t_np / t_nb:>9.1f}x"
        )


if __name__ == "__main__":
    main()
