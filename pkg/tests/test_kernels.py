"""Backend equivalence and correctness of the hot kernels."""

import numpy as np
import pytest

from caricature_forge._kernels import BACKEND, numpy_impl

numba_impl = pytest.importorskip("caricature_forge._kernels.numba_impl")


def _random_mesh2d(rng, n=40, m=50, extent=32.0):
    px = rng.uniform(2, extent - 2, (n, 2))
    tris = rng.integers(0, n, (m, 3)).astype(np.int32)
    ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    return px, tris[ok]


def test_fnv1a64_known_vectors():
    # standard FNV-1a 64-bit test vectors
    assert int(numpy_impl.fnv1a64(np.frombuffer(b"", dtype=np.uint8))) == 0xCBF29CE484222325
    assert int(numpy_impl.fnv1a64(np.frombuffer(b"a", dtype=np.uint8))) == 0xAF63DC4C8601EC8C
    assert (
        int(numpy_impl.fnv1a64(np.frombuffer(b"foobar", dtype=np.uint8)))
        == 0x85944171F73967E8
    )


def test_fnv1a64_backends_agree():
    rng = np.random.default_rng(0)
    for _ in range(5):
        data = rng.integers(0, 256, rng.integers(1, 200), dtype=np.uint8)
        assert int(numba_impl.fnv1a64(data)) == int(numpy_impl.fnv1a64(data))


def test_rasterize_backends_agree():
    rng = np.random.default_rng(1)
    px, tris = _random_mesh2d(rng)
    attrs = rng.normal(size=(px.shape[0], 3))
    out_a, mask_a = numba_impl.rasterize_attributes(px, tris, attrs, 32)
    out_b, mask_b = numpy_impl.rasterize_attributes(px, tris, attrs, 32)
    assert np.array_equal(mask_a, mask_b)
    assert np.allclose(out_a, out_b, atol=1e-12)


def test_render_backends_agree():
    rng = np.random.default_rng(2)
    px, tris = _random_mesh2d(rng, extent=24.0)
    n = px.shape[0]
    depth = rng.normal(size=n)
    keep = np.ones(tris.shape[0], dtype=np.uint8)
    tex = rng.uniform(0, 1, (24, 24, 3))
    na = rng.normal(size=(n, 3))
    nb = rng.normal(size=(n, 3))
    stretch = rng.uniform(0.5, 2.0, tris.shape[0])
    got_a = numba_impl.render_mesh(px, depth, tris, keep, px, tex, na, nb, stretch, 24, 24)
    got_b = numpy_impl.render_mesh(px, depth, tris, keep, px, tex, na, nb, stretch, 24, 24)
    for a, b in zip(got_a, got_b):
        assert np.allclose(a, b, atol=1e-10)


def test_grid_resample_backends_agree():
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, (20, 20, 3))
    xs, ys = np.meshgrid(np.linspace(0, 20, 5), np.linspace(0, 20, 5))
    rest = np.column_stack([xs.ravel(), ys.ravel()])
    deformed = rest + rng.normal(0, 0.8, rest.shape)
    tris = []
    for iy in range(4):
        for ix in range(4):
            a = iy * 5 + ix
            tris += [(a, a + 1, a + 6), (a, a + 6, a + 5)]
    tris = np.array(tris, dtype=np.int32)
    out_a, cov_a, inv_a = numba_impl.grid_resample(img, rest, deformed, tris, np.zeros(3))
    out_b, cov_b, inv_b = numpy_impl.grid_resample(img, rest, deformed, tris, np.zeros(3))
    assert np.array_equal(cov_a, cov_b)
    assert inv_a == inv_b
    assert np.allclose(out_a, out_b, atol=1e-12)


def test_zbuffer_nearer_triangle_wins():
    # two stacked triangles: the one with smaller depth must own the pixels
    px = np.array([[2.0, 2.0], [14.0, 2.0], [8.0, 14.0], [2.0, 2.0], [14.0, 2.0], [8.0, 14.0]])
    tris = np.array([[0, 1, 2], [3, 4, 5]], dtype=np.int32)
    depth = np.array([5.0, 5.0, 5.0, 1.0, 1.0, 1.0])
    tex = np.zeros((4, 4, 3))
    marker = np.zeros((6, 3))
    marker[3:] = 1.0  # nearer triangle carries attribute 1
    color, mask, nb, _, _, zbuf = numpy_impl.render_mesh(
        px, depth, tris, np.ones(2, dtype=np.uint8), px, tex, marker, marker,
        np.ones(2), 16, 16,
    )
    assert mask.any()
    assert np.allclose(nb[mask.astype(bool)], 1.0)
    assert np.allclose(zbuf[mask.astype(bool)], 1.0)


def _grid_graph_arrays(n_nodes, edges, source, sink):
    """edges: list of (u, v, cap, rcap) -> Dinic arrays."""
    n_arcs = 2 * len(edges)
    head = np.full(n_nodes, -1, dtype=np.int64)
    nxt = np.empty(n_arcs, dtype=np.int64)
    to = np.empty(n_arcs, dtype=np.int64)
    cap = np.empty(n_arcs, dtype=np.float64)
    for i, (u, v, c, rc) in enumerate(edges):
        a0, a1 = 2 * i, 2 * i + 1
        to[a0], cap[a0] = v, c
        to[a1], cap[a1] = u, rc
        nxt[a0] = head[u]
        head[u] = a0
        nxt[a1] = head[v]
        head[v] = a1
    return head, nxt, to, cap


def test_maxflow_hand_case():
    # classic 4-node diamond: max flow = 2
    edges = [(0, 1, 1.0, 0.0), (0, 2, 1.0, 0.0), (1, 3, 1.0, 0.0), (2, 3, 1.0, 0.0), (1, 2, 1.0, 0.0)]
    head, nxt, to, cap = _grid_graph_arrays(4, edges, 0, 3)
    flow, side = numpy_impl.maxflow(4, head, nxt, to, cap, 0, 3)
    assert flow == pytest.approx(2.0)
    assert side[0] == 1 and side[3] == 0


def test_maxflow_matches_networkx_and_backends_agree():
    nx = pytest.importorskip("networkx")
    rng = np.random.default_rng(4)
    for trial in range(12):
        n = int(rng.integers(4, 24))
        g = nx.DiGraph()
        edges = []
        for _ in range(n * 3):
            u, v = rng.integers(0, n, 2)
            if u == v:
                continue
            c = float(rng.uniform(0.1, 4.0))
            edges.append((int(u), int(v), c, c))
            for a, b in ((int(u), int(v)), (int(v), int(u))):
                if g.has_edge(a, b):
                    g[a][b]["capacity"] += c
                else:
                    g.add_edge(a, b, capacity=c)
        s, t = 0, n - 1
        if not g.has_node(s) or not g.has_node(t) or not nx.has_path(g, s, t):
            expected = 0.0
        else:
            expected = nx.maximum_flow_value(g, s, t)
        head, nxt, to, cap = _grid_graph_arrays(n, edges, s, t)
        f_np, side_np = numpy_impl.maxflow(n, head, nxt, to, cap, s, t)
        f_nb, side_nb = numba_impl.maxflow(n, head, nxt, to, cap, s, t)
        assert f_np == pytest.approx(expected, abs=1e-9)
        assert f_nb == pytest.approx(expected, abs=1e-9)
        assert np.array_equal(side_np, side_nb)


def test_active_backend_exposed():
    assert BACKEND in ("numba", "numpy")
