import numpy as np
import pytest

from caricature_forge.mesh import FaceMesh, prefactor, region_id
from caricature_forge.synthetic import fit_camera, make_face, make_scene, make_sphere


def uv_sphere(n_rings: int = 3, n_segs: int = 6, radius: float = 1.0) -> FaceMesh:
    """Small pole-to-pole sphere (n_rings*n_segs + 2 vertices)."""
    verts = [np.array([0.0, 0.0, -radius])]
    for r in range(1, n_rings + 1):
        theta = np.pi * r / (n_rings + 1)
        for s in range(n_segs):
            phi = 2 * np.pi * s / n_segs
            verts.append(
                radius
                * np.array(
                    [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), -np.cos(theta)]
                )
            )
    verts.append(np.array([0.0, 0.0, radius]))
    v = np.array(verts)
    top, bot = 0, len(verts) - 1

    def vid(r, s):
        return 1 + (r - 1) * n_segs + (s % n_segs)

    tris = []
    for s in range(n_segs):
        tris.append((top, vid(1, s + 1), vid(1, s)))
    for r in range(1, n_rings):
        for s in range(n_segs):
            a, b = vid(r, s), vid(r, s + 1)
            c, d = vid(r + 1, s + 1), vid(r + 1, s)
            tris.append((a, b, c))
            tris.append((a, c, d))
    for s in range(n_segs):
        tris.append((bot, vid(n_rings, s), vid(n_rings, s + 1)))
    tris = np.array(tris, dtype=np.int32)
    centers = v[tris].mean(axis=1)
    fn = np.cross(v[tris[:, 1]] - v[tris[:, 0]], v[tris[:, 2]] - v[tris[:, 0]])
    flip = (fn * centers).sum(axis=1) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    labels = np.full(v.shape[0], region_id("other"), dtype=np.int8)
    anchors = np.nonzero(v[:, 2] > 0.55 * radius)[0].astype(np.int32)
    return FaceMesh(v, tris, labels, {}, anchors)


@pytest.fixture(scope="session")
def face():
    return make_face()


@pytest.fixture(scope="session")
def face_ctx(face):
    return prefactor(face)


@pytest.fixture(scope="session")
def dense_face():
    return make_face(24, 56)


@pytest.fixture(scope="session")
def dense_ctx(dense_face):
    return prefactor(dense_face)


@pytest.fixture(scope="session")
def sphere():
    return make_sphere(2)


@pytest.fixture(scope="session")
def camera(face):
    return fit_camera(face, (512, 512))


@pytest.fixture(scope="session")
def scene():
    return make_scene(image_size=(448, 448), seed=0)


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    """First call of each numba kernel compiles; keep that out of timings."""
    from caricature_forge import _kernels

    px = np.array([[1.0, 1.0], [9.0, 1.5], [5.0, 9.0]])
    tris = np.array([[0, 1, 2]], dtype=np.int32)
    _kernels.rasterize_attributes(px, tris, np.ones((3, 2)), 16)
    _kernels.render_mesh(
        px,
        np.zeros(3),
        tris,
        np.ones(1, dtype=np.uint8),
        px,
        np.zeros((4, 4, 3)),
        np.ones((3, 3)),
        np.ones((3, 3)),
        np.ones(1),
        16,
        16,
    )
    _kernels.grid_resample(
        np.zeros((8, 8, 3)), px, px, tris, np.zeros(3)
    )
    head = np.array([0, 2, 3], dtype=np.int64)
    nxt = np.array([-1, -1, 1, -1], dtype=np.int64)
    to = np.array([1, 0, 2, 1], dtype=np.int64)
    cap = np.array([1.0, 0.0, 1.0, 0.0])
    _kernels.maxflow(3, head, nxt, to, cap, 0, 2)
    _kernels.fnv1a64(np.zeros(4, dtype=np.uint8))
