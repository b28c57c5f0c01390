"""Face mesh core: fixed-topology triangle meshes, Laplacian editing,
exaggeration by scaled-Laplacian reconstruction, and deformation transfer.

Model frame convention: the mesh lives in camera-aligned coordinates,
x right, y down (image convention), z growing away from the viewer. Outward
surface normals on the visible front therefore have negative z.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from . import config
from ._kernels import fnv1a64
from .errors import (
    DegenerateTriangleError,
    FieldRangeError,
    InvalidMeshError,
    TopologyMismatchError,
)

REGIONS = ("forehead", "chin", "nose", "cheek", "mouth", "eyes", "other")
_REGION_ID = {name: i for i, name in enumerate(REGIONS)}


def region_id(name: str) -> int:
    return _REGION_ID[name]


class FaceMesh:
    """Triangle mesh with semantic region labels, feature curves and anchors.

    Parameters
    ----------
    vertices : (N,3) float array, model units.
    triangles : (M,3) int array of vertex indices.
    region_labels : (N,) int array of indices into REGIONS.
    feature_curves : dict name -> ordered vertex-index path. The "silhouette"
        curve must be closed (first index == last index); all others are open.
    anchor_set : int array of vertex indices on the backfacing part; must be
        non-empty and disjoint from every feature curve.
    """

    def __init__(
        self,
        vertices,
        triangles,
        region_labels,
        feature_curves,
        anchor_set,
        validate=True,
        _topology_id=None,
    ):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int32)
        self.region_labels = np.ascontiguousarray(region_labels, dtype=np.int8)
        self.feature_curves = {
            name: np.ascontiguousarray(path, dtype=np.int32)
            for name, path in feature_curves.items()
        }
        self.anchor_set = np.ascontiguousarray(np.sort(anchor_set), dtype=np.int32)
        self._laplacian = None
        self._neighbor_counts = None
        if validate:
            self._validate()
        self.topology_id = (
            int(_topology_id) if _topology_id is not None else compute_topology_id(self)
        )

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def _validate(self):
        nv = self.n_vertices
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise InvalidMeshError("vertices must be (N,3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise InvalidMeshError("triangles must be (M,3)")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= nv
        ):
            raise InvalidMeshError("triangle index out of range")
        if self.region_labels.shape[0] != nv:
            raise InvalidMeshError("region_labels must cover all vertices")
        if self.region_labels.min() < 0 or self.region_labels.max() >= len(REGIONS):
            raise InvalidMeshError("unknown region label id")

        # edge-manifold: every undirected edge in at most two triangles
        tri = self.triangles
        edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        key = np.sort(edges, axis=1)
        _, counts = np.unique(key, axis=0, return_counts=True)
        if counts.max(initial=0) > 2:
            raise InvalidMeshError("non-manifold edge (shared by >2 triangles)")
        # consistent winding: no directed edge may repeat
        _, dcounts = np.unique(edges, axis=0, return_counts=True)
        if dcounts.max(initial=0) > 1:
            raise InvalidMeshError("inconsistent triangle winding")

        adj = adjacency_matrix(self)
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise InvalidMeshError("mesh must be connected (no isolated vertices)")

        curve_union = []
        for name, path in self.feature_curves.items():
            if path.size and (path.min() < 0 or path.max() >= nv):
                raise InvalidMeshError(f"feature curve '{name}' index out of range")
            curve_union.append(path)
        sil = self.feature_curves.get("silhouette")
        if sil is not None and (sil.size < 4 or sil[0] != sil[-1]):
            raise InvalidMeshError("silhouette path must be closed (first == last)")
        if self.anchor_set.size == 0:
            raise InvalidMeshError("anchor_set must be non-empty")
        if self.anchor_set.min() < 0 or self.anchor_set.max() >= nv:
            raise InvalidMeshError("anchor index out of range")
        if curve_union:
            allcurve = np.unique(np.concatenate(curve_union))
            if np.intersect1d(self.anchor_set, allcurve).size:
                raise InvalidMeshError("anchor_set overlaps a feature curve")

    def with_vertices(self, new_vertices) -> "FaceMesh":
        """Same topology/labels/curves, new geometry. Skips revalidation."""
        m = FaceMesh(
            new_vertices,
            self.triangles,
            self.region_labels,
            self.feature_curves,
            self.anchor_set,
            validate=False,
            _topology_id=self.topology_id,
        )
        m._laplacian = self._laplacian
        m._neighbor_counts = self._neighbor_counts
        return m

    def region_mask(self, *names: str) -> np.ndarray:
        ids = [region_id(n) for n in names]
        return np.isin(self.region_labels, ids)

    def curve_vertex_set(self) -> np.ndarray:
        """Unique sorted indices of all feature-curve vertices."""
        if not self.feature_curves:
            return np.empty(0, dtype=np.int32)
        return np.unique(np.concatenate(list(self.feature_curves.values())))


def compute_topology_id(mesh: FaceMesh) -> int:
    """64-bit FNV-1a over the triangle index buffer then the anchor list."""
    buf = np.concatenate(
        [
            mesh.triangles.astype("<i4").reshape(-1),
            mesh.anchor_set.astype("<i4").reshape(-1),
        ]
    )
    return int(fnv1a64(buf.view(np.uint8)))


def adjacency_matrix(mesh: FaceMesh) -> sp.csr_matrix:
    tri = mesh.triangles
    n = mesh.n_vertices
    rows = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 1], tri[:, 2], tri[:, 2], tri[:, 0]])
    cols = np.concatenate([tri[:, 1], tri[:, 0], tri[:, 2], tri[:, 1], tri[:, 0], tri[:, 2]])
    a = sp.csr_matrix(
        (np.ones(rows.shape[0]), (rows, cols)), shape=(n, n), dtype=np.float64
    )
    a.data[:] = 1.0  # collapse duplicate edge entries
    return a


def uniform_laplacian(mesh: FaceMesh) -> sp.csr_matrix:
    """L = I - D^-1 A (graph Laplacian with uniform one-ring weights).

    Depends only on topology, which keeps prefactored systems reusable across
    geometry/field edits; cached on the mesh instance.
    """
    if mesh._laplacian is not None:
        return mesh._laplacian
    a = adjacency_matrix(mesh)
    deg = np.asarray(a.sum(axis=1)).ravel()
    if (deg == 0).any():
        raise InvalidMeshError("isolated vertex has no one-ring")
    dinv = sp.diags(1.0 / deg)
    lap = (sp.eye(mesh.n_vertices, format="csr") - dinv @ a).tocsr()
    mesh._laplacian = lap
    mesh._neighbor_counts = deg
    return lap


class LaplacianSet:
    """Per-vertex 3D Laplacian vectors with their weighting scheme tag."""

    def __init__(self, deltas: np.ndarray, weighting: str = "uniform"):
        self.deltas = np.asarray(deltas, dtype=np.float64)
        self.weighting = weighting


class LambdaField:
    """Per-vertex exaggeration factors, tied to a mesh topology."""

    def __init__(self, values, topology_id, bounds=(config.LAMBDA_MIN, config.LAMBDA_MAX)):
        self.values = np.asarray(values, dtype=np.float64)
        self.topology_id = int(topology_id)
        self.bounds = bounds
        lo, hi = bounds
        if not np.isfinite(self.values).all():
            raise FieldRangeError("lambda field contains non-finite values")
        if self.values.min() < lo - 1e-12 or self.values.max() > hi + 1e-12:
            raise FieldRangeError(
                f"lambda values outside [{lo}, {hi}]: "
                f"min={self.values.min():.4g} max={self.values.max():.4g}"
            )

    @classmethod
    def ones(cls, mesh: FaceMesh) -> "LambdaField":
        return cls(np.ones(mesh.n_vertices), mesh.topology_id)


def compute_laplacians(mesh: FaceMesh) -> LaplacianSet:
    """delta_i = v_i - mean of one-ring neighbors (uniform weights)."""
    lap = uniform_laplacian(mesh)
    return LaplacianSet(lap @ mesh.vertices, weighting="uniform")


class SolverContext:
    """Prefactorized reconstruction systems, reusable across geometry and
    lambda fields sharing a topology. Immutable after construction; safe to
    share across concurrent solves."""

    def __init__(self, mesh: FaceMesh, anchor_weight: float = config.ANCHOR_WEIGHT):
        if mesh.anchor_set.size == 0:
            raise InvalidMeshError("cannot prefactor without anchors")
        if anchor_weight <= 0:
            raise ValueError("anchor weight must be positive")
        self.topology_id = mesh.topology_id
        self.anchor_weight = float(anchor_weight)
        self.anchors = mesh.anchor_set.copy()
        self.laplacian = uniform_laplacian(mesh).tocsr()
        n = mesh.n_vertices
        a_sel = sp.csr_matrix(
            (
                np.ones(self.anchors.shape[0]),
                (np.arange(self.anchors.shape[0]), self.anchors),
            ),
            shape=(self.anchors.shape[0], n),
        )
        self._anchor_sel = a_sel
        lt = self.laplacian.T
        normal = (lt @ self.laplacian + self.anchor_weight * (a_sel.T @ a_sel)).tocsc()
        self._factor = splu(normal)
        self._handle_factors = {}

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._factor.solve(rhs)

    def handle_factor(
        self,
        handle_idx: np.ndarray,
        handle_weight: float,
        position_weight: float = 0.0,
    ):
        """Factor of (L^T L + w_a A^T A + w_h H^T H + w_p I) for handle solves.

        The optional uniform position prior w_p damps the overshoot of the
        biharmonic-type system away from the handles. Cached per (handle set,
        weights); the feature-curve handle set is fixed by topology so a
        session hits the cache after the first edit.
        """
        key = (handle_idx.tobytes(), float(handle_weight), float(position_weight))
        fac = self._handle_factors.get(key)
        if fac is None:
            n = self.laplacian.shape[0]
            h_sel = sp.csr_matrix(
                (
                    np.ones(handle_idx.shape[0]),
                    (np.arange(handle_idx.shape[0]), handle_idx),
                ),
                shape=(handle_idx.shape[0], n),
            )
            lt = self.laplacian.T
            normal = (
                lt @ self.laplacian
                + self.anchor_weight * (self._anchor_sel.T @ self._anchor_sel)
                + handle_weight * (h_sel.T @ h_sel)
                + position_weight * sp.eye(n)
            ).tocsc()
            fac = splu(normal)
            self._handle_factors[key] = fac
        return fac


def prefactor(mesh: FaceMesh, anchor_weight: float = config.ANCHOR_WEIGHT) -> SolverContext:
    return SolverContext(mesh, anchor_weight)


def exaggerate(mesh: FaceMesh, lam: LambdaField, ctx: SolverContext) -> FaceMesh:
    """Reconstruct vertices from lambda-scaled Laplacians.

    Minimizes ||L V' - Lam L V||^2 + w_a sum_anchors ||v'_k - v_k||^2 using the
    prefactored normal equations in ctx.
    """
    if lam.topology_id != mesh.topology_id or ctx.topology_id != mesh.topology_id:
        raise TopologyMismatchError("mesh / lambda / context topology differ")
    if lam.values.shape[0] != mesh.n_vertices:
        raise FieldRangeError("lambda length != vertex count")
    lo, hi = lam.bounds
    if lam.values.min() < lo - 1e-12 or lam.values.max() > hi + 1e-12:
        raise FieldRangeError("lambda values out of bounds")
    lap = ctx.laplacian
    deltas = lap @ mesh.vertices
    scaled = lam.values[:, None] * deltas
    rhs = lap.T @ scaled + ctx.anchor_weight * (
        ctx._anchor_sel.T @ mesh.vertices[ctx.anchors]
    )
    return mesh.with_vertices(ctx.solve(rhs))


def vertex_normals(mesh: FaceMesh) -> np.ndarray:
    """Area-weighted average of incident triangle normals, unit length."""
    v = mesh.vertices
    tri = mesh.triangles
    e1 = v[tri[:, 1]] - v[tri[:, 0]]
    e2 = v[tri[:, 2]] - v[tri[:, 0]]
    fn = np.cross(e1, e2)  # |fn| = 2 * area
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, tri[:, k], fn)
    norms = np.linalg.norm(acc, axis=1)
    bad = norms < 1e-300
    if bad.any():
        raise InvalidMeshError(
            f"zero-area one-ring at vertex {int(np.nonzero(bad)[0][0])}"
        )
    return acc / norms[:, None]


def _triangle_frames(vertices: np.ndarray, tri: np.ndarray):
    """Per-triangle 3x3 frames [e1, e2, n/sqrt|n|] and the fourth vertices."""
    v0 = vertices[tri[:, 0]]
    e1 = vertices[tri[:, 1]] - v0
    e2 = vertices[tri[:, 2]] - v0
    n = np.cross(e1, e2)
    nlen = np.linalg.norm(n, axis=1)
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    bad = nlen <= 1e-12 * np.maximum(scale, 1e-30)
    if bad.any():
        raise DegenerateTriangleError(int(np.nonzero(bad)[0][0]))
    n4 = n / np.sqrt(nlen)[:, None]
    frames = np.stack([e1, e2, n4], axis=2)  # (M,3,3), columns are edges
    return frames, v0 + n4


def deformation_transfer(
    source_neutral: FaceMesh,
    source_expr: FaceMesh,
    target_neutral: FaceMesh,
    anchor_weight: float = config.ANCHOR_WEIGHT,
) -> FaceMesh:
    """Transfer source_neutral -> source_expr deformation onto target_neutral.

    Matches per-triangle deformation gradients in least squares (with the
    standard fourth-vertex normal construction) while penalizing anchor
    displacement, so the result keeps the target identity but performs the
    source expression.
    """
    tid = source_neutral.topology_id
    if source_expr.topology_id != tid or target_neutral.topology_id != tid:
        raise TopologyMismatchError("deformation transfer requires shared topology")
    tri = target_neutral.triangles
    n, m = target_neutral.n_vertices, target_neutral.n_triangles

    src_frames, _ = _triangle_frames(source_neutral.vertices, source_neutral.triangles)
    expr_frames, _ = _triangle_frames(source_expr.vertices, source_expr.triangles)
    tgt_frames, _ = _triangle_frames(target_neutral.vertices, tri)
    grad = expr_frames @ np.linalg.inv(src_frames)  # (M,3,3) source gradients
    want = grad @ tgt_frames  # desired target edge matrices

    # rows: 3 per triangle (edges to v1, v2 and the fourth vertex), unknowns:
    # n vertices then m fourth vertices; per-coordinate systems share a matrix
    tri_ids = np.arange(m)
    col_pos = np.concatenate(
        [tri[:, 1], tri[:, 2], n + tri_ids]
    )  # target of each edge row
    col_neg = np.concatenate([tri[:, 0], tri[:, 0], tri[:, 0]])
    row_ids = np.concatenate([3 * tri_ids, 3 * tri_ids + 1, 3 * tri_ids + 2])
    g = sp.csr_matrix(
        (
            np.concatenate([np.ones(3 * m), -np.ones(3 * m)]),
            (
                np.concatenate([row_ids, row_ids]),
                np.concatenate([col_pos, col_neg]),
            ),
        ),
        shape=(3 * m, n + m),
    )
    b = np.empty((3 * m, 3))
    b[row_ids[:m]] = want[:, :, 0]
    b[row_ids[m : 2 * m]] = want[:, :, 1]
    b[row_ids[2 * m :]] = want[:, :, 2]

    anchors = target_neutral.anchor_set
    a_sel = sp.csr_matrix(
        (np.ones(anchors.shape[0]), (np.arange(anchors.shape[0]), anchors)),
        shape=(anchors.shape[0], n + m),
    )
    factor = _transfer_factor(target_neutral, anchor_weight, g, a_sel)
    rhs = g.T @ b + anchor_weight * (a_sel.T @ target_neutral.vertices[anchors])
    x = factor.solve(rhs)
    return target_neutral.with_vertices(x[:n])


_TRANSFER_CACHE: dict = {}


def _transfer_factor(mesh: FaceMesh, anchor_weight: float, g, a_sel):
    key = (mesh.topology_id, float(anchor_weight))
    fac = _TRANSFER_CACHE.get(key)
    if fac is None:
        normal = (g.T @ g + anchor_weight * (a_sel.T @ a_sel)).tocsc()
        fac = splu(normal)
        if len(_TRANSFER_CACHE) > 8:
            _TRANSFER_CACHE.clear()
        _TRANSFER_CACHE[key] = fac
    return fac


# ---------------------------------------------------------------------------
# Mesh I/O: OBJ with fixed vertex ordering + sidecar JSON for labels/curves.


def save_mesh(mesh: FaceMesh, obj_path) -> None:
    obj_path = Path(obj_path)
    lines = ["# caricature-forge face mesh"]
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    obj_path.write_text("\n".join(lines) + "\n")
    sidecar = {
        "region_labels": [REGIONS[i] for i in mesh.region_labels],
        "feature_curves": {k: v.tolist() for k, v in mesh.feature_curves.items()},
        "anchor_set": mesh.anchor_set.tolist(),
        "topology_id": f"{mesh.topology_id:016x}",
    }
    obj_path.with_suffix(".json").write_text(json.dumps(sidecar))


def load_mesh(obj_path) -> FaceMesh:
    obj_path = Path(obj_path)
    verts, tris = [], []
    for line in obj_path.read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(x) for x in line.split()[1:4]])
        elif line.startswith("f "):
            idx = [int(tok.split("/")[0]) - 1 for tok in line.split()[1:4]]
            tris.append(idx)
    sidecar = json.loads(obj_path.with_suffix(".json").read_text())
    mesh = FaceMesh(
        np.array(verts),
        np.array(tris, dtype=np.int32),
        np.array([region_id(r) for r in sidecar["region_labels"]], dtype=np.int8),
        {k: np.array(v, dtype=np.int32) for k, v in sidecar["feature_curves"].items()},
        np.array(sidecar["anchor_set"], dtype=np.int32),
    )
    expected = sidecar.get("topology_id")
    if expected is not None and int(expected, 16) != mesh.topology_id:
        raise InvalidMeshError("topology id mismatch between OBJ and sidecar")
    return mesh
