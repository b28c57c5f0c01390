"""Textured z-buffer rasterization into the image frame and grid-based
as-similar-as-possible background warping.

Images are float64 linear RGB in [0,1], shape (H, W, 3); masks are bool.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import config
from ._kernels import grid_resample, render_mesh
from .errors import SolverError, TopologyMismatchError
from .mesh import FaceMesh, region_id, vertex_normals
from .sketch import Camera

log = logging.getLogger(__name__)


@dataclass
class RenderOutput:
    """Foreground render plus the per-pixel geometry the compositor needs."""

    color: np.ndarray  # (H,W,3) linear RGB
    mask: np.ndarray  # (H,W) bool coverage
    normals_before: np.ndarray  # (H,W,3), unit on covered pixels
    normals_after: np.ndarray  # (H,W,3)
    stretch: np.ndarray  # (H,W) screen-area ratio after/before
    depth: np.ndarray  # (H,W), inf where uncovered


def _screen_areas(xy: np.ndarray, tris: np.ndarray) -> np.ndarray:
    e1 = xy[tris[:, 1]] - xy[tris[:, 0]]
    e2 = xy[tris[:, 2]] - xy[tris[:, 0]]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def render_textured(
    mesh_src: FaceMesh,
    mesh_dst: FaceMesh,
    cam: Camera,
    image: np.ndarray,
    exclude_regions=("eyes", "mouth"),
) -> RenderOutput:
    """Rasterize mesh_dst textured by projecting mesh_src into `image`.

    Texture coordinates are the source-mesh projections, so rendering the
    un-deformed mesh reproduces the photo on covered pixels. Interior regions
    named in `exclude_regions` are skipped (their content is filled from the
    warped background later). Stretch is the per-triangle screen-area ratio
    dst/src, the blur driver for detail enhancement.
    """
    if mesh_src.topology_id != mesh_dst.topology_id:
        raise TopologyMismatchError("render requires shared topology")
    h, w = image.shape[:2]
    tex_xy = cam.project(mesh_src.vertices)
    xy = cam.project(mesh_dst.vertices)
    depth = cam.depth(mesh_dst.vertices)
    tris = mesh_dst.triangles

    areas_dst = _screen_areas(xy, tris)
    areas_src = _screen_areas(tex_xy, tris)
    # front-facing in y-down screen coords means negative signed area
    keep = areas_dst < -1e-12
    visible = np.abs(areas_dst[keep]).sum()
    total = np.abs(areas_dst).sum()
    if total == 0 or visible / total < 0.25:
        raise SolverError("camera faces the back of the mesh (nothing to render)")
    if exclude_regions:
        ids = np.array([region_id(r) for r in exclude_regions], dtype=np.int8)
        vert_excluded = np.isin(mesh_dst.region_labels, ids)
        tri_excluded = vert_excluded[tris].all(axis=1)
        keep = keep & ~tri_excluded

    denom = np.where(np.abs(areas_src) < 1e-12, 1e-12, np.abs(areas_src))
    tri_stretch = np.abs(areas_dst) / denom

    n_src = vertex_normals(mesh_src) @ cam.rotation.T
    n_dst = vertex_normals(mesh_dst) @ cam.rotation.T

    color, mask, nb, na, stretch, zbuf = render_mesh(
        xy,
        depth,
        tris,
        keep.astype(np.uint8),
        tex_xy,
        np.ascontiguousarray(image, dtype=np.float64),
        n_src,
        n_dst,
        tri_stretch,
        h,
        w,
    )
    mask = mask.astype(bool)
    for buf in (nb, na):
        norms = np.linalg.norm(buf, axis=2)
        good = mask & (norms > 1e-12)
        buf[good] /= norms[good][:, None]
    return RenderOutput(color, mask, nb, na, stretch, zbuf)


def rasterize_screen_attributes(mesh: FaceMesh, cam: Camera, attrs: np.ndarray):
    """Z-buffered rasterization of per-vertex 3-vectors (no texture lookup)."""
    xy = cam.project(mesh.vertices)
    depth = cam.depth(mesh.vertices)
    areas = _screen_areas(xy, mesh.triangles)
    keep = (areas < -1e-12).astype(np.uint8)
    w, h = cam.image_size
    dummy = np.zeros((1, 1, 3))
    _, mask, raster, _, _, _ = render_mesh(
        xy,
        depth,
        mesh.triangles,
        keep,
        xy,
        dummy,
        np.ascontiguousarray(attrs, dtype=np.float64),
        np.zeros_like(attrs),
        np.ones(mesh.n_triangles),
        h,
        w,
    )
    return raster, mask.astype(bool)


@dataclass
class WarpGrid:
    """Regular triangulated grid over the image."""

    rest: np.ndarray  # (G,2)
    deformed: np.ndarray  # (G,2)
    tris: np.ndarray  # (T,3) int32
    shape: tuple  # (nodes_y, nodes_x)
    constrained: np.ndarray  # (G,) bool


def build_grid(width: int, height: int, cell: int = config.WARP_CELL_SIZE) -> WarpGrid:
    nx = max(int(np.ceil(width / cell)) + 1, 2)
    ny = max(int(np.ceil(height / cell)) + 1, 2)
    xs = np.linspace(0.0, float(width), nx)
    ys = np.linspace(0.0, float(height), ny)
    gx, gy = np.meshgrid(xs, ys)
    rest = np.column_stack([gx.ravel(), gy.ravel()])
    tris = []
    for iy in range(ny - 1):
        for ix in range(nx - 1):
            a = iy * nx + ix
            b = a + 1
            c = a + nx + 1
            d = a + nx
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris = np.array(tris, dtype=np.int32)
    constrained = np.zeros(rest.shape[0], dtype=bool)
    return WarpGrid(rest, rest.copy(), tris, (ny, nx), constrained)


def _similarity_rows(grid: WarpGrid):
    """Sparse energy matrix E over stacked (x0,y0,x1,y1,...) unknowns.

    Per triangle: p2-p0 must stay the rest-pose similarity combination
    alpha*(p1-p0) + beta*perp(p1-p0); deviation is the warp energy.
    """
    r = grid.rest
    t = grid.tris
    e = r[t[:, 1]] - r[t[:, 0]]
    d = r[t[:, 2]] - r[t[:, 0]]
    den = (e * e).sum(axis=1)
    alpha = (e * d).sum(axis=1) / den
    beta = (e[:, 0] * d[:, 1] - e[:, 1] * d[:, 0]) / den

    m = t.shape[0]
    rows, cols, vals = [], [], []

    def add(row, node, comp, val):
        rows.append(row)
        cols.append(2 * node + comp)
        vals.append(val)

    for k in range(m):
        a, b, c = t[k]
        al, be = alpha[k], beta[k]
        rx = 2 * k
        ry = 2 * k + 1
        # x: (x2-x0) - al*(x1-x0) + be*(y1-y0) = 0
        add(rx, c, 0, 1.0)
        add(rx, a, 0, -1.0 + al)
        add(rx, b, 0, -al)
        add(rx, b, 1, be)
        add(rx, a, 1, -be)
        # y: (y2-y0) - al*(y1-y0) - be*(x1-x0) = 0
        add(ry, c, 1, 1.0)
        add(ry, a, 1, -1.0 + al)
        add(ry, b, 1, -al)
        add(ry, b, 0, -be)
        add(ry, a, 0, be)
    n = 2 * grid.rest.shape[0]
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * m, n))


def solve_warp(
    grid: WarpGrid,
    handle_idx: np.ndarray,
    handle_pos: np.ndarray,
    arap_iterations: int = 0,
) -> WarpGrid:
    """Minimize the similarity energy with handles and the image border fixed.

    Constrained DOFs are eliminated exactly (no penalty weights); free nodes
    come from one sparse solve. `arap_iterations > 0` adds local/global
    as-rigid-as-possible refinement: per-triangle rotations are fitted to the
    current solution and the edge system is re-solved against them (the
    factorization is reused, only right-hand sides change).
    """
    g = grid.rest.shape[0]
    ny, nx = grid.shape
    border = np.zeros(g, dtype=bool)
    idx = np.arange(g).reshape(ny, nx)
    border[idx[0]] = border[idx[-1]] = True
    border[idx[:, 0]] = border[idx[:, -1]] = True

    fixed_pos = grid.rest.copy()
    fixed = border.copy()
    fixed[handle_idx] = True
    fixed_pos[handle_idx] = handle_pos
    # border wins over handles so the photo frame never moves
    fixed_pos[border] = grid.rest[border]

    e = _similarity_rows(grid)
    dof_fixed = np.repeat(fixed, 2)
    x_full = np.empty(2 * g)
    x_full[0::2] = fixed_pos[:, 0]
    x_full[1::2] = fixed_pos[:, 1]

    e_free = e[:, ~dof_fixed]
    rhs = -(e[:, dof_fixed] @ x_full[dof_fixed])
    normal = (e_free.T @ e_free).tocsc()
    try:
        factor = splu(normal)
        sol = factor.solve(e_free.T @ rhs)
    except RuntimeError as exc:  # singular factorization
        raise SolverError(f"warp solve failed: {exc}") from exc
    x_full[~dof_fixed] = sol
    deformed = np.column_stack([x_full[0::2], x_full[1::2]])

    if arap_iterations > 0:
        er, factor_r, dof_fixed_r = _edge_rows(grid, fixed)
        for _ in range(arap_iterations):
            targets = _rotation_fitted_edges(grid, deformed)
            xr = np.empty(2 * g)
            xr[0::2] = fixed_pos[:, 0]
            xr[1::2] = fixed_pos[:, 1]
            rhs_r = targets - er[:, dof_fixed_r] @ xr[dof_fixed_r]
            xr[~dof_fixed_r] = factor_r.solve(er[:, ~dof_fixed_r].T @ rhs_r)
            deformed = np.column_stack([xr[0::2], xr[1::2]])
    return WarpGrid(grid.rest, deformed, grid.tris, grid.shape, fixed)


def _edge_rows(grid: WarpGrid, fixed):
    """Plain edge-difference rows (p1'-p0', p2'-p0') for ARAP refinement."""
    t = grid.tris
    m = t.shape[0]
    rows, cols, vals = [], [], []
    for k in range(m):
        a, b, c = t[k]
        for r, (u, v) in enumerate(((a, b), (a, c))):
            for comp in range(2):
                row = 4 * k + 2 * r + comp
                rows += [row, row]
                cols += [2 * v + comp, 2 * u + comp]
                vals += [1.0, -1.0]
    n = 2 * grid.rest.shape[0]
    er = sp.csr_matrix((vals, (rows, cols)), shape=(4 * m, n))
    dof_fixed = np.repeat(fixed, 2)
    e_free = er[:, ~dof_fixed]
    factor = splu((e_free.T @ e_free).tocsc())
    return er, factor, dof_fixed


def _rotation_fitted_edges(grid: WarpGrid, deformed):
    """Per-triangle rest edges rotated by the nearest pure rotation to the
    current deformation gradient."""
    r = grid.rest
    t = grid.tris
    e1r = r[t[:, 1]] - r[t[:, 0]]
    e2r = r[t[:, 2]] - r[t[:, 0]]
    e1d = deformed[t[:, 1]] - deformed[t[:, 0]]
    e2d = deformed[t[:, 2]] - deformed[t[:, 0]]
    # covariance S = D R^T summed over the two edges; nearest rotation via
    # the closed 2D polar form
    a = (e1d[:, 0] * e1r[:, 0] + e1d[:, 1] * e1r[:, 1]
         + e2d[:, 0] * e2r[:, 0] + e2d[:, 1] * e2r[:, 1])
    b = (e1d[:, 1] * e1r[:, 0] - e1d[:, 0] * e1r[:, 1]
         + e2d[:, 1] * e2r[:, 0] - e2d[:, 0] * e2r[:, 1])
    norm = np.sqrt(a * a + b * b)
    norm = np.where(norm < 1e-12, 1.0, norm)
    cos = a / norm
    sin = b / norm
    out = np.empty(4 * t.shape[0])
    for r_i, (ex, ey) in enumerate(((e1r[:, 0], e1r[:, 1]), (e2r[:, 0], e2r[:, 1]))):
        out[2 * r_i :: 4] = cos * ex - sin * ey
        out[2 * r_i + 1 :: 4] = sin * ex + cos * ey
    return out


def bind_grid_constraints(
    grid: WarpGrid,
    points: np.ndarray,
    displacements: np.ndarray,
    radius: float,
):
    """Average point displacements onto grid nodes within `radius`.

    Returns (node indices, target positions) for solve_warp.
    """
    acc = np.zeros_like(grid.rest)
    cnt = np.zeros(grid.rest.shape[0])
    ny, nx = grid.shape
    xs = grid.rest[:nx, 0]
    ys = grid.rest[::nx, 1]
    step_x = xs[1] - xs[0]
    step_y = ys[1] - ys[0]
    jj = np.round(points[:, 0] / step_x).astype(int)
    ii = np.round(points[:, 1] / step_y).astype(int)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            i = np.clip(ii + di, 0, ny - 1)
            j = np.clip(jj + dj, 0, nx - 1)
            node = i * nx + j
            dist = np.linalg.norm(grid.rest[node] - points, axis=1)
            ok = dist <= radius
            np.add.at(acc, node[ok], displacements[ok])
            np.add.at(cnt, node[ok], 1.0)
    bound = cnt > 0
    acc[bound] /= cnt[bound, None]
    idx = np.nonzero(bound)[0]
    return idx, grid.rest[idx] + acc[idx]


def warp_background(
    image: np.ndarray,
    mesh_src: FaceMesh,
    mesh_dst: FaceMesh,
    cam: Camera,
    cell: int = config.WARP_CELL_SIZE,
) -> np.ndarray:
    """Warp the photo so it follows the projected mesh deformation.

    Front-facing vertex displacements drive nearby grid nodes; everything else
    moves as-similar-as-possible with the image border pinned.
    """
    if mesh_src.topology_id != mesh_dst.topology_id:
        raise TopologyMismatchError("warp requires shared topology")
    p_src = cam.project(mesh_src.vertices)
    p_dst = cam.project(mesh_dst.vertices)
    if np.array_equal(mesh_src.vertices, mesh_dst.vertices):
        return image.copy()

    normals_cam = vertex_normals(mesh_src) @ cam.rotation.T
    front = normals_cam[:, 2] < 0.0
    h, w = image.shape[:2]
    grid = build_grid(w, h, cell)
    idx, target = bind_grid_constraints(
        grid, p_src[front], (p_dst - p_src)[front], radius=float(cell)
    )
    solved = solve_warp(grid, idx, target)
    out, covered, inverted = grid_resample(
        np.ascontiguousarray(image, dtype=np.float64),
        solved.rest,
        solved.deformed,
        solved.tris,
        np.zeros(image.shape[2]),
    )
    if inverted:
        log.warning("background warp produced %d inverted cells", inverted)
    out[covered == 0] = image[covered == 0]
    return out
