"""Foreground/background fusion: graph-cut seam, Poisson blending, spherical-
harmonics lighting estimation, ratio reshading with boundary control, and the
mouth/ear refinement operations.

All images are float64 linear RGB (or single channel) in [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import config
from ._kernels import maxflow
from .errors import InsufficientRegionError, SolverError
from .render import RenderOutput, build_grid, grid_resample, solve_warp
from .sketch import resample_polyline

_INF = 1e18

# real 2nd-order spherical harmonics basis constants
_SH_C = (
    0.2820947917738781,
    0.4886025119029199,
    1.0925484305920792,
    0.31539156525252005,
    0.5462742152960396,
)


def sh_basis(normals: np.ndarray) -> np.ndarray:
    """Evaluate the 9 real SH basis functions at unit normals (..., 3)."""
    n = np.asarray(normals, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    out = np.stack(
        [
            np.full_like(x, _SH_C[0]),
            _SH_C[1] * y,
            _SH_C[1] * z,
            _SH_C[1] * x,
            _SH_C[2] * x * y,
            _SH_C[2] * y * z,
            _SH_C[3] * (3.0 * z * z - 1.0),
            _SH_C[2] * x * z,
            _SH_C[4] * (x * x - y * y),
        ],
        axis=-1,
    )
    return out


def uniform_sphere_normals(n: int) -> np.ndarray:
    """Fibonacci-spiral unit vectors, deterministic."""
    i = np.arange(n, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


@dataclass
class SHLighting:
    """Second-order real SH lighting, gray-scale radiance."""

    coeffs: np.ndarray  # (9,)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(9)
        if not np.isfinite(self.coeffs).all():
            raise ValueError("SH coefficients must be finite")
        if self.evaluate(uniform_sphere_normals(1000)).mean() <= 0:
            raise ValueError("SH lighting must have positive mean radiance")

    def evaluate(self, normals: np.ndarray) -> np.ndarray:
        return sh_basis(normals) @ self.coeffs


@dataclass
class SeamResult:
    """Foreground/background pixel labeling from the band min-cut."""

    labels: np.ndarray  # (H,W) bool, True = use foreground
    cost: float
    blend_mask: np.ndarray  # alias of labels (region to Poisson-blend)


@dataclass
class AlphaMap:
    """Per-pixel shading scale; exactly 1 on and outside the face boundary."""

    values: np.ndarray  # (H,W)
    region: np.ndarray  # (H,W) bool face region


def to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image
    return image @ np.array([0.2126, 0.7152, 0.0722])


# ---------------------------------------------------------------------------
# Seam cut


def _build_band_graph(comp_mask, src_mask, snk_mask, diff):
    """Arc arrays for the Dinic kernel over one band component."""
    h, w = comp_mask.shape
    idx = np.full((h, w), -1, dtype=np.int64)
    pix = np.nonzero(comp_mask)
    n_pix = pix[0].shape[0]
    idx[pix] = np.arange(n_pix)
    s, t = n_pix, n_pix + 1

    us, vs, ws = [], [], []
    # 4-neighbor pairs inside the component (right and down only, undirected)
    for dy, dx in ((0, 1), (1, 0)):
        a = comp_mask[: h - dy, : w - dx] & comp_mask[dy:, dx:]
        ai, aj = np.nonzero(a)
        us.append(idx[ai, aj])
        vs.append(idx[ai + dy, aj + dx])
        ws.append(diff[ai, aj] + diff[ai + dy, aj + dx])
    us = np.concatenate(us)
    vs = np.concatenate(vs)
    ws = np.concatenate(ws)

    src_ids = idx[src_mask & comp_mask]
    snk_ids = idx[snk_mask & comp_mask & ~src_mask]

    n_arcs = 2 * (us.shape[0] + src_ids.shape[0] + snk_ids.shape[0])
    edge_to = np.empty(n_arcs, dtype=np.int64)
    edge_cap = np.empty(n_arcs, dtype=np.float64)
    frm = np.empty(n_arcs, dtype=np.int64)
    k = 0
    for u, v, cap, rcap in (
        (us, vs, ws, ws),
        (np.full(src_ids.shape[0], s), src_ids, np.full(src_ids.shape[0], _INF), np.zeros(src_ids.shape[0])),
        (snk_ids, np.full(snk_ids.shape[0], t), np.full(snk_ids.shape[0], _INF), np.zeros(snk_ids.shape[0])),
    ):
        m = u.shape[0]
        edge_to[k : k + 2 * m : 2] = v
        edge_to[k + 1 : k + 2 * m : 2] = u
        edge_cap[k : k + 2 * m : 2] = cap
        edge_cap[k + 1 : k + 2 * m : 2] = rcap
        frm[k : k + 2 * m : 2] = u
        frm[k + 1 : k + 2 * m : 2] = v
        k += 2 * m

    n_nodes = n_pix + 2
    head = np.full(n_nodes, -1, dtype=np.int64)
    edge_next = np.empty(n_arcs, dtype=np.int64)
    for e in range(n_arcs):
        f = frm[e]
        edge_next[e] = head[f]
        head[f] = e
    return n_nodes, head, edge_next, edge_to, edge_cap, s, t, idx


def seam_cut(
    fg: RenderOutput, bg: np.ndarray, band_width: int = config.SEAM_BAND_WIDTH
) -> SeamResult:
    """Min-cut labeling on the overlap band just inside the foreground mask.

    Edge weight between neighbors p,q is |fg(p)-bg(p)| + |fg(q)-bg(q)| (color
    L2), so the seam tracks pixels where the two images already agree. The
    inner ring (eroded core boundary) seeds foreground, the mask boundary
    seeds background; disconnected band components are cut independently.
    """
    mask = fg.mask
    if not mask.any():
        raise ValueError("empty foreground mask")
    # band on the hole-filled outline: interior holes (excluded eye/mouth
    # regions) are filled from the background later, not cut around
    outline = ndi.binary_fill_holes(mask)
    core = ndi.binary_erosion(outline, iterations=band_width)
    if not core.any():
        dist = ndi.distance_transform_edt(outline)
        core = dist >= max(1.0, dist.max() - 0.5)
    band = outline & ~core

    diff = np.linalg.norm(fg.color - bg, axis=2)
    labels = core & mask
    total_cost = 0.0
    if not band.any():
        return SeamResult(labels, 0.0, labels)

    near_core = ndi.binary_dilation(core) & band
    outside = ~outline
    near_out = ndi.binary_dilation(outside) & band

    comp_lab, n_comp = ndi.label(band)
    for c in range(1, n_comp + 1):
        comp = comp_lab == c
        has_src = (near_core & comp).any()
        has_snk = (near_out & comp).any()
        if not has_src:
            continue  # no foreground certainty: stays background
        if not has_snk:
            labels |= comp & mask
            continue
        n_nodes, head, edge_next, edge_to, edge_cap, s, t, idx = _build_band_graph(
            comp, near_core, near_out, diff
        )
        flow, side = maxflow(n_nodes, head, edge_next, edge_to, edge_cap, s, t)
        total_cost += float(flow)
        comp_ids = idx[comp]
        fg_side = side[comp_ids].astype(bool)
        sub = np.zeros_like(labels)
        sub[comp] = fg_side
        labels |= sub & mask
    return SeamResult(labels, total_cost, labels)


# ---------------------------------------------------------------------------
# Poisson machinery (shared by blending, alpha boundary control, interior fill)


def _region_system(region: np.ndarray):
    """CSR 5-point Laplacian over region pixels with in-image degrees."""
    h, w = region.shape
    idx = np.full((h, w), -1, dtype=np.int64)
    pi, pj = np.nonzero(region)
    n = pi.shape[0]
    idx[pi, pj] = np.arange(n)

    deg = np.zeros(n)
    rows, cols = [], []
    shifts = ((0, 1), (0, -1), (1, 0), (-1, 0))
    neighbor_out = []  # (pixel row ids, neighbor i, neighbor j) leaving region
    for dy, dx in shifts:
        ni = pi + dy
        nj = pj + dx
        in_img = (ni >= 0) & (ni < h) & (nj >= 0) & (nj < w)
        deg += in_img
        nin = np.zeros(n, dtype=bool)
        nin[in_img] = region[ni[in_img], nj[in_img]]
        rows.append(np.nonzero(nin)[0])
        cols.append(idx[ni[nin], nj[nin]])
        out = in_img & ~nin
        neighbor_out.append((np.nonzero(out)[0], ni[out], nj[out]))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    a = sp.csr_matrix(
        (np.full(rows.shape[0], -1.0), (rows, cols)), shape=(n, n)
    ) + sp.diags(deg)
    return a.tocsr(), idx, (pi, pj), deg, neighbor_out


def _region_laplacian_of(values, pi, pj, deg, region_shape):
    """deg*v_p - sum of in-image neighbor values (the guidance Laplacian)."""
    h, w = region_shape
    out = deg * values[pi, pj]
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        ni = np.clip(pi + dy, 0, h - 1)
        nj = np.clip(pj + dx, 0, w - 1)
        in_img = (pi + dy >= 0) & (pi + dy < h) & (pj + dx >= 0) & (pj + dx < w)
        out -= np.where(in_img, values[ni, nj], 0.0)
    return out


def _pcg(a, b, x0, deg, tol, max_iters):
    """Jacobi-preconditioned conjugate gradient; returns (x, rel_residual)."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0.0
    x = x0.copy()
    r = b - a @ x
    minv = 1.0 / deg
    z = minv * r
    p = z.copy()
    rz = r @ z
    for _ in range(max_iters):
        if np.linalg.norm(r) <= tol * bnorm:
            break
        ap = a @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, float(np.linalg.norm(r) / bnorm)


def poisson_solve_region(
    region: np.ndarray,
    guidance: np.ndarray,
    dirichlet: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = config.POISSON_TOL,
    max_iters: int = config.POISSON_MAX_ITERS,
) -> np.ndarray:
    """Solve lap(u) = lap(guidance) on region, u = dirichlet outside.

    Returns a full image equal to `dirichlet` outside the region and to the
    membrane solution inside. Single channel.
    """
    out = dirichlet.astype(np.float64).copy()
    if not region.any():
        return out
    a, _, (pi, pj), deg, neighbor_out = _region_system(region)
    rhs = _region_laplacian_of(guidance, pi, pj, deg, region.shape)
    for rows, ni, nj in neighbor_out:
        np.add.at(rhs, rows, dirichlet[ni, nj])
    x0v = guidance[pi, pj] if x0 is None else x0[pi, pj]
    x, rel = _pcg(a, rhs, x0v, deg, tol, max_iters)
    if rel > tol:
        raise SolverError(f"poisson solve stalled at relative residual {rel:.2e}")
    out[pi, pj] = x
    return out


def poisson_blend(fg: RenderOutput, bg: np.ndarray, seam: SeamResult) -> np.ndarray:
    """Gradient-domain composite: fg gradients inside the seam, bg outside."""
    region = seam.labels
    fgx = np.where(fg.mask[..., None], fg.color, bg)
    out = bg.copy()
    for c in range(bg.shape[2]):
        out[..., c] = poisson_solve_region(region, fgx[..., c], bg[..., c])
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Interior fill (eyes / mouth / templates)


def mask_boundary_polyline(mask: np.ndarray, n_points: int = 64) -> np.ndarray:
    """Ordered boundary polyline of a (star-shaped) mask region, closed.

    Boundary pixels are ordered by angle around the centroid; adequate for the
    elliptical eye/mouth interior regions this engine fills.
    """
    ring = mask & ~ndi.binary_erosion(mask)
    yy, xx = np.nonzero(ring)
    if yy.size == 0:
        return np.zeros((0, 2))
    cy, cx = yy.mean(), xx.mean()
    ang = np.arctan2(yy - cy, xx - cx)
    order = np.argsort(ang)
    pts = np.column_stack([xx[order] + 0.5, yy[order] + 0.5])
    pts = np.concatenate([pts, pts[:1]], axis=0)
    return resample_polyline(pts, n_points, closed=False)


def fill_interior(
    composite: np.ndarray,
    source: np.ndarray,
    src_mask: np.ndarray,
    dst_mask: np.ndarray | None = None,
    cell: int = config.WARP_CELL_SIZE,
) -> np.ndarray:
    """Fill dst_mask of the composite with source content warped so the source
    mask boundary lands on the destination boundary, then Poisson-blend.

    With identical boundaries this degrades to a direct copy. `source` may be
    the warped background (eyes/mouth fill) or a pasted template image.
    """
    if not src_mask.any():
        return composite.copy()
    if dst_mask is None:
        dst_mask = src_mask
    h, w = composite.shape[:2]

    if np.array_equal(src_mask, dst_mask):
        warped = source
    else:
        b_src = mask_boundary_polyline(src_mask)
        b_dst = mask_boundary_polyline(dst_mask)
        grid = build_grid(w, h, cell)
        disp = b_dst - b_src
        from .render import bind_grid_constraints

        idx, target = bind_grid_constraints(grid, b_src, disp, radius=float(cell))
        solved = solve_warp(grid, idx, target)
        warped, covered, _ = grid_resample(
            np.ascontiguousarray(source, dtype=np.float64),
            solved.rest,
            solved.deformed,
            solved.tris,
            np.zeros(source.shape[2]),
        )
        warped[covered == 0] = source[covered == 0]

    out = composite.copy()
    for c in range(composite.shape[2]):
        out[..., c] = poisson_solve_region(
            dst_mask, warped[..., c], composite[..., c]
        )
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Lighting estimation and reshading


def estimate_lighting(
    image_gray: np.ndarray,
    render: RenderOutput,
    region_mask: np.ndarray,
    alternations: int = config.LIGHT_ALTERNATIONS,
    albedo_smoothness: float = 0.5,
    prior_weight: float = 1e-3,
    objective_history: list | None = None,
    max_pixels: int = 20000,
) -> SHLighting:
    """Alternating albedo/lighting estimation on gray pixels of the region.

    Model: I_p = a_p * L(n_p) with 9-coefficient SH lighting. Fix-a-solve-L is
    a 9x9 least squares with an L2 prior on the non-DC coefficients; fix-L-
    solve-a is a screened smoothing solve. Regularizer scales are frozen after
    initialization so each block step exactly minimizes one fixed objective
    (monotone descent). The a*L scale gauge is fixed at the end by pinning the
    region-mean albedo to its initialization.

    Lighting is global, so oversized regions are grid-decimated to at most
    `max_pixels` samples (the decimated lattice keeps the smoothness graph).
    """
    valid = region_mask & render.mask
    n_pix = int(valid.sum())
    if n_pix < config.LIGHT_MIN_REGION:
        raise InsufficientRegionError(f"only {n_pix} region pixels")
    nb_full = render.normals_before
    if n_pix > max_pixels:
        stride = int(np.ceil(np.sqrt(n_pix / max_pixels)))
        valid = valid[::stride, ::stride]
        image_gray = image_gray[::stride, ::stride]
        nb_full = nb_full[::stride, ::stride]
        n_pix = int(valid.sum())
    normals = nb_full[valid]
    intensity = image_gray[valid]
    basis = sh_basis(normals)  # (P,9)
    a_init = float(intensity.mean())
    if a_init <= 0:
        raise InsufficientRegionError("region has zero mean intensity")
    albedo = np.full(n_pix, a_init)

    # screened-smoothing system for the albedo step (4-neighbor graph on region)
    a_mat, _, (pi, pj), deg, _ = _region_system(valid)
    lap_graph = a_mat - sp.diags(deg)  # adjacency part, -1 per in-region edge
    graph_l = sp.diags(np.asarray(-lap_graph.sum(axis=1)).ravel()) + lap_graph

    prior = np.zeros(9)
    prior[1:] = 1.0

    def l_step(a, mu):
        ya = basis * a[:, None]
        return np.linalg.solve(
            ya.T @ ya + mu * np.diag(prior), ya.T @ intensity
        )

    ya0 = basis * albedo[:, None]
    mu = prior_weight * float(np.trace(ya0.T @ ya0)) / 9.0
    coeffs = l_step(albedo, mu)
    mu_a = albedo_smoothness * float(np.mean((basis @ coeffs) ** 2))

    def objective(a, c):
        s = basis @ c
        data = float(((intensity - a * s) ** 2).sum())
        smooth = float(a @ (graph_l @ a))
        return data + mu_a * smooth + mu * float(c[1:] @ c[1:])

    if objective_history is not None:
        objective_history.append(objective(albedo, coeffs))
    for _ in range(alternations):
        # a-step: min || I - a s ||^2 + mu_a sum (a_p - a_q)^2
        s = basis @ coeffs
        sys = sp.diags(s * s) + mu_a * graph_l
        albedo = splu(sys.tocsc()).solve(s * intensity)
        # L-step: min || diag(a) Y c - I ||^2 + mu ||c_1:||^2
        coeffs = l_step(albedo, mu)
        if objective_history is not None:
            objective_history.append(objective(albedo, coeffs))
    gauge = float(albedo.mean()) / a_init
    return SHLighting(coeffs * gauge)


def build_alpha(
    light: SHLighting,
    render: RenderOutput,
    face_region: np.ndarray | None = None,
    bounds=config.ALPHA_BOUNDS,
    eps: float = config.SHADING_EPS,
    downsample: int = config.ALPHA_DOWNSAMPLE,
) -> AlphaMap:
    """Shading-ratio map L(n_after)/L(n_before) with boundary control.

    The raw ratio is re-solved as a Poisson problem with alpha = 1 clamped on
    the face-region boundary (computed at 1/downsample scale and bilinearly
    upsampled), so no halo leaks past the face outline.
    """
    region = render.mask if face_region is None else face_region
    h, w = region.shape
    l_before = np.maximum(light.evaluate(render.normals_before), eps)
    l_after = np.maximum(light.evaluate(render.normals_after), eps)
    raw = np.ones((h, w))
    raw[region] = l_after[region] / l_before[region]

    f = max(1, downsample)
    hc, wc = max(h // f, 8), max(w // f, 8)
    yy = np.linspace(0, h - 1, hc)
    xx = np.linspace(0, w - 1, wc)
    yi, xi = np.meshgrid(yy, xx, indexing="ij")
    raw_c = _bilinear_at(raw, xi, yi)
    reg_c = _bilinear_at(region.astype(np.float64), xi, yi) > 0.6
    interior_c = ndi.binary_erosion(reg_c)

    ones_c = np.ones((hc, wc))
    solved_c = poisson_solve_region(interior_c, raw_c, ones_c, x0=raw_c, tol=1e-7)

    yy_f, xx_f = np.meshgrid(
        np.linspace(0, hc - 1, h), np.linspace(0, wc - 1, w), indexing="ij"
    )
    up = _bilinear_at(solved_c, xx_f, yy_f)
    values = np.ones((h, w))
    interior_full = ndi.binary_erosion(region, iterations=max(1, f))
    values[interior_full] = up[interior_full]
    values = np.clip(values, bounds[0], bounds[1])
    values[~interior_full] = 1.0
    return AlphaMap(values, region)


def _bilinear_at(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample a single-channel image at fractional pixel indices."""
    h, w = img.shape
    x0 = np.clip(np.floor(x).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    fx = np.clip(x - x0, 0.0, 1.0)
    fy = np.clip(y - y0, 0.0, 1.0)
    top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1 - fy) * top + fy * bot


def reshade(composite: np.ndarray, alpha: AlphaMap) -> np.ndarray:
    """Per-pixel multiply by the shading ratio, clipped to gamut."""
    return np.clip(composite * alpha.values[..., None], 0.0, 1.0)


# ---------------------------------------------------------------------------
# Sketch-based ear editing (image-space local warp)


def ear_edit(
    composite: np.ndarray,
    boundary_curve: np.ndarray,
    redrawn: np.ndarray,
    cell: int = config.WARP_CELL_SIZE,
    n_stations: int = 32,
) -> np.ndarray:
    """Locally warp the composite so the drawn boundary follows the redrawn one."""
    boundary_curve = np.asarray(boundary_curve, dtype=np.float64)
    redrawn = np.asarray(redrawn, dtype=np.float64)
    len_b = float(np.linalg.norm(np.diff(boundary_curve, axis=0), axis=1).sum())
    len_r = float(np.linalg.norm(np.diff(redrawn, axis=0), axis=1).sum())
    if len_b == 0 or len_r == 0 or max(len_b / len_r, len_r / len_b) > 3.0:
        raise ValueError("boundary and redrawn curve lengths differ too much")
    h, w = composite.shape[:2]
    b = resample_polyline(boundary_curve, n_stations)
    r = resample_polyline(redrawn, n_stations)

    allpts = np.concatenate([b, r], axis=0)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    c = 0.5 * (lo + hi)
    half = (hi - lo)  # 2x bounding box = box grown by its own size
    lo2 = c - half
    hi2 = c + half

    grid = build_grid(w, h, cell)
    from .render import bind_grid_constraints

    idx, target = bind_grid_constraints(grid, b, r - b, radius=float(cell))
    inside_roi = (
        (grid.rest[:, 0] >= lo2[0])
        & (grid.rest[:, 0] <= hi2[0])
        & (grid.rest[:, 1] >= lo2[1])
        & (grid.rest[:, 1] <= hi2[1])
    )
    frozen = np.nonzero(~inside_roi)[0]
    frozen = np.setdiff1d(frozen, idx)
    all_idx = np.concatenate([idx, frozen])
    all_target = np.concatenate([target, grid.rest[frozen]], axis=0)
    solved = solve_warp(grid, all_idx, all_target)
    out, covered, _ = grid_resample(
        np.ascontiguousarray(composite, dtype=np.float64),
        solved.rest,
        solved.deformed,
        solved.tris,
        np.zeros(composite.shape[2]),
    )
    out[covered == 0] = composite[covered == 0]
    # pixels whose surrounding cells never moved are exactly the input
    margin = 2.0 * cell
    far = np.ones((h, w), dtype=bool)
    y0 = int(max(0, np.floor(lo2[1] - margin)))
    y1 = int(min(h, np.ceil(hi2[1] + margin)))
    x0 = int(max(0, np.floor(lo2[0] - margin)))
    x1 = int(min(w, np.ceil(hi2[0] + margin)))
    far[y0:y1, x0:x1] = False
    out[far] = composite[far]
    return out
