"""Exaggeration fields three ways: the synthetic training-data generator, a
deterministic sketch-to-lambda estimator (kernel-basis Gauss-Newton), and the
external predictor contract for trained models.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config
from .errors import ContractViolationError, SolverError
from .mesh import (
    FaceMesh,
    LambdaField,
    SolverContext,
    compute_laplacians,
    deformation_transfer,
    exaggerate,
    region_id,
    save_mesh,
    uniform_laplacian,
    REGIONS,
)
from .param import (
    FlattenedMaps,
    ParamChart,
    build_flattened_maps,
    container_bytes,
    container_from_bytes,
    sample_field,
    write_container,
)
from .sketch import (
    Camera,
    SketchSet,
    correspondence_displacements,
    project_curves,
    resample_polyline,
    save_sketch,
)

KERNEL_REGIONS = ("forehead", "chin", "nose", "cheek", "mouth", "eyes")


@dataclass(frozen=True)
class RegionKernel:
    """Gaussian bump over one semantic region."""

    region: int  # region id
    center: int  # vertex index
    sigma: float  # Euclidean bandwidth, model units
    peak: float  # scale assigned at the center

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("kernel sigma must be positive")
        if not (config.LAMBDA_MIN <= self.peak <= config.LAMBDA_MAX):
            raise ValueError("kernel peak outside lambda bounds")


def region_kernel_basis(mesh: FaceMesh, regions=KERNEL_REGIONS):
    """One (region, center vertex, sigma) triple per populated region.

    Center is the vertex nearest the region centroid; sigma is half the region
    radius. The generator and estimator share this basis, which makes the
    estimator an approximate inverse of the generator.
    """
    basis = []
    for name in regions:
        rid = region_id(name)
        idx = np.nonzero(mesh.region_labels == rid)[0]
        if idx.size == 0:
            warnings.warn(f"region '{name}' has no vertices; skipped")
            continue
        pts = mesh.vertices[idx]
        centroid = pts.mean(axis=0)
        center = int(idx[np.argmin(np.linalg.norm(pts - centroid, axis=1))])
        radius = float(np.linalg.norm(pts - mesh.vertices[center], axis=1).max())
        sigma = max(radius / 2.0, 1e-6)
        basis.append((rid, center, sigma))
    return basis


def kernel_weights(mesh: FaceMesh, rid: int, center: int, sigma: float) -> np.ndarray:
    """exp(-d^2 / 2 sigma^2) from the center, restricted to the region."""
    w = np.zeros(mesh.n_vertices)
    idx = mesh.region_labels == rid
    d = np.linalg.norm(mesh.vertices[idx] - mesh.vertices[center], axis=1)
    w[idx] = np.exp(-0.5 * (d / sigma) ** 2)
    return w


def smooth_field(mesh: FaceMesh, values: np.ndarray, iterations: int) -> np.ndarray:
    """Half-step neighbor averaging, `iterations` times."""
    lap = uniform_laplacian(mesh)
    out = values.astype(np.float64).copy()
    for _ in range(iterations):
        out = out - 0.5 * (lap @ out)
    return out


def synth_exaggeration(
    mesh: FaceMesh,
    seed: int,
    kernels_per_region: int = 1,
    scale_range=config.SYNTH_SCALE_RANGE,
    smooth_iters: int = config.SMOOTHING_ITERS,
    bounds=(config.LAMBDA_MIN, config.LAMBDA_MAX),
) -> LambdaField:
    """Random per-region Gaussian exaggeration field, smoothed.

    The first kernel of each region sits at the region center vertex; extra
    kernels (kernels_per_region > 1) get random centers inside the region.
    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    field = np.ones(mesh.n_vertices)
    for rid, center, sigma in region_kernel_basis(mesh):
        for k in range(kernels_per_region):
            if k == 0:
                c = center
            else:
                members = np.nonzero(mesh.region_labels == rid)[0]
                c = int(rng.choice(members))
            s = float(rng.uniform(*scale_range))
            field += (s - 1.0) * kernel_weights(mesh, rid, c, sigma)
    field = smooth_field(mesh, field, smooth_iters)
    field = np.clip(field, bounds[0], bounds[1])
    return LambdaField(field, mesh.topology_id, bounds)


# ---------------------------------------------------------------------------
# Deterministic sketch-to-lambda estimator


def _station_matrix(sketch: SketchSet, n_stations: int) -> np.ndarray:
    rows = []
    for name in sorted(sketch.curves):
        rows.append(
            resample_polyline(sketch.curves[name], n_stations, sketch.closed[name])
        )
    return np.concatenate(rows, axis=0)


def sketch_residual(
    mesh_proj: SketchSet,
    base_proj: SketchSet,
    edited: SketchSet,
    base: SketchSet,
    n_stations: int = config.CURVE_STATIONS,
) -> np.ndarray:
    """(model displacement) - (user displacement) at all stations, flattened."""
    got = _station_matrix(mesh_proj, n_stations) - _station_matrix(base_proj, n_stations)
    want = _station_matrix(edited, n_stations) - _station_matrix(base, n_stations)
    return (got - want).ravel()


def estimate_lambda(
    mesh: FaceMesh,
    maps: FlattenedMaps | None,
    cam: Camera,
    edited: SketchSet,
    ctx: SolverContext,
    base: SketchSet | None = None,
    damping: float = config.ESTIMATOR_DAMPING,
    max_iters: int = config.ESTIMATOR_MAX_ITERS,
    bounds=(config.LAMBDA_MIN, config.LAMBDA_MAX),
    n_stations: int = config.CURVE_STATIONS,
):
    """Fit lambda = 1 + sum_k c_k K_k so the exaggerated projection matches the
    edited sketch (displacement-space Gauss-Newton with FD Jacobian).

    This is the deterministic stand-in for a trained four-map predictor: it
    honors the same inputs (maps are accepted for contract parity) and returns
    (LambdaField, info). info["converged"] is False when the iteration budget
    ran out; the best iterate is returned either way.
    """
    basis = region_kernel_basis(mesh)
    if not basis:
        raise SolverError("no kernel regions available")
    weights = np.stack(
        [kernel_weights(mesh, rid, c, s) for rid, c, s in basis], axis=0
    )  # (K,N)
    k = weights.shape[0]
    lo, hi = bounds
    c_lo, c_hi = lo - 1.0, hi - 1.0

    base_proj = project_curves(mesh, cam)
    if base is None:
        base = base_proj

    def lam_of(c):
        vals = 1.0 + c @ weights
        return LambdaField(np.clip(vals, lo, hi), mesh.topology_id, bounds)

    def residual(c):
        ex = exaggerate(mesh, lam_of(c), ctx)
        proj = project_curves(ex, cam)
        return sketch_residual(proj, base_proj, edited, base, n_stations)

    coeffs = np.zeros(k)
    r = residual(coeffs)
    obj = float(r @ r + damping * (coeffs @ coeffs))
    if not np.isfinite(obj):
        raise SolverError("non-finite estimator objective")
    initial_obj = obj
    history = [obj]
    converged = False
    h = 1e-3

    for _ in range(max_iters):
        jac = np.empty((r.shape[0], k))
        for j in range(k):
            cp = coeffs.copy()
            cp[j] = min(cp[j] + h, c_hi)
            step = cp[j] - coeffs[j]
            if step == 0.0:
                cp[j] = coeffs[j] - h
                step = -h
            jac[:, j] = (residual(cp) - r) / step
        g = jac.T @ r + damping * coeffs
        lhs = jac.T @ jac + damping * np.eye(k)
        try:
            delta = np.linalg.solve(lhs, -g)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"estimator normal equations singular: {exc}")
        accepted = False
        for _ls in range(6):
            cand = np.clip(coeffs + delta, c_lo, c_hi)
            r_new = residual(cand)
            obj_new = float(r_new @ r_new + damping * (cand @ cand))
            if not np.isfinite(obj_new):
                raise SolverError("non-finite estimator objective")
            if obj_new < obj:
                coeffs, r, obj = cand, r_new, obj_new
                history.append(obj)
                accepted = True
                break
            delta *= 0.5
        if not accepted:
            converged = True
            break
        if len(history) >= 2 and history[-2] - history[-1] <= 1e-8 * max(obj, 1.0):
            converged = True
            break

    info = {
        "objective": obj,
        "initial_objective": initial_obj,
        "iterations": len(history) - 1,
        "converged": converged,
        "coefficients": coeffs,
        "history": history,
    }
    return lam_of(coeffs), info


# ---------------------------------------------------------------------------
# External predictor contract


def run_external_predictor(
    maps: FlattenedMaps,
    predictor,
    chart: ParamChart,
    mesh: FaceMesh,
    bounds=(config.LAMBDA_MIN, config.LAMBDA_MAX),
) -> LambdaField:
    """Run a four-map -> lambda-map predictor and sample back to vertices.

    `predictor` is either a callable(FlattenedMaps) -> (R,R) array or an HTTP
    endpoint URL accepting the 7-channel raster container and answering with a
    1-channel lambda-map container.
    """
    r = chart.resolution
    if callable(predictor):
        raster = predictor(maps)
    else:
        if maps is None:
            raise ValueError("HTTP predictors require the flattened maps")
        import httpx

        resp = httpx.post(
            str(predictor),
            content=container_bytes(maps.to_array(), maps.mask),
            headers={"content-type": "application/octet-stream"},
            timeout=60.0,
        )
        resp.raise_for_status()
        raster, _ = container_from_bytes(resp.content)
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim == 3 and raster.shape[2] == 1:
        raster = raster[..., 0]
    if raster.shape != (r, r):
        raise ContractViolationError(
            f"predictor returned {raster.shape}, expected {(r, r)}"
        )
    if not np.isfinite(raster).all():
        raise ContractViolationError("predictor returned non-finite values")
    lo, hi = bounds
    raster = np.clip(raster, lo, hi)
    values = np.clip(sample_field(chart, raster), lo, hi)
    return LambdaField(values, mesh.topology_id, bounds)


# ---------------------------------------------------------------------------
# Synthetic dataset generation


def expected_sample_count(n_meshes: int, n_styles: int, n_expressions: int) -> int:
    """Dataset size: expressions are transferred onto each exaggerated neutral
    model and replace it (150 x 10 x 25 = 37,500); with no expressions the
    neutrals themselves are the samples."""
    return n_meshes * n_styles * max(1, n_expressions)


def generate_dataset(
    mesh_set,
    n_styles: int,
    expressions,
    out_dir,
    seed: int = 0,
    camera: Camera | None = None,
    chart: ParamChart | None = None,
    n_stations: int = config.CURVE_STATIONS,
) -> Path:
    """Write (mesh, lambda, flattened maps, sketch) samples for every
    (identity, style) pair, plus one expression-transferred sample per pair
    and expression. Returns the JSONL manifest path; fully reproducible from
    (seed, config).
    """
    from .mesh import prefactor
    from .synthetic import fit_camera

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples_dir = out_dir / "samples"
    samples_dir.mkdir(exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"

    mesh_set = list(mesh_set)
    tid = mesh_set[0].topology_id
    for m in mesh_set:
        if m.topology_id != tid:
            raise ValueError("dataset meshes must share topology")
    average = mesh_set[0].with_vertices(
        np.mean([m.vertices for m in mesh_set], axis=0)
    )
    if chart is None:
        chart = build_chart_cached(average)
    if camera is None:
        camera = fit_camera(average)
    ctx = prefactor(average)
    base_sketch = project_curves(average, camera)

    records = []
    sample_id = 0
    try:
        for i, mesh in enumerate(mesh_set):
            lap_set = compute_laplacians(mesh)
            for j in range(n_styles):
                style_seed = seed * 1_000_003 + i * 1009 + j
                lam = synth_exaggeration(mesh, style_seed)
                ex = exaggerate(mesh, lam, ctx)
                if expressions:
                    variants = [
                        (f"expr{e_idx}", e_idx, deformation_transfer(src_n, src_e, ex))
                        for e_idx, (src_n, src_e) in enumerate(expressions)
                    ]
                else:
                    variants = [("neutral", None, ex)]
                for kind, e_idx, model in variants:
                    sdir = samples_dir / f"s{sample_id:05d}"
                    sdir.mkdir(exist_ok=True)
                    save_mesh(model, sdir / "mesh.obj")
                    np.save(sdir / "lambda.npy", lam.values)
                    sk = project_curves(model, camera)
                    save_sketch(sk, sdir / "sketch.json")
                    disp = correspondence_displacements(base_sketch, sk, n_stations)
                    maps = build_flattened_maps(chart, mesh, lap_set, disp, camera)
                    lam_map = flatten_lambda(chart, mesh, lam)
                    write_container(
                        sdir / "maps.bin",
                        np.concatenate(
                            [maps.to_array(), lam_map[..., None]], axis=-1
                        ),
                        maps.mask,
                    )
                    records.append(
                        {
                            "id": sample_id,
                            "dir": str(sdir.relative_to(out_dir)),
                            "identity": i,
                            "style": j,
                            "kind": kind,
                            "expression": e_idx,
                            "seed": style_seed,
                        }
                    )
                    sample_id += 1
    except OSError:
        lines = [json.dumps(r, sort_keys=True) for r in records]
        lines.append(json.dumps({"kind": "summary", "complete": False}))
        manifest_path.write_text("\n".join(lines) + "\n")
        raise
    lines = [json.dumps(r, sort_keys=True) for r in records]
    lines.append(
        json.dumps(
            {"kind": "summary", "complete": True, "count": sample_id}, sort_keys=True
        )
    )
    manifest_path.write_text("\n".join(lines) + "\n")
    return manifest_path


_CHART_CACHE: dict = {}


def build_chart_cached(mesh: FaceMesh) -> ParamChart:
    from .param import build_chart

    chart = _CHART_CACHE.get(mesh.topology_id)
    if chart is None:
        chart = build_chart(mesh)
        if len(_CHART_CACHE) > 4:
            _CHART_CACHE.clear()
        _CHART_CACHE[mesh.topology_id] = chart
    return chart


def flatten_lambda(chart: ParamChart, mesh: FaceMesh, lam: LambdaField) -> np.ndarray:
    from .param import flatten_vertex_field

    raster = flatten_vertex_field(chart, mesh, lam.values)
    raster[chart.mask == 0] = 1.0
    return np.clip(raster, lam.bounds[0], lam.bounds[1])
