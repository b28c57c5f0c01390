"""Common 2D parameterization of the face topology and raster encodings of
per-vertex fields, Laplacians and sketch displacements ("flattened maps").

The chart is a build-time asset: a Tutte embedding of the disk-topology face
mesh with the boundary on a circle, computed once per topology and shared by
every mesh/field with that topology.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import config
from ._kernels import rasterize_attributes
from .errors import InvalidMeshError, MissingCurveError
from .mesh import FaceMesh, LaplacianSet
from .sketch import Camera, DisplacementSet, arc_params, eval_polyline

_MAGIC = b"FRAS"


@dataclass
class ParamChart:
    """Per-vertex UVs in [0,1]^2 plus the valid-pixel mask at `resolution`."""

    uv: np.ndarray  # (N,2)
    resolution: int
    mask: np.ndarray  # (R,R) uint8
    topology_id: int

    def vertex_px(self) -> np.ndarray:
        return self.uv * self.resolution


def boundary_loop(mesh: FaceMesh) -> np.ndarray:
    """Ordered vertex indices of the open-mesh boundary loop."""
    tri = mesh.triangles
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    uniq, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    border = uniq[counts == 1]
    if border.shape[0] == 0:
        raise InvalidMeshError("mesh has no boundary (chart needs disk topology)")
    nxt = {}
    for a, b in border:
        nxt.setdefault(int(a), []).append(int(b))
        nxt.setdefault(int(b), []).append(int(a))
    start = int(border[0, 0])
    loop = [start]
    prev = None
    cur = start
    while True:
        cands = [v for v in nxt[cur] if v != prev]
        if not cands:
            raise InvalidMeshError("boundary is not a single loop")
        prev, cur = cur, cands[0]
        if cur == start:
            break
        loop.append(cur)
        if len(loop) > border.shape[0] + 1:
            raise InvalidMeshError("boundary walk did not close")
    return np.array(loop, dtype=np.int32)


def _mean_value_weights(mesh: FaceMesh) -> sp.csr_matrix:
    """Positive mean-value edge weights (tan(angle/2)/edge length sums)."""
    v = mesh.vertices
    tri = mesh.triangles
    rows, cols, vals = [], [], []
    for corner in range(3):
        i = tri[:, corner]
        j = tri[:, (corner + 1) % 3]
        k = tri[:, (corner + 2) % 3]
        e1 = v[j] - v[i]
        e2 = v[k] - v[i]
        l1 = np.linalg.norm(e1, axis=1)
        l2 = np.linalg.norm(e2, axis=1)
        cosang = np.clip((e1 * e2).sum(axis=1) / np.maximum(l1 * l2, 1e-30), -1, 1)
        t_half = np.tan(0.5 * np.arccos(cosang))
        rows += [i, i]
        cols += [j, k]
        vals += [t_half / np.maximum(l1, 1e-30), t_half / np.maximum(l2, 1e-30)]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    n = mesh.n_vertices
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def build_chart(mesh: FaceMesh, resolution: int = config.CHART_RESOLUTION) -> ParamChart:
    """Tutte-style embedding: boundary on a circle, interior solved with
    positive mean-value weights (injective for disk topology, much less area
    compression than uniform weights)."""
    if resolution < 16:
        raise ValueError("chart resolution must be >= 16")
    loop = boundary_loop(mesh)
    n = mesh.n_vertices
    pts = mesh.vertices[loop]
    seg = np.linalg.norm(np.diff(np.concatenate([pts, pts[:1]]), axis=0), axis=1)
    t = np.concatenate([[0.0], np.cumsum(seg[:-1])]) / seg.sum()
    ang = 2.0 * np.pi * t
    uv = np.zeros((n, 2))
    uv[loop, 0] = 0.5 + 0.47 * np.cos(ang)
    uv[loop, 1] = 0.5 + 0.47 * np.sin(ang)

    w = _mean_value_weights(mesh)
    deg = np.asarray(w.sum(axis=1)).ravel()
    lap = sp.diags(deg) - w
    interior = np.ones(n, dtype=bool)
    interior[loop] = False
    ii = np.nonzero(interior)[0]
    if ii.size:
        a_ii = lap[ii][:, ii].tocsc()
        rhs = -lap[ii][:, loop] @ uv[loop]
        uv[ii] = splu(a_ii).solve(rhs)

    px = uv * resolution
    _, mask = rasterize_attributes(
        px, mesh.triangles, np.ones((n, 1)), resolution
    )
    return ParamChart(uv, resolution, mask, mesh.topology_id)


def save_chart(chart: ParamChart, path) -> None:
    np.savez(
        path,
        uv=chart.uv,
        resolution=chart.resolution,
        mask=chart.mask,
        topology_id=np.uint64(chart.topology_id),
    )


def load_chart(path) -> ParamChart:
    d = np.load(path)
    return ParamChart(
        d["uv"], int(d["resolution"]), d["mask"], int(d["topology_id"])
    )


# ---------------------------------------------------------------------------
# Flatten / sample


def flatten_vertex_field(chart: ParamChart, mesh: FaceMesh, field: np.ndarray):
    """Rasterize a per-vertex scalar or (N,C) field over the chart."""
    if chart.resolution < 16:
        raise ValueError("resolution must be >= 16")
    field = np.asarray(field, dtype=np.float64)
    if field.shape[0] != mesh.n_vertices:
        raise ValueError("field length != vertex count")
    attrs = field[:, None] if field.ndim == 1 else field
    out, _ = rasterize_attributes(
        chart.vertex_px(), mesh.triangles, attrs, chart.resolution
    )
    return out[..., 0] if field.ndim == 1 else out


def sample_field(chart: ParamChart, raster: np.ndarray) -> np.ndarray:
    """Mask-aware bilinear sample of the raster at each vertex UV.

    Taps outside the valid-pixel mask carry weight 0 (they hold fill zeros,
    not field values); boundary vertices would otherwise be pulled toward 0.
    """
    r = chart.resolution
    if raster.shape[0] != r or raster.shape[1] != r:
        raise ValueError("raster resolution does not match chart")
    px = chart.vertex_px()
    x = np.clip(px[:, 0] - 0.5, 0.0, r - 1.0)
    y = np.clip(px[:, 1] - 0.5, 0.0, r - 1.0)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, r - 1)
    y1 = np.minimum(y0 + 1, r - 1)
    fx = x - x0
    fy = y - y0
    m = chart.mask.astype(np.float64)
    w = np.stack(
        [
            (1 - fx) * (1 - fy) * m[y0, x0],
            fx * (1 - fy) * m[y0, x1],
            (1 - fx) * fy * m[y1, x0],
            fx * fy * m[y1, x1],
        ],
        axis=0,
    )
    wsum = w.sum(axis=0)
    plain = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=0
    )
    use_plain = wsum < 1e-9
    w[:, use_plain] = plain[:, use_plain]
    wsum = w.sum(axis=0)
    taps = np.stack(
        [raster[y0, x0], raster[y0, x1], raster[y1, x0], raster[y1, x1]], axis=0
    )
    if raster.ndim == 3:
        return (w[..., None] * taps).sum(axis=0) / wsum[:, None]
    return (w * taps).sum(axis=0) / wsum


def encode_direction(d: np.ndarray) -> np.ndarray:
    return (d + 1.0) * 0.5


def decode_direction(c: np.ndarray) -> np.ndarray:
    return 2.0 * c - 1.0


def split_direction_magnitude(vectors: np.ndarray, eps: float = 1e-12):
    mags = np.linalg.norm(vectors, axis=-1)
    dirs = np.zeros_like(vectors)
    ok = mags > eps
    dirs[ok] = vectors[ok] / mags[ok, None]
    return dirs, mags


def _renormalize_direction_raster(raster: np.ndarray, mag: np.ndarray, eps=1e-6):
    """Interpolation shrinks encoded unit vectors; snap them back to length 1
    wherever the magnitude channel is meaningful."""
    dec = decode_direction(raster)
    norms = np.linalg.norm(dec, axis=-1)
    ok = (norms > eps) & (mag > eps)
    dec[ok] /= norms[ok][..., None]
    dec[~ok] = 0.0
    return encode_direction(dec)


def flatten_laplacians(chart: ParamChart, mesh: FaceMesh, lap: LaplacianSet):
    """Direction (3ch, encoded) and magnitude (1ch) rasters of the Laplacians."""
    dirs, mags = split_direction_magnitude(lap.deltas)
    l_d = flatten_vertex_field(chart, mesh, encode_direction(dirs))
    l_m = flatten_vertex_field(chart, mesh, mags)
    l_m = np.maximum(l_m, 0.0)
    l_d = _renormalize_direction_raster(l_d, l_m)
    return l_d, l_m


def flatten_sketch(
    chart: ParamChart,
    mesh: FaceMesh,
    disp: DisplacementSet,
    cam: Camera,
    ribbon_width: int = config.RIBBON_WIDTH,
):
    """Splat station displacements along each curve's UV path as a ribbon.

    Directions (2ch) are encoded with the (0.5, 0.5) zero sentinel; magnitudes
    are pixels in the image frame. Side-view sketches flatten identically
    (the chart is view-independent).
    """
    r = chart.resolution
    s_d = np.full((r, r, 2), 0.5)
    s_m = np.zeros((r, r))
    rad = max(ribbon_width / 2.0, 0.5)

    for name in sorted(disp.stations):
        path = mesh.feature_curves.get(name)
        if path is None:
            raise MissingCurveError(name)
        vectors = disp.stations[name]
        n_st = vectors.shape[0]
        if n_st < 2:
            raise ValueError(f"curve '{name}': need >= 2 stations")
        closed = bool(path[0] == path[-1])
        uv_path = chart.uv[path] * r
        if closed:
            t_st = np.arange(n_st, dtype=np.float64) / n_st
        else:
            t_st = np.linspace(0.0, 1.0, n_st)
        pts = eval_polyline(uv_path, t_st)
        dirs, mags = split_direction_magnitude(vectors)
        enc = encode_direction(dirs)
        enc[mags <= 1e-12] = 0.5

        seq = list(range(n_st - 1)) + ([n_st - 1] if not closed else [])
        if closed:
            seq = list(range(n_st))
        for k in seq:
            k2 = (k + 1) % n_st
            if k == n_st - 1 and not closed:
                _stamp(s_d, s_m, pts[k], enc[k], mags[k], rad)
                continue
            a, b = pts[k], pts[k2]
            steps = max(int(np.ceil(np.linalg.norm(b - a) / 0.7)), 1)
            for j in range(steps + 1):
                t = j / steps
                p = a + t * (b - a)
                e = enc[k] + t * (enc[k2] - enc[k])
                m = mags[k] + t * (mags[k2] - mags[k])
                _stamp(s_d, s_m, p, e, m, rad)
    return s_d, s_m


def _stamp(s_d, s_m, p, enc, mag, rad):
    r = s_m.shape[0]
    x0 = max(int(np.floor(p[0] - rad)), 0)
    x1 = min(int(np.ceil(p[0] + rad)), r - 1)
    y0 = max(int(np.floor(p[1] - rad)), 0)
    y1 = min(int(np.ceil(p[1] + rad)), r - 1)
    if x1 < x0 or y1 < y0:
        return
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    inside = (xs + 0.5 - p[0]) ** 2 + (ys + 0.5 - p[1]) ** 2 <= rad * rad
    s_m[ys[inside], xs[inside]] = mag
    s_d[ys[inside], xs[inside]] = enc


@dataclass
class FlattenedMaps:
    """The four input rasters over the common chart plus the valid mask."""

    l_d: np.ndarray  # (R,R,3) encoded directions
    l_m: np.ndarray  # (R,R)
    s_d: np.ndarray  # (R,R,2) encoded directions
    s_m: np.ndarray  # (R,R)
    mask: np.ndarray  # (R,R) uint8
    resolution: int

    def validate(self, tol: float = 1e-2):
        m = self.mask.astype(bool)
        if self.l_m[m].min(initial=0.0) < -1e-9 or self.s_m.min() < -1e-9:
            raise ValueError("magnitudes must be nonnegative")
        sig = m & (self.l_m > 1e-6)
        if sig.any():
            norms = np.linalg.norm(decode_direction(self.l_d[sig]), axis=-1)
            if np.abs(norms - 1.0).max() > tol:
                raise ValueError("L_d does not encode unit directions")

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [
                self.l_d,
                self.l_m[..., None],
                self.s_d,
                self.s_m[..., None],
            ],
            axis=-1,
        )

    @classmethod
    def from_array(cls, arr: np.ndarray, mask: np.ndarray) -> "FlattenedMaps":
        return cls(
            arr[..., 0:3],
            arr[..., 3],
            arr[..., 4:6],
            arr[..., 6],
            mask,
            arr.shape[0],
        )


def build_flattened_maps(chart, mesh, lap_set, disp, cam) -> FlattenedMaps:
    l_d, l_m = flatten_laplacians(chart, mesh, lap_set)
    s_d, s_m = flatten_sketch(chart, mesh, disp, cam)
    return FlattenedMaps(l_d, l_m, s_d, s_m, chart.mask, chart.resolution)


# ---------------------------------------------------------------------------
# Raster container: {magic, R, channels, mask, data}, float32 little-endian.


def write_container(path, data: np.ndarray, mask: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[..., None]
    r = data.shape[0]
    if data.shape[1] != r:
        raise ValueError("container rasters are square")
    c = data.shape[2]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", r, c))
        f.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_container(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError("bad raster container magic")
        r, c = struct.unpack("<II", f.read(8))
        mask = np.frombuffer(f.read(r * r), dtype=np.uint8).reshape(r, r)
        data = (
            np.frombuffer(f.read(4 * r * r * c), dtype="<f4")
            .reshape(r, r, c)
            .astype(np.float64)
        )
    return (data[..., 0] if c == 1 else data), mask


def container_bytes(data: np.ndarray, mask: np.ndarray) -> bytes:
    import io

    data = np.asarray(data)
    if data.ndim == 2:
        data = data[..., None]
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", data.shape[0], data.shape[2]))
    buf.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())
    buf.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    return buf.getvalue()


def container_from_bytes(blob: bytes):
    if blob[:4] != _MAGIC:
        raise ValueError("bad raster container magic")
    r, c = struct.unpack("<II", blob[4:12])
    off = 12
    mask = np.frombuffer(blob[off : off + r * r], dtype=np.uint8).reshape(r, r)
    off += r * r
    data = (
        np.frombuffer(blob[off : off + 4 * r * r * c], dtype="<f4")
        .reshape(r, r, c)
        .astype(np.float64)
    )
    return (data[..., 0] if c == 1 else data), mask


def raster_to_png(data: np.ndarray, path, normalize: bool = False) -> None:
    """8-bit PNG export, for visualization only."""
    from PIL import Image

    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.shape[2] == 2:
        arr = np.concatenate([arr, np.full_like(arr[..., :1], 0.5)], axis=-1)
    if normalize and arr.max() > arr.min():
        arr = (arr - arr.min()) / (arr.max() - arr.min())
    arr = np.clip(arr, 0.0, 1.0)
    img = (arr * 255.0 + 0.5).astype(np.uint8)
    if img.shape[2] == 1:
        img = img[..., 0]
    Image.fromarray(img).save(path)
