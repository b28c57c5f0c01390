"""Feature-curve sketches: projection, erase-and-redraw edits, correspondence
displacements, and handle-based exact sketch matching.

All sketch coordinates are image pixels, origin top-left, y down.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config
from .errors import MissingCurveError, SolverError, UnsnappableEditError
from .mesh import FaceMesh, SolverContext


@dataclass(frozen=True)
class Camera:
    """Weak-perspective camera: p = scale * (R v)_xy + translation."""

    view: str  # "frontal" | "side"
    scale: float
    rotation: np.ndarray  # (3,3) orthonormal
    translation: np.ndarray  # (2,) px
    image_size: tuple  # (w, h) px

    def __post_init__(self):
        object.__setattr__(
            self, "rotation", np.asarray(self.rotation, dtype=np.float64)
        )
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64)
        )
        if self.scale <= 0:
            raise ValueError("camera scale must be positive")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-8):
            raise ValueError("camera rotation must be orthonormal")

    def project(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        cam = pts @ self.rotation.T
        return cam[:, :2] * self.scale + self.translation

    def depth(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.rotation.T[:, 2]

    def to_dict(self) -> dict:
        return {
            "view": self.view,
            "scale": self.scale,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            d["view"],
            d["scale"],
            np.array(d["rotation"]),
            np.array(d["translation"]),
            tuple(d["image_size"]),
        )


@dataclass
class SketchSet:
    """Named 2D feature polylines for one view."""

    view: str
    curves: dict  # name -> (K,2) float64 px
    closed: dict  # name -> bool

    def copy(self) -> "SketchSet":
        return SketchSet(
            self.view,
            {k: v.copy() for k, v in self.curves.items()},
            dict(self.closed),
        )

    def to_dict(self) -> dict:
        return {
            "view": self.view,
            "curves": [
                {
                    "name": name,
                    "points": np.asarray(pts).tolist(),
                    "closed": bool(self.closed[name]),
                }
                for name, pts in sorted(self.curves.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SketchSet":
        curves, closed = {}, {}
        for c in d["curves"]:
            curves[c["name"]] = np.asarray(c["points"], dtype=np.float64)
            closed[c["name"]] = bool(c["closed"])
        return cls(d["view"], curves, closed)


@dataclass(frozen=True)
class SketchEdit:
    """Erase-and-redraw: replace arc interval [s0, s1] of `curve` (normalized
    arc length) with a freehand polyline."""

    curve: str
    s0: float
    s1: float
    replacement: np.ndarray  # (K,2) px

    def __post_init__(self):
        object.__setattr__(
            self, "replacement", np.asarray(self.replacement, dtype=np.float64)
        )
        if not (0.0 <= self.s0 < self.s1 <= 1.0):
            raise ValueError("need 0 <= s0 < s1 <= 1")
        if self.replacement.shape[0] < 2:
            raise ValueError("replacement needs at least 2 points")

    def to_dict(self) -> dict:
        return {
            "curve": self.curve,
            "s0": self.s0,
            "s1": self.s1,
            "replacement": self.replacement.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SketchEdit":
        return cls(d["curve"], d["s0"], d["s1"], np.asarray(d["replacement"]))


@dataclass
class DisplacementSet:
    """Per-curve displacement vectors at the fixed arc-length stations."""

    view: str
    stations: dict  # name -> (S,2) float64 px

    def max_magnitude(self) -> float:
        if not self.stations:
            return 0.0
        return max(
            float(np.linalg.norm(d, axis=1).max()) for d in self.stations.values()
        )


def arc_params(points: np.ndarray) -> np.ndarray:
    """Normalized cumulative arc length of polyline points, in [0, 1]."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        return np.linspace(0.0, 1.0, points.shape[0])
    return cum / total


def eval_polyline(points: np.ndarray, t) -> np.ndarray:
    """Point(s) on the polyline at normalized arc parameter(s) t."""
    params = arc_params(points)
    t = np.atleast_1d(np.clip(t, 0.0, 1.0))
    x = np.interp(t, params, points[:, 0])
    y = np.interp(t, params, points[:, 1])
    return np.stack([x, y], axis=1)


def resample_polyline(points: np.ndarray, n: int, closed: bool = False) -> np.ndarray:
    """Resample at n uniform arc-length stations (closed curves skip the
    duplicate endpoint station)."""
    if closed:
        t = np.linspace(0.0, 1.0, n, endpoint=False)
    else:
        t = np.linspace(0.0, 1.0, n)
    return eval_polyline(points, t)


def project_curves(mesh: FaceMesh, cam: Camera) -> SketchSet:
    """Project every feature curve of the mesh into the image."""
    curves, closed = {}, {}
    for name, path in mesh.feature_curves.items():
        curves[name] = cam.project(mesh.vertices[path])
        closed[name] = bool(path[0] == path[-1])
    return SketchSet(cam.view, curves, closed)


def snap_radius_for(image_size) -> float:
    return config.SNAP_RADIUS * image_size[1] / config.SNAP_REFERENCE_HEIGHT


def apply_edit(
    sketch: SketchSet, edit: SketchEdit, snap_radius: float | None = None
) -> SketchSet:
    """Replace the erased arc interval with the redrawn polyline.

    Endpoints of the replacement are snapped onto the erased-interval
    endpoints (taper-distributed so no kink is introduced); a gap larger than
    the snap radius is an error rather than a silent jump.
    """
    if edit.curve not in sketch.curves:
        raise MissingCurveError(edit.curve)
    base = sketch.curves[edit.curve]
    params = arc_params(base)
    p0 = eval_polyline(base, edit.s0)[0]
    p1 = eval_polyline(base, edit.s1)[0]

    rep = edit.replacement
    gap0 = float(np.linalg.norm(rep[0] - p0))
    gap1 = float(np.linalg.norm(rep[-1] - p1))
    radius = snap_radius if snap_radius is not None else config.SNAP_RADIUS
    if gap0 > radius or gap1 > radius:
        raise UnsnappableEditError(
            f"gap {max(gap0, gap1):.1f}px exceeds snap radius {radius:.1f}px"
        )
    u = arc_params(rep)[:, None]
    snapped = rep + (1.0 - u) * (p0 - rep[0]) + u * (p1 - rep[-1])

    keep_head = base[params < edit.s0 - 1e-12]
    keep_tail = base[params > edit.s1 + 1e-12]
    new = np.concatenate([keep_head, snapped, keep_tail], axis=0)
    # drop consecutive duplicates introduced at the joins
    d = np.linalg.norm(np.diff(new, axis=0), axis=1)
    keep = np.concatenate([[True], d > 1e-9])
    new = new[keep]
    if sketch.closed[edit.curve] and not np.array_equal(new[0], new[-1]):
        new = np.concatenate([new, new[:1]], axis=0)

    out = sketch.copy()
    out.curves[edit.curve] = new
    return out


def correspondence_displacements(
    base: SketchSet, edited: SketchSet, n_stations: int = config.CURVE_STATIONS
) -> DisplacementSet:
    """Station-wise displacement edited - base at uniform arc-length stations."""
    if base.view != edited.view:
        raise ValueError("sketches are from different views")
    if set(base.curves) != set(edited.curves):
        missing = set(base.curves) ^ set(edited.curves)
        raise MissingCurveError(", ".join(sorted(missing)))
    stations = {}
    for name in base.curves:
        closed = base.closed[name]
        b = resample_polyline(base.curves[name], n_stations, closed)
        e = resample_polyline(edited.curves[name], n_stations, closed)
        stations[name] = e - b
    return DisplacementSet(base.view, stations)


def match_sketch(
    mesh: FaceMesh,
    cam: Camera,
    edited: SketchSet,
    ctx: SolverContext,
    handle_weight: float = config.HANDLE_WEIGHT,
    position_prior: float = config.POSITION_PRIOR,
    iterations: int = 3,
) -> FaceMesh:
    """Handle-based Laplacian deformation pinning feature curves to the sketch.

    Feature-curve vertices are constrained in screen x,y only (the sketch has
    no depth); all Laplacians are soft-constrained at their current values and
    anchors keep the backfacing part in place. A weak position prior on all
    vertices damps far-from-handle overshoot. Solved in the camera frame so
    the three coordinates decouple; iterated so arc-length correspondences
    settle.
    """
    handle_idx = mesh.curve_vertex_set()
    if handle_idx.size == 0:
        return mesh
    factor = ctx.handle_factor(handle_idx, handle_weight, position_prior)
    factor_z = ctx.handle_factor(
        np.empty(0, dtype=np.int32), 0.0, position_prior
    )
    rot = cam.rotation
    lap = ctx.laplacian
    w_a, w_h, w_p = ctx.anchor_weight, handle_weight, position_prior
    anchors = ctx.anchors
    pos = {int(v): k for k, v in enumerate(handle_idx)}

    current = mesh.vertices
    for _ in range(max(1, iterations)):
        vc = current @ rot.T
        deltas = lap @ vc
        targets = np.zeros((handle_idx.shape[0], 2))
        counts = np.zeros(handle_idx.shape[0])
        for name, path in mesh.feature_curves.items():
            if name not in edited.curves:
                continue
            proj = (vc[path, :2]) * cam.scale + cam.translation
            t = arc_params(proj)
            goal = eval_polyline(edited.curves[name], t)
            goal_cam = (goal - cam.translation) / cam.scale
            for k, vid in enumerate(path):
                j = pos[int(vid)]
                targets[j] += goal_cam[k]
                counts[j] += 1
        have = counts > 0
        targets[have] /= counts[have, None]
        targets[~have] = vc[handle_idx[~have], :2]

        rhs_xy = (
            lap.T @ deltas[:, :2]
            + w_a * (ctx._anchor_sel.T @ vc[anchors, :2])
            + w_h * _scatter(handle_idx, targets, mesh.n_vertices)
            + w_p * vc[:, :2]
        )
        rhs_z = (
            lap.T @ deltas[:, 2]
            + w_a * (ctx._anchor_sel.T @ vc[anchors, 2])
            + w_p * vc[:, 2]
        )
        xy = factor.solve(rhs_xy)
        z = factor_z.solve(rhs_z)
        if not (np.isfinite(xy).all() and np.isfinite(z).all()):
            raise SolverError("sketch matching solve produced non-finite values")
        vc_new = np.column_stack([xy, z])
        current = vc_new @ rot
    return mesh.with_vertices(current)


def _scatter(idx: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, values.shape[1]))
    out[idx] = values
    return out


def station_error(mesh: FaceMesh, cam: Camera, edited: SketchSet) -> float:
    """Max distance between projected-curve stations and sketch stations."""
    proj = project_curves(mesh, cam)
    err = 0.0
    for name in edited.curves:
        closed = edited.closed[name]
        a = resample_polyline(proj.curves[name], config.CURVE_STATIONS, closed)
        b = resample_polyline(edited.curves[name], config.CURVE_STATIONS, closed)
        err = max(err, float(np.linalg.norm(a - b, axis=1).max()))
    return err


def save_sketch(sketch: SketchSet, path) -> None:
    Path(path).write_text(json.dumps(sketch.to_dict(), sort_keys=True))


def load_sketch(path) -> SketchSet:
    return SketchSet.from_dict(json.loads(Path(path).read_text()))
