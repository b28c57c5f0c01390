"""Procedural face meshes, cameras and photos for tests, demos and dataset
generation. Everything is deterministic given the seeds.

The face mesh is a disk-topology "mask" dome in the camera-aligned model
frame (x right, y down, z away from the viewer; the nose points toward -z).
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .composite import SHLighting
from .mesh import FaceMesh, region_id, vertex_normals
from .render import rasterize_screen_attributes
from .sketch import Camera

RHO_MAX_DEG = 115.0
RHO_SILHOUETTE_DEG = 88.0
RHO_ANCHOR_DEG = 100.0


def _feature_bumps(nx, ny, p):
    """Signed z displacement (negative = toward viewer) for face features."""
    dz = np.zeros_like(nx)
    dz -= p["nose_amp"] * np.exp(
        -0.5 * ((nx / p["nose_sx"]) ** 2 + ((ny - p["nose_y"]) / p["nose_sy"]) ** 2)
    )
    for sgn in (-1.0, 1.0):
        dz += p["eye_amp"] * np.exp(
            -0.5
            * (
                ((nx - sgn * p["eye_x"]) / 0.13) ** 2
                + ((ny - p["eye_y"]) / 0.10) ** 2
            )
        )
    dz -= p["lip_amp"] * np.exp(
        -0.5 * ((nx / 0.22) ** 2 + ((ny - p["mouth_y"]) / 0.08) ** 2)
    )
    dz -= p["chin_amp"] * np.exp(
        -0.5 * ((nx / 0.20) ** 2 + ((ny - p["chin_y"]) / 0.16) ** 2)
    )
    return dz


def _identity_params(identity_seed: int | None):
    p = {
        "rx": 1.0,
        "ry": 1.25,
        "rz": 0.85,
        "nose_amp": 0.26,
        "nose_sx": 0.14,
        "nose_sy": 0.20,
        "nose_y": 0.12,
        "eye_amp": 0.06,
        "eye_x": 0.36,
        "eye_y": -0.26,
        "lip_amp": 0.05,
        "mouth_y": 0.55,
        "chin_amp": 0.07,
        "chin_y": 0.86,
    }
    if identity_seed is not None:
        rng = np.random.default_rng(identity_seed)
        jitter = {
            "ry": 0.08,
            "rz": 0.06,
            "nose_amp": 0.06,
            "nose_sx": 0.03,
            "eye_x": 0.03,
            "lip_amp": 0.015,
            "chin_amp": 0.02,
        }
        for key, amp in jitter.items():
            p[key] = p[key] + float(rng.uniform(-amp, amp))
    return p


def make_face(
    rings: int = 20, spokes: int = 36, identity_seed: int | None = None
) -> FaceMesh:
    """Parametric face-mask mesh with labeled regions, curves and anchors.

    Same (rings, spokes) always yields the same topology, so identities built
    with different seeds share a topology id and can form datasets.
    """
    p = _identity_params(identity_seed)
    rho_max = np.deg2rad(RHO_MAX_DEG)

    verts = [np.array([0.0, 0.0, -p["rz"]])]
    nxs, nys, rhos = [0.0], [0.0], [0.0]
    for r in range(1, rings + 1):
        rho = rho_max * r / rings
        for s in range(spokes):
            phi = 2.0 * np.pi * s / spokes
            nx = np.sin(rho) * np.cos(phi)
            ny = np.sin(rho) * np.sin(phi)
            verts.append(
                np.array([p["rx"] * nx, p["ry"] * ny, -p["rz"] * np.cos(rho)])
            )
            nxs.append(nx)
            nys.append(ny)
            rhos.append(rho)
    v = np.array(verts)
    nx = np.array(nxs)
    ny = np.array(nys)
    rho = np.array(rhos)
    front = rho < np.deg2rad(92.0)
    v[:, 2] += np.where(front, _feature_bumps(nx, ny, p), 0.0)

    def vid(r, s):
        return 1 + (r - 1) * spokes + (s % spokes)

    tris = []
    for s in range(spokes):
        tris.append((0, vid(1, s), vid(1, s + 1)))
    for r in range(1, rings):
        for s in range(spokes):
            a, b = vid(r, s), vid(r, s + 1)
            c, d = vid(r + 1, s + 1), vid(r + 1, s)
            tris.append((a, c, b))
            tris.append((a, d, c))
    tris = np.array(tris, dtype=np.int32)

    # orient so the front of the dome faces the viewer (normals toward -z)
    e1 = v[tris[0, 1]] - v[tris[0, 0]]
    e2 = v[tris[0, 2]] - v[tris[0, 0]]
    if np.cross(e1, e2)[2] > 0:
        tris = tris[:, [0, 2, 1]]

    labels = np.full(v.shape[0], region_id("other"), dtype=np.int8)
    front = rho < np.deg2rad(92.0)
    eye_l = ((nx + p["eye_x"]) / 0.17) ** 2 + ((ny - p["eye_y"]) / 0.11) ** 2 <= 1.0
    eye_r = ((nx - p["eye_x"]) / 0.17) ** 2 + ((ny - p["eye_y"]) / 0.11) ** 2 <= 1.0
    mouth = (nx / 0.26) ** 2 + ((ny - p["mouth_y"]) / 0.11) ** 2 <= 1.0
    nose = (np.abs(nx) <= 0.17) & (ny >= -0.10) & (ny <= 0.40)
    forehead = ny <= -0.42
    chin = ny >= 0.72
    cheek = np.abs(nx) >= 0.28
    labels[front & cheek] = region_id("cheek")
    labels[front & forehead] = region_id("forehead")
    labels[front & chin] = region_id("chin")
    labels[front & nose] = region_id("nose")
    labels[front & mouth] = region_id("mouth")
    labels[front & (eye_l | eye_r)] = region_id("eyes")

    def ring_for(deg):
        return int(np.clip(round(np.deg2rad(deg) / rho_max * rings), 1, rings))

    def spoke_for(deg):
        return int(round(np.deg2rad(deg) / (2 * np.pi) * spokes)) % spokes

    def ring_arc(r, deg_lo, deg_hi):
        s_lo, s_hi = spoke_for(deg_lo), spoke_for(deg_hi)
        if s_hi < s_lo:
            s_hi += spokes
        return [vid(r, s) for s in range(s_lo, s_hi + 1)]

    def spoke_path(s, deg_lo, deg_hi):
        return [vid(r, s) for r in range(ring_for(deg_lo), ring_for(deg_hi) + 1)]

    r_sil = ring_for(RHO_SILHOUETTE_DEG)
    silhouette = [vid(r_sil, s) for s in range(spokes)] + [vid(r_sil, 0)]

    eye_rho = np.rad2deg(np.arcsin(np.hypot(p["eye_x"], p["eye_y"])))
    brow_rho = eye_rho + 7.0
    mouth_rho = np.rad2deg(np.arcsin(p["mouth_y"]))
    ang_l = np.rad2deg(np.arctan2(p["eye_y"], -p["eye_x"])) % 360.0
    ang_r = np.rad2deg(np.arctan2(p["eye_y"], p["eye_x"])) % 360.0

    curves = {
        "silhouette": silhouette,
        "nose": spoke_path(spoke_for(90.0), 4.0, 24.0),
        "mouth": ring_arc(ring_for(mouth_rho), 62.0, 118.0),
        "left_eye": ring_arc(ring_for(eye_rho), ang_l - 11.0, ang_l + 11.0),
        "right_eye": ring_arc(ring_for(eye_rho), ang_r - 11.0, ang_r + 11.0),
        "left_eyebrow": ring_arc(ring_for(brow_rho), ang_l - 10.0, ang_l + 10.0),
        "right_eyebrow": ring_arc(ring_for(brow_rho), ang_r - 10.0, ang_r + 10.0),
        "left_ear": spoke_path(spoke_for(180.0), 66.0, 84.0),
        "right_ear": spoke_path(spoke_for(0.0), 66.0, 84.0),
    }
    curves = {k: np.array(idx, dtype=np.int32) for k, idx in curves.items()}

    anchor = np.nonzero(rho > np.deg2rad(RHO_ANCHOR_DEG))[0].astype(np.int32)
    return FaceMesh(v, tris, labels, curves, anchor)


def make_sphere(subdivisions: int = 2, radius: float = 1.0) -> FaceMesh:
    """Icosphere with an equator silhouette ring and a back-cap anchor set."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
            (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
            (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    cache = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key in cache:
            return cache[key]
        m = verts[a] + verts[b]
        m = m / np.linalg.norm(m)
        verts.append(m)
        cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    v = np.array(verts) * radius
    tris = np.array(faces, dtype=np.int32)
    # outward orientation (positions are the normals on a sphere)
    centers = (v[tris[:, 0]] + v[tris[:, 1]] + v[tris[:, 2]]) / 3.0
    fn = np.cross(v[tris[:, 1]] - v[tris[:, 0]], v[tris[:, 2]] - v[tris[:, 0]])
    flip = (fn * centers).sum(axis=1) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    labels = np.full(v.shape[0], region_id("other"), dtype=np.int8)
    labels[v[:, 2] < -0.6 * radius] = region_id("nose")
    labels[(v[:, 1] < -0.6 * radius)] = region_id("forehead")
    labels[(v[:, 1] > 0.6 * radius)] = region_id("chin")

    # silhouette: ordered ring of near-equator (z ~ 0) vertices
    band = np.nonzero(np.abs(v[:, 2]) < 0.25 * radius)[0]
    ang = np.arctan2(v[band, 1], v[band, 0])
    order = band[np.argsort(ang)]
    sil = np.concatenate([order, order[:1]]).astype(np.int32)
    curves = {"silhouette": sil}
    anchors = np.nonzero(v[:, 2] > 0.8 * radius)[0].astype(np.int32)
    return FaceMesh(v, tris, labels, curves, anchors)


def make_sphere_patch(subdivisions: int = 3, z_cut: float = 0.45) -> FaceMesh:
    """Open near-uniform sphere patch (disk topology): the icosphere with the
    back cap removed. Chartable, with anchors on the rim band."""
    full = make_sphere(subdivisions)
    v, tris = full.vertices, full.triangles
    keep_tri = (v[tris][:, :, 2] < z_cut).all(axis=1)
    tris = tris[keep_tri]
    used = np.unique(tris)
    remap = np.full(v.shape[0], -1, dtype=np.int32)
    remap[used] = np.arange(used.shape[0], dtype=np.int32)
    v2 = v[used]
    tris2 = remap[tris]
    labels = np.full(v2.shape[0], region_id("other"), dtype=np.int8)
    anchors = np.nonzero(v2[:, 2] > z_cut - 0.25)[0].astype(np.int32)
    return FaceMesh(v2, tris2, labels, {}, anchors)


def fit_camera(
    mesh: FaceMesh, image_size=(640, 640), view: str = "frontal", fill: float = 0.7
) -> Camera:
    """Weak-perspective camera framing the mesh in the image."""
    if view == "frontal":
        rot = np.eye(3)
    elif view == "side":
        rot = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    else:
        raise ValueError(f"unknown view '{view}'")
    pts = mesh.vertices @ rot.T
    lo = pts[:, :2].min(axis=0)
    hi = pts[:, :2].max(axis=0)
    span = max(hi[0] - lo[0], hi[1] - lo[1])
    scale = fill * min(image_size) / span
    center = 0.5 * (lo + hi)
    translation = np.array(image_size, dtype=np.float64) / 2.0 - scale * center
    return Camera(view, float(scale), rot, translation, tuple(image_size))


def default_lighting(seed: int = 0) -> SHLighting:
    rng = np.random.default_rng(seed)
    c = np.zeros(9)
    c[0] = 2.7
    c[1:4] = rng.uniform(-0.45, 0.45, 3)
    c[4:] = rng.uniform(-0.18, 0.18, 5)
    return SHLighting(c)


def vertex_albedo(mesh: FaceMesh, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = np.array([0.78, 0.60, 0.50]) + rng.uniform(-0.04, 0.04, 3)
    albedo = np.tile(base, (mesh.n_vertices, 1))
    albedo[mesh.region_mask("mouth")] = [0.66, 0.36, 0.34]
    albedo[mesh.region_mask("eyes")] = [0.38, 0.30, 0.28]
    albedo[mesh.region_mask("nose")] *= 1.04
    for name in ("left_eyebrow", "right_eyebrow"):
        path = mesh.feature_curves.get(name)
        if path is not None:
            albedo[path] = [0.30, 0.22, 0.16]
    return np.clip(albedo, 0.0, 1.0)


def make_photo(
    mesh: FaceMesh,
    cam: Camera,
    seed: int = 0,
    lighting: SHLighting | None = None,
):
    """Render a shaded, freckled portrait photo registered to the mesh.

    Returns (photo, face_mask); the photo background is a smooth gradient with
    soft blobs so warping and seams are observable.
    """
    rng = np.random.default_rng(seed)
    light = lighting or default_lighting(seed)
    normals = vertex_normals(mesh)
    shading = np.clip(light.evaluate(normals), 0.08, None)
    shading = shading / np.percentile(shading, 95)
    colors = np.clip(vertex_albedo(mesh, seed) * shading[:, None], 0.0, 1.0)
    face, mask = rasterize_screen_attributes(mesh, cam, colors)

    w, h = cam.image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    bgc0 = np.array([0.30, 0.34, 0.42]) + rng.uniform(-0.05, 0.05, 3)
    bgc1 = np.array([0.16, 0.18, 0.24]) + rng.uniform(-0.04, 0.04, 3)
    g = (yy / max(h - 1, 1))[..., None]
    photo = bgc0 * (1 - g) + bgc1 * g
    for _ in range(3):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        rad = rng.uniform(0.15, 0.4) * min(w, h)
        blob = np.exp(-0.5 * (((xx - cx) / rad) ** 2 + ((yy - cy) / rad) ** 2))
        photo += (rng.uniform(-0.08, 0.12) * blob)[..., None]
    photo = np.clip(photo, 0.0, 1.0)

    photo[mask] = face[mask]
    # high-frequency skin detail: freckle speckle inside the face only
    noise = rng.normal(0.0, 0.05, (h, w))
    noise -= gaussian_filter(noise, 2.0)
    spots = (rng.random((h, w)) < 0.003).astype(np.float64)
    spots = gaussian_filter(spots, 1.0) * 6.0
    detail = (1.0 + noise - spots)[..., None]
    photo[mask] = np.clip(photo[mask] * detail[mask], 0.0, 1.0)
    return photo, mask


def make_expression(mesh: FaceMesh, kind: str = "open_mouth", amount: float = 1.0) -> FaceMesh:
    """Smoothly displaced copy of the mesh acting as an expression sample."""
    v = mesh.vertices.copy()
    ry = float(np.abs(v[:, 1]).max())

    def gauss(center, sigma):
        d = np.linalg.norm(v - np.asarray(center), axis=1)
        return np.exp(-0.5 * (d / sigma) ** 2)

    if kind == "open_mouth":
        w = gauss((0.0, 0.62 * ry, v[:, 2].min() * 0.4), 0.38)
        v[:, 1] += 0.16 * amount * w
        v[:, 2] += 0.04 * amount * w
    elif kind == "smile":
        for sgn in (-1.0, 1.0):
            w = gauss((sgn * 0.30, 0.52 * ry, v[:, 2].min() * 0.4), 0.25)
            v[:, 0] += sgn * 0.07 * amount * w
            v[:, 1] -= 0.05 * amount * w
    elif kind == "brow_raise":
        w = gauss((0.0, -0.42 * ry, v[:, 2].min() * 0.5), 0.45)
        v[:, 1] -= 0.07 * amount * w
    else:
        raise ValueError(f"unknown expression '{kind}'")
    return mesh.with_vertices(v)


def make_scene(
    image_size=(640, 640),
    seed: int = 0,
    rings: int = 24,
    spokes: int = 56,
    identity_seed: int | None = None,
    expression: str | None = None,
):
    """Complete synthetic input: (mesh M, neutral M0, camera, photo, mask)."""
    neutral = make_face(rings, spokes, identity_seed)
    mesh = make_expression(neutral, expression) if expression else neutral
    cam = fit_camera(neutral, image_size)
    photo, mask = make_photo(mesh, cam, seed)
    return {
        "mesh": mesh,
        "neutral": neutral,
        "camera": cam,
        "photo": photo,
        "face_mask": mask,
    }
