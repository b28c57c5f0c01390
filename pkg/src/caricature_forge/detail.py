"""Overlapping-patch residual detail enhancement.

Enhancers are plug-ins: callable(patch, origin) -> signed residual. Because
only high-frequency residuals are merged (feathered in overlaps), any
contract-conforming enhancer produces seam-free output; a direct-color
baseline is provided to demonstrate the seams it would cause.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import config
from .errors import ContractViolationError

_EDGE_EPS = 1e-12


@dataclass
class PatchPlan:
    """Patch origins (y, x) covering the mask at a fixed size/stride."""

    size: int
    stride: int
    origins: np.ndarray  # (P,2) int
    image_size: tuple  # (H, W)


def _axis_origins(lo: int, hi: int, size: int, stride: int, limit: int):
    """Window starts covering [lo, hi) with windows inside [0, limit)."""
    if limit < size:
        raise ValueError("image smaller than patch size (pad first)")
    xs = []
    x = min(max(lo, 0), limit - size)
    while True:
        xs.append(min(x, limit - size))
        if x + size >= hi or x + size >= limit:
            break
        x += stride
    return sorted(set(xs))


def plan_patches(
    mask: np.ndarray,
    size: int = config.PATCH_SIZE,
    stride: int = config.PATCH_STRIDE,
) -> PatchPlan:
    """Minimal grid of size x size windows at `stride` covering the mask."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return PatchPlan(size, stride, np.zeros((0, 2), dtype=int), (h, w))
    oy = _axis_origins(ys.min(), ys.max() + 1, size, stride, h)
    ox = _axis_origins(xs.min(), xs.max() + 1, size, stride, w)
    origins = np.array([(y, x) for y in oy for x in ox], dtype=int)
    return PatchPlan(size, stride, origins, (h, w))


def _feather_profile(size: int, overlap: int) -> np.ndarray:
    """Per-axis weight: linear ramp over the overlap margin, never zero."""
    u = np.arange(size, dtype=np.float64)
    ramp = np.minimum(u + 1.0, size - u)
    return np.minimum(ramp, float(max(overlap, 1))) / float(max(overlap, 1))


def check_residual_contract(
    residual: np.ndarray, origin, mean_bound: float = config.RESIDUAL_MEAN_BOUND
):
    if not np.isfinite(residual).all():
        raise ContractViolationError(f"patch at {tuple(origin)}: non-finite residual")
    means = residual.reshape(-1, residual.shape[-1]).mean(axis=0)
    if np.abs(means).max() > mean_bound:
        raise ContractViolationError(
            f"patch at {tuple(origin)}: residual mean {means} exceeds "
            f"+/-{mean_bound} (not high-frequency-only)"
        )


def enhance(image: np.ndarray, plan: PatchPlan, enhancer) -> np.ndarray:
    """Apply the enhancer per patch and merge residuals with feathering.

    Overlap weights are normalized to sum to exactly 1 wherever any patch
    covers, so single-covered pixels carry their patch residual unchanged.
    """
    h, w = image.shape[:2]
    if plan.origins.shape[0] == 0:
        return image.copy()
    size = plan.size
    overlap = max(size - plan.stride, 1)
    prof = _feather_profile(size, overlap)
    w2d = prof[:, None] * prof[None, :]

    acc = np.zeros((h, w, image.shape[2]))
    wacc = np.zeros((h, w))
    for origin in plan.origins:
        y, x = int(origin[0]), int(origin[1])
        patch = image[y : y + size, x : x + size]
        residual = np.asarray(enhancer(patch, (y, x)), dtype=np.float64)
        if residual.shape != patch.shape:
            raise ContractViolationError(
                f"patch at ({y},{x}): residual shape {residual.shape}"
            )
        check_residual_contract(residual, (y, x))
        acc[y : y + size, x : x + size] += w2d[..., None] * residual
        wacc[y : y + size, x : x + size] += w2d
    covered = wacc > _EDGE_EPS
    merged = np.zeros_like(acc)
    merged[covered] = acc[covered] / wacc[covered][:, None]
    out = image.copy()
    out[covered] = np.clip(image[covered] + merged[covered], 0.0, 1.0)
    return out


def merge_direct_colors(image: np.ndarray, plan: PatchPlan, color_fn) -> np.ndarray:
    """Naive per-patch full-color prediction pasted without blending.

    The comparison baseline: per-patch color outputs disagree in overlaps, so
    hard pasting leaves visible seams at patch boundaries.
    """
    out = image.copy()
    for origin in plan.origins:
        y, x = int(origin[0]), int(origin[1])
        patch = image[y : y + plan.size, x : x + plan.size]
        out[y : y + plan.size, x : x + plan.size] = np.clip(
            color_fn(patch, (y, x)), 0.0, 1.0
        )
    return out


# ---------------------------------------------------------------------------
# Deterministic baseline enhancer (stand-in for a trained residual model)


def baseline_residual(
    patch: np.ndarray,
    stretch_patch: np.ndarray,
    gain: float = config.BASELINE_GAIN,
) -> np.ndarray:
    """Unsharp-mask residual driven by the local stretch factor.

    sigma grows with sqrt(stretch); the residual fades in over stretch 1..1.5
    and is exactly zero where stretch <= 1. Zero-mean on its support.
    """
    support = stretch_patch > 1.0
    if not support.any():
        return np.zeros_like(patch)
    mean_stretch = float(stretch_patch[support].mean())
    sigma = max(0.8 * np.sqrt(mean_stretch), 0.3)
    blur = np.stack(
        [gaussian_filter(patch[..., c], sigma, mode="nearest") for c in range(patch.shape[2])],
        axis=-1,
    )
    residual = gain * (patch - blur)
    fade = np.clip((stretch_patch - 1.0) / 0.5, 0.0, 1.0)
    residual *= fade[..., None]
    sup3 = support[..., None] & np.ones_like(residual, dtype=bool)
    for c in range(residual.shape[2]):
        ch = residual[..., c]
        m = ch[support].mean()
        ch[support] -= m
    residual[~sup3] = 0.0
    return residual


def make_baseline_enhancer(stretch: np.ndarray, gain: float = config.BASELINE_GAIN):
    """Bind the render's stretch map; returns an enhance()-compatible callable."""

    def enhancer(patch, origin):
        y, x = origin
        sp = stretch[y : y + patch.shape[0], x : x + patch.shape[1]]
        return baseline_residual(patch, sp, gain)

    return enhancer


def make_direct_color_baseline(stretch: np.ndarray, gain: float = config.BASELINE_GAIN):
    """Full-color per-patch sharpener with patch-adaptive gain.

    Models a color-predicting network: each patch normalizes its own contrast,
    so adjacent patches disagree slightly and hard merging shows seams.
    """

    def color_fn(patch, origin):
        y, x = origin
        sp = stretch[y : y + patch.shape[0], x : x + patch.shape[1]]
        residual = baseline_residual(patch, sp, gain)
        # patch-level exposure/contrast renormalization (the seam source)
        target_mean = 0.45
        m = float(patch.mean())
        shift = 0.5 * (target_mean - m)
        out = patch + residual + shift
        return out

    return color_fn


def seam_discontinuity(image: np.ndarray, reference: np.ndarray, plan: PatchPlan) -> dict:
    """Gradient discontinuity the tiled merge introduced at patch boundaries.

    `reference` is the same enhancement applied to the whole image in one
    pass (no tiling), so any cross-boundary gradient excess is a seam
    artifact. Reported against the within-patch 95th-percentile gradient of
    the output.
    """
    gray = image.mean(axis=2) if image.ndim == 3 else image
    ref = reference.mean(axis=2) if reference.ndim == 3 else reference
    h, w = gray.shape
    gx = np.abs(np.diff(gray, axis=1) - np.diff(ref, axis=1))
    gy = np.abs(np.diff(gray, axis=0) - np.diff(ref, axis=0))
    own_x = np.abs(np.diff(gray, axis=1))
    own_y = np.abs(np.diff(gray, axis=0))
    bx, by = set(), set()
    for y, x in plan.origins:
        for edge in (x, x + plan.size):
            if 0 < edge < w:
                bx.add(edge - 1)  # gradient column crossing the boundary
        for edge in (y, y + plan.size):
            if 0 < edge < h:
                by.add(edge - 1)
    col_mask = np.zeros(w - 1, dtype=bool)
    row_mask = np.zeros(h - 1, dtype=bool)
    if bx:
        col_mask[sorted(bx)] = True
    if by:
        row_mask[sorted(by)] = True
    boundary_vals = np.concatenate([gx[:, col_mask].ravel(), gy[row_mask, :].ravel()])
    interior_vals = np.concatenate(
        [own_x[:, ~col_mask].ravel(), own_y[~row_mask, :].ravel()]
    )
    return {
        "boundary_max": float(boundary_vals.max(initial=0.0)),
        "interior_p95": float(np.percentile(interior_vals, 95)),
    }


def external_enhancer(endpoint: str, stretch: np.ndarray, timeout: float = 60.0):
    """enhance()-compatible adapter for a learned residual model over HTTP.

    Sends a 4-channel raster container (RGB patch + local stretch) to the
    endpoint; expects a 3-channel signed residual container back. Same wire
    contract as the lambda-map predictor.
    """
    from .param import container_bytes, container_from_bytes

    def enhancer(patch, origin):
        import httpx

        y, x = origin
        sp = stretch[y : y + patch.shape[0], x : x + patch.shape[1]]
        payload = np.concatenate([patch, sp[..., None]], axis=-1)
        resp = httpx.post(
            endpoint,
            content=container_bytes(payload, np.ones(patch.shape[:2], dtype=np.uint8)),
            headers={"content-type": "application/octet-stream"},
            timeout=timeout,
        )
        resp.raise_for_status()
        residual, _ = container_from_bytes(resp.content)
        if residual.ndim != 3 or residual.shape != patch.shape:
            raise ContractViolationError(
                f"enhancer endpoint returned shape {residual.shape}"
            )
        return residual

    return enhancer


# ---------------------------------------------------------------------------
# Training-pair generation


def expected_pair_count(n_images: int, levels: int) -> int:
    return n_images * levels


def _resample_factor(image: np.ndarray, factor: float) -> np.ndarray:
    """Downsample by `factor` (antialiased) and bilinearly upsample back."""
    from scipy.ndimage import zoom

    if factor <= 1.0 + 1e-6:
        return image.copy()
    blurred = np.stack(
        [
            gaussian_filter(image[..., c], 0.5 * (factor - 1.0), mode="nearest")
            for c in range(image.shape[2])
        ],
        axis=-1,
    )
    small = zoom(blurred, (1.0 / factor, 1.0 / factor, 1.0), order=1)
    up = zoom(small, (image.shape[0] / small.shape[0], image.shape[1] / small.shape[1], 1.0), order=1)
    return np.clip(up[: image.shape[0], : image.shape[1]], 0.0, 1.0)


def make_training_pairs(
    image: np.ndarray,
    mesh,
    cam,
    levels: int = 10,
    seed: int = 0,
    crops_per_pair: int = 10,
    patch_size: int = config.PATCH_SIZE,
):
    """Blurry/sharp render pairs across exaggeration levels.

    Per level: exaggerate the mesh, measure the mean stretch, texture once
    with a stretch-downsampled photo (blurry) and once with the full photo
    (sharp), and take seeded random patch crops. Levels whose mean stretch is
    not above 1 are skipped.
    """
    from .field import synth_exaggeration
    from .mesh import exaggerate, prefactor
    from .render import render_textured

    rng = np.random.default_rng(seed)
    ctx = prefactor(mesh)
    pairs = []
    for level in range(1, levels + 1):
        amp = 1.0 + 0.12 * level
        lam = synth_exaggeration(
            mesh, seed * 7919 + level, scale_range=(1.0, amp)
        )
        ex = exaggerate(mesh, lam, ctx)
        sharp_out = render_textured(mesh, ex, cam, image)
        mask = sharp_out.mask
        stretch = float(sharp_out.stretch[mask].mean()) if mask.any() else 0.0
        if stretch <= 1.0:
            continue
        blurry_tex = _resample_factor(image, np.sqrt(stretch))
        blurry_out = render_textured(mesh, ex, cam, blurry_tex)

        h, w = image.shape[:2]
        ys, xs = np.nonzero(mask)
        crops = []
        for _ in range(crops_per_pair):
            k = int(rng.integers(0, ys.size))
            cy = int(np.clip(ys[k] - patch_size // 2, 0, h - patch_size))
            cx = int(np.clip(xs[k] - patch_size // 2, 0, w - patch_size))
            crops.append((cy, cx))
        pairs.append(
            {
                "level": level,
                "stretch": stretch,
                "blurry": blurry_out.color,
                "sharp": sharp_out.color,
                "mask": mask,
                "stretch_map": sharp_out.stretch,
                "crops": crops,
            }
        )
    return pairs


def laplacian_energy(image: np.ndarray) -> float:
    """Sharpness proxy: mean squared 5-point Laplacian response."""
    gray = image.mean(axis=2) if image.ndim == 3 else image
    lap = (
        4.0 * gray[1:-1, 1:-1]
        - gray[:-2, 1:-1]
        - gray[2:, 1:-1]
        - gray[1:-1, :-2]
        - gray[1:-1, 2:]
    )
    return float(np.mean(lap**2))
