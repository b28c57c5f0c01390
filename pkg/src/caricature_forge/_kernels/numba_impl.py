"""numba-compiled kernels. Same contracts as numpy_impl; see package docstring."""

import numpy as np
from numba import njit

from . import _loops

maxflow = njit(cache=True)(_loops.maxflow)


@njit(cache=True)
def fnv1a64(data):
    h = np.uint64(0xCBF29CE484222325)
    prime = np.uint64(0x100000001B3)
    for i in range(data.shape[0]):
        h = np.uint64(h ^ np.uint64(data[i]))
        h = np.uint64(h * prime)
    return h


@njit(cache=True)
def rasterize_attributes(px, tris, attrs, res):
    """Fill an res x res raster with barycentric-interpolated vertex attributes.

    px: (N,2) vertex positions in pixel coords; tris: (M,3) int32; attrs: (N,C).
    Pixels outside every triangle stay 0 with mask 0.
    """
    nch = attrs.shape[1]
    out = np.zeros((res, res, nch), dtype=np.float64)
    mask = np.zeros((res, res), dtype=np.uint8)
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = px[i0, 0], px[i0, 1]
        x1, y1 = px[i1, 0], px[i1, 1]
        x2, y2 = px[i2, 0], px[i2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area2) < 1e-12:
            continue
        xmin = max(int(np.floor(min(x0, min(x1, x2)) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, max(x1, x2)) - 0.5)), res - 1)
        ymin = max(int(np.floor(min(y0, min(y1, y2)) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, max(y1, y2)) - 0.5)), res - 1)
        for iy in range(ymin, ymax + 1):
            cy = iy + 0.5
            for ix in range(xmin, xmax + 1):
                cx = ix + 0.5
                w0 = (x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)
                w1 = (x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)
                w2 = (x0 - cx) * (y1 - cy) - (x1 - cx) * (y0 - cy)
                if area2 > 0.0:
                    inside = w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0
                else:
                    inside = w0 <= 0.0 and w1 <= 0.0 and w2 <= 0.0
                if not inside:
                    continue
                b0 = w0 / area2
                b1 = w1 / area2
                b2 = w2 / area2
                for c in range(nch):
                    out[iy, ix, c] = (
                        b0 * attrs[i0, c] + b1 * attrs[i1, c] + b2 * attrs[i2, c]
                    )
                mask[iy, ix] = 1
    return out, mask


@njit(cache=True)
def render_mesh(
    xy, depth, tris, keep, tex_xy, texture, nrm_src, nrm_dst, tri_stretch, out_h, out_w
):
    """Z-buffered rasterization with bilinear texture lookup.

    Interpolates texture coords, both normal sets and per-triangle stretch.
    Depth test: smaller wins (z grows away from the viewer).
    """
    th, tw = texture.shape[0], texture.shape[1]
    color = np.zeros((out_h, out_w, 3), dtype=np.float64)
    mask = np.zeros((out_h, out_w), dtype=np.uint8)
    nb = np.zeros((out_h, out_w, 3), dtype=np.float64)
    na = np.zeros((out_h, out_w, 3), dtype=np.float64)
    stretch = np.zeros((out_h, out_w), dtype=np.float64)
    zbuf = np.full((out_h, out_w), np.inf, dtype=np.float64)
    for t in range(tris.shape[0]):
        if keep[t] == 0:
            continue
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = xy[i0, 0], xy[i0, 1]
        x1, y1 = xy[i1, 0], xy[i1, 1]
        x2, y2 = xy[i2, 0], xy[i2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area2) < 1e-12:
            continue
        xmin = max(int(np.floor(min(x0, min(x1, x2)) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, max(x1, x2)) - 0.5)), out_w - 1)
        ymin = max(int(np.floor(min(y0, min(y1, y2)) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, max(y1, y2)) - 0.5)), out_h - 1)
        for iy in range(ymin, ymax + 1):
            cy = iy + 0.5
            for ix in range(xmin, xmax + 1):
                cx = ix + 0.5
                w0 = (x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)
                w1 = (x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)
                w2 = (x0 - cx) * (y1 - cy) - (x1 - cx) * (y0 - cy)
                if area2 > 0.0:
                    inside = w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0
                else:
                    inside = w0 <= 0.0 and w1 <= 0.0 and w2 <= 0.0
                if not inside:
                    continue
                b0 = w0 / area2
                b1 = w1 / area2
                b2 = w2 / area2
                z = b0 * depth[i0] + b1 * depth[i1] + b2 * depth[i2]
                if z >= zbuf[iy, ix]:
                    continue
                zbuf[iy, ix] = z
                tx = b0 * tex_xy[i0, 0] + b1 * tex_xy[i1, 0] + b2 * tex_xy[i2, 0]
                ty = b0 * tex_xy[i0, 1] + b1 * tex_xy[i1, 1] + b2 * tex_xy[i2, 1]
                # bilinear texture sample, pixel centers at integer+0.5
                xf = tx - 0.5
                yf = ty - 0.5
                j0 = int(np.floor(xf))
                i0t = int(np.floor(yf))
                fx = xf - j0
                fy = yf - i0t
                j0c = min(max(j0, 0), tw - 1)
                j1c = min(max(j0 + 1, 0), tw - 1)
                i0c = min(max(i0t, 0), th - 1)
                i1c = min(max(i0t + 1, 0), th - 1)
                for c in range(3):
                    v00 = texture[i0c, j0c, c]
                    v01 = texture[i0c, j1c, c]
                    v10 = texture[i1c, j0c, c]
                    v11 = texture[i1c, j1c, c]
                    color[iy, ix, c] = (1.0 - fy) * (
                        (1.0 - fx) * v00 + fx * v01
                    ) + fy * ((1.0 - fx) * v10 + fx * v11)
                for c in range(3):
                    nb[iy, ix, c] = (
                        b0 * nrm_src[i0, c] + b1 * nrm_src[i1, c] + b2 * nrm_src[i2, c]
                    )
                    na[iy, ix, c] = (
                        b0 * nrm_dst[i0, c] + b1 * nrm_dst[i1, c] + b2 * nrm_dst[i2, c]
                    )
                stretch[iy, ix] = tri_stretch[t]
                mask[iy, ix] = 1
    return color, mask, nb, na, stretch, zbuf


@njit(cache=True)
def grid_resample(image, rest, deformed, tris, fill):
    """Resample image through a piecewise-linear grid map (deformed -> rest).

    Rasterizes deformed triangles; each covered output pixel is pulled from the
    rest-position preimage via bilinear sampling. Uncovered pixels get `fill`
    (per-channel); returns the covered mask and the inverted-triangle count.
    """
    h, w = image.shape[0], image.shape[1]
    nch = image.shape[2]
    out = np.empty((h, w, nch), dtype=np.float64)
    covered = np.zeros((h, w), dtype=np.uint8)
    for iy in range(h):
        for ix in range(w):
            for c in range(nch):
                out[iy, ix, c] = fill[c]
    inverted = 0
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = deformed[i0, 0], deformed[i0, 1]
        x1, y1 = deformed[i1, 0], deformed[i1, 1]
        x2, y2 = deformed[i2, 0], deformed[i2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        r0x, r0y = rest[i0, 0], rest[i0, 1]
        r1x, r1y = rest[i1, 0], rest[i1, 1]
        r2x, r2y = rest[i2, 0], rest[i2, 1]
        rest_area2 = (r1x - r0x) * (r2y - r0y) - (r2x - r0x) * (r1y - r0y)
        if area2 * rest_area2 < 0.0:
            inverted += 1
        if abs(area2) < 1e-12:
            continue
        xmin = max(int(np.floor(min(x0, min(x1, x2)) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, max(x1, x2)) - 0.5)), w - 1)
        ymin = max(int(np.floor(min(y0, min(y1, y2)) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, max(y1, y2)) - 0.5)), h - 1)
        for iy in range(ymin, ymax + 1):
            cy = iy + 0.5
            for ix in range(xmin, xmax + 1):
                if covered[iy, ix] == 1:
                    continue
                cx = ix + 0.5
                w0 = (x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)
                w1 = (x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)
                w2 = (x0 - cx) * (y1 - cy) - (x1 - cx) * (y0 - cy)
                if area2 > 0.0:
                    inside = w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0
                else:
                    inside = w0 <= 0.0 and w1 <= 0.0 and w2 <= 0.0
                if not inside:
                    continue
                b0 = w0 / area2
                b1 = w1 / area2
                b2 = w2 / area2
                sx = b0 * r0x + b1 * r1x + b2 * r2x
                sy = b0 * r0y + b1 * r1y + b2 * r2y
                xf = sx - 0.5
                yf = sy - 0.5
                j0 = int(np.floor(xf))
                i0t = int(np.floor(yf))
                fx = xf - j0
                fy = yf - i0t
                j0c = min(max(j0, 0), w - 1)
                j1c = min(max(j0 + 1, 0), w - 1)
                i0c = min(max(i0t, 0), h - 1)
                i1c = min(max(i0t + 1, 0), h - 1)
                for c in range(nch):
                    v00 = image[i0c, j0c, c]
                    v01 = image[i0c, j1c, c]
                    v10 = image[i1c, j0c, c]
                    v11 = image[i1c, j1c, c]
                    out[iy, ix, c] = (1.0 - fy) * (
                        (1.0 - fx) * v00 + fx * v01
                    ) + fy * ((1.0 - fx) * v10 + fx * v11)
                covered[iy, ix] = 1
    return out, covered, inverted
