"""Pure-numpy kernel backend.

Rasterization is vectorized per triangle (same barycentric math and the same
triangle order as the numba backend, so results agree to float precision).
Max-flow reuses the shared Dinic loop uncompiled.
"""

import numpy as np

from . import _loops

maxflow = _loops.maxflow
fnv1a64 = _loops.fnv1a64_py


def _tri_bbox(xs, ys, res_x, res_y):
    xmin = max(int(np.floor(xs.min() - 0.5)), 0)
    xmax = min(int(np.ceil(xs.max() - 0.5)), res_x - 1)
    ymin = max(int(np.floor(ys.min() - 0.5)), 0)
    ymax = min(int(np.ceil(ys.max() - 0.5)), res_y - 1)
    return xmin, xmax, ymin, ymax


def _bary_grid(x, y, xmin, xmax, ymin, ymax):
    """Barycentric weights of all pixel centers in a bbox for one triangle."""
    cx = np.arange(xmin, xmax + 1, dtype=np.float64) + 0.5
    cy = np.arange(ymin, ymax + 1, dtype=np.float64) + 0.5
    cxg, cyg = np.meshgrid(cx, cy)
    x0, x1, x2 = x
    y0, y1, y2 = y
    area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    w0 = (x1 - cxg) * (y2 - cyg) - (x2 - cxg) * (y1 - cyg)
    w1 = (x2 - cxg) * (y0 - cyg) - (x0 - cxg) * (y2 - cyg)
    w2 = (x0 - cxg) * (y1 - cyg) - (x1 - cxg) * (y0 - cyg)
    if area2 > 0.0:
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
    else:
        inside = (w0 <= 0.0) & (w1 <= 0.0) & (w2 <= 0.0)
    return area2, w0 / area2, w1 / area2, w2 / area2, inside


def _bilinear(image, xs, ys):
    """Sample image (H,W,C) at continuous coords; centers at integer+0.5."""
    h, w = image.shape[:2]
    xf = xs - 0.5
    yf = ys - 0.5
    j0 = np.floor(xf).astype(np.int64)
    i0 = np.floor(yf).astype(np.int64)
    fx = (xf - j0)[..., None]
    fy = (yf - i0)[..., None]
    j0c = np.clip(j0, 0, w - 1)
    j1c = np.clip(j0 + 1, 0, w - 1)
    i0c = np.clip(i0, 0, h - 1)
    i1c = np.clip(i0 + 1, 0, h - 1)
    top = (1.0 - fx) * image[i0c, j0c] + fx * image[i0c, j1c]
    bot = (1.0 - fx) * image[i1c, j0c] + fx * image[i1c, j1c]
    return (1.0 - fy) * top + fy * bot


def rasterize_attributes(px, tris, attrs, res):
    nch = attrs.shape[1]
    out = np.zeros((res, res, nch), dtype=np.float64)
    mask = np.zeros((res, res), dtype=np.uint8)
    for t in range(tris.shape[0]):
        idx = tris[t]
        x = px[idx, 0]
        y = px[idx, 1]
        area2 = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
        if abs(area2) < 1e-12:
            continue
        xmin, xmax, ymin, ymax = _tri_bbox(x, y, res, res)
        if xmax < xmin or ymax < ymin:
            continue
        _, b0, b1, b2, inside = _bary_grid(x, y, xmin, xmax, ymin, ymax)
        if not inside.any():
            continue
        vals = (
            b0[..., None] * attrs[idx[0]]
            + b1[..., None] * attrs[idx[1]]
            + b2[..., None] * attrs[idx[2]]
        )
        sub = out[ymin : ymax + 1, xmin : xmax + 1]
        sub[inside] = vals[inside]
        mask[ymin : ymax + 1, xmin : xmax + 1][inside] = 1
    return out, mask


def render_mesh(
    xy, depth, tris, keep, tex_xy, texture, nrm_src, nrm_dst, tri_stretch, out_h, out_w
):
    color = np.zeros((out_h, out_w, 3), dtype=np.float64)
    mask = np.zeros((out_h, out_w), dtype=np.uint8)
    nb = np.zeros((out_h, out_w, 3), dtype=np.float64)
    na = np.zeros((out_h, out_w, 3), dtype=np.float64)
    stretch = np.zeros((out_h, out_w), dtype=np.float64)
    zbuf = np.full((out_h, out_w), np.inf, dtype=np.float64)
    texture = np.asarray(texture, dtype=np.float64)
    for t in range(tris.shape[0]):
        if not keep[t]:
            continue
        idx = tris[t]
        x = xy[idx, 0]
        y = xy[idx, 1]
        area2 = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
        if abs(area2) < 1e-12:
            continue
        xmin, xmax, ymin, ymax = _tri_bbox(x, y, out_w, out_h)
        if xmax < xmin or ymax < ymin:
            continue
        _, b0, b1, b2, inside = _bary_grid(x, y, xmin, xmax, ymin, ymax)
        z = b0 * depth[idx[0]] + b1 * depth[idx[1]] + b2 * depth[idx[2]]
        zsub = zbuf[ymin : ymax + 1, xmin : xmax + 1]
        win = inside & (z < zsub)
        if not win.any():
            continue
        zsub[win] = z[win]
        tx = b0 * tex_xy[idx[0], 0] + b1 * tex_xy[idx[1], 0] + b2 * tex_xy[idx[2], 0]
        ty = b0 * tex_xy[idx[0], 1] + b1 * tex_xy[idx[1], 1] + b2 * tex_xy[idx[2], 1]
        texel = _bilinear(texture, tx[win], ty[win])
        color[ymin : ymax + 1, xmin : xmax + 1][win] = texel
        for buf, vn in ((nb, nrm_src), (na, nrm_dst)):
            vals = (
                b0[..., None] * vn[idx[0]]
                + b1[..., None] * vn[idx[1]]
                + b2[..., None] * vn[idx[2]]
            )
            buf[ymin : ymax + 1, xmin : xmax + 1][win] = vals[win]
        stretch[ymin : ymax + 1, xmin : xmax + 1][win] = tri_stretch[t]
        mask[ymin : ymax + 1, xmin : xmax + 1][win] = 1
    return color, mask, nb, na, stretch, zbuf


def grid_resample(image, rest, deformed, tris, fill):
    h, w, nch = image.shape
    out = np.empty((h, w, nch), dtype=np.float64)
    out[:] = np.asarray(fill, dtype=np.float64)
    covered = np.zeros((h, w), dtype=np.uint8)
    image = np.asarray(image, dtype=np.float64)
    inverted = 0
    for t in range(tris.shape[0]):
        idx = tris[t]
        x = deformed[idx, 0]
        y = deformed[idx, 1]
        area2 = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
        rx = rest[idx, 0]
        ry = rest[idx, 1]
        rest_area2 = (rx[1] - rx[0]) * (ry[2] - ry[0]) - (rx[2] - rx[0]) * (
            ry[1] - ry[0]
        )
        if area2 * rest_area2 < 0.0:
            inverted += 1
        if abs(area2) < 1e-12:
            continue
        xmin, xmax, ymin, ymax = _tri_bbox(x, y, w, h)
        if xmax < xmin or ymax < ymin:
            continue
        _, b0, b1, b2, inside = _bary_grid(x, y, xmin, xmax, ymin, ymax)
        csub = covered[ymin : ymax + 1, xmin : xmax + 1]
        win = inside & (csub == 0)
        if not win.any():
            continue
        sx = b0 * rx[0] + b1 * rx[1] + b2 * rx[2]
        sy = b0 * ry[0] + b1 * ry[1] + b2 * ry[2]
        out[ymin : ymax + 1, xmin : xmax + 1][win] = _bilinear(
            image, sx[win], sy[win]
        )
        csub[win] = 1
    return out, covered, inverted
