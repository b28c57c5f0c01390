"""composite-relight: seam cut, Poisson blending, SH lighting, alpha map,
reshading and the refinement warps."""

import numpy as np
import pytest
import scipy.ndimage as ndi

from caricature_forge.composite import (
    AlphaMap,
    SeamResult,
    SHLighting,
    build_alpha,
    ear_edit,
    estimate_lighting,
    fill_interior,
    poisson_blend,
    poisson_solve_region,
    reshade,
    seam_cut,
    sh_basis,
    to_gray,
    uniform_sphere_normals,
)
from caricature_forge.errors import InsufficientRegionError, SolverError
from caricature_forge.render import RenderOutput


def fake_render(color, mask, nb=None, na=None):
    h, w = mask.shape
    z = np.zeros((h, w, 3))
    nb = z if nb is None else nb
    na = nb if na is None else na
    return RenderOutput(color, mask, nb, na, np.ones((h, w)), np.zeros((h, w)))


def disk_mask(h, w, cy, cx, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


class TestSHBasis:
    def test_orthonormal_over_sphere(self):
        n = uniform_sphere_normals(20000)
        y = sh_basis(n)
        gram = (y.T @ y) / n.shape[0] * 4 * np.pi
        assert np.abs(gram - np.eye(9)).max() < 0.02

    def test_lighting_invariant(self):
        with pytest.raises(ValueError):
            SHLighting(np.array([-1.0, 0, 0, 0, 0, 0, 0, 0, 0]))
        with pytest.raises(ValueError):
            SHLighting(np.full(9, np.nan))
        light = SHLighting(np.array([2.0, 0.1, 0.3, 0, 0, 0, 0, 0, 0]))
        assert light.evaluate(uniform_sphere_normals(1000)).mean() > 0


class TestSeamCut:
    def test_identical_band_costs_zero(self):
        mask = disk_mask(64, 64, 32, 32, 24)
        img = np.random.default_rng(0).uniform(0, 1, (64, 64, 3))
        fg = fake_render(img, mask)
        seam = seam_cut(fg, img, band_width=8)
        assert seam.cost == pytest.approx(0.0, abs=1e-12)
        assert (seam.labels & ~mask).sum() == 0

    def test_zero_difference_ring_is_free(self):
        h = w = 48
        mask = disk_mask(h, w, 24, 24, 20)
        rng = np.random.default_rng(1)
        bg = rng.uniform(0.2, 0.8, (h, w, 3))
        fg_img = bg + 0.5  # expensive everywhere...
        yy, xx = np.mgrid[0:h, 0:w]
        rad = np.sqrt((yy - 24.0) ** 2 + (xx - 24.0) ** 2)
        ring = (rad > 14) & (rad < 16.5)
        fg_img[ring] = bg[ring]  # ...except a free ring inside the band
        fg = fake_render(np.clip(fg_img, 0, 1), mask)
        bgc = np.clip(bg, 0, 1)
        diffless = np.linalg.norm(np.clip(fg_img, 0, 1) - bgc, axis=2)
        seam = seam_cut(fg, bgc, band_width=12)
        assert seam.cost < 1e-6  # the zero ring admits a free cut

    def test_cost_not_worse_than_naive_boundary(self):
        rng = np.random.default_rng(2)
        mask = disk_mask(56, 56, 28, 28, 22)
        bg = rng.uniform(0, 1, (56, 56, 3))
        fg_img = np.clip(bg + rng.normal(0, 0.2, bg.shape), 0, 1)
        fg = fake_render(fg_img, mask)
        band_width = 10
        seam = seam_cut(fg, bg, band_width=band_width)
        outline = ndi.binary_fill_holes(mask)
        core = ndi.binary_erosion(outline, iterations=band_width)
        diff = np.linalg.norm(fg_img - bg, axis=2)
        # naive cut: label exactly the eroded core as foreground
        naive = 0.0
        h, w = mask.shape
        for dy, dx in ((0, 1), (1, 0)):
            a = core[: h - dy, : w - dx] & ~core[dy:, dx:] & outline[dy:, dx:]
            b = ~core[: h - dy, : w - dx] & outline[: h - dy, : w - dx] & core[dy:, dx:]
            for m, off in ((a, (dy, dx)), (b, (dy, dx))):
                ai, aj = np.nonzero(m)
                naive += (diff[ai, aj] + diff[ai + off[0], aj + off[1]]).sum()
        assert seam.cost <= naive + 1e-9

    def test_matches_networkx_mincut_value(self):
        nx = pytest.importorskip("networkx")
        rng = np.random.default_rng(3)
        for _ in range(5):
            h, w = 20, 20
            mask = disk_mask(h, w, 10, 10, 8)
            bg = rng.uniform(0, 1, (h, w, 3))
            fg_img = np.clip(bg + rng.normal(0, 0.3, bg.shape), 0, 1)
            fg = fake_render(fg_img, mask)
            band_width = 4
            seam = seam_cut(fg, bg, band_width=band_width)
            expected = _nx_min_cut(nx, fg_img, bg, mask, band_width)
            assert seam.cost == pytest.approx(expected, abs=1e-9)

    def test_empty_mask_rejected(self):
        fg = fake_render(np.zeros((8, 8, 3)), np.zeros((8, 8), dtype=bool))
        with pytest.raises(ValueError):
            seam_cut(fg, np.zeros((8, 8, 3)))


def _nx_min_cut(nx, fg_img, bg, mask, band_width):
    """Independent min-cut oracle on the same band construction."""
    outline = ndi.binary_fill_holes(mask)
    core = ndi.binary_erosion(outline, iterations=band_width)
    if not core.any():
        dist = ndi.distance_transform_edt(outline)
        core = dist >= max(1.0, dist.max() - 0.5)
    band = outline & ~core
    near_core = ndi.binary_dilation(core) & band
    near_out = ndi.binary_dilation(~outline) & band
    diff = np.linalg.norm(fg_img - bg, axis=2)
    g = nx.Graph()
    h, w = mask.shape
    idx = {(i, j): k for k, (i, j) in enumerate(zip(*np.nonzero(band)))}
    s, t = "s", "t"
    for (i, j), k in idx.items():
        if near_core[i, j]:
            g.add_edge(s, k, capacity=1e18)
        elif near_out[i, j]:
            g.add_edge(k, t, capacity=1e18)
        for di, dj in ((0, 1), (1, 0)):
            ni, nj = i + di, j + dj
            if (ni, nj) in idx:
                wgt = diff[i, j] + diff[ni, nj]
                if g.has_edge(k, idx[(ni, nj)]):
                    g[k][idx[(ni, nj)]]["capacity"] += wgt
                else:
                    g.add_edge(k, idx[(ni, nj)], capacity=wgt)
    if s not in g or t not in g or not nx.has_path(g, s, t):
        return 0.0
    return nx.minimum_cut_value(g, s, t)


class TestPoissonBlend:
    def test_identical_images_noop(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0.1, 0.9, (32, 32, 3))
        mask = disk_mask(32, 32, 16, 16, 12)
        seam = SeamResult(mask, 0.0, mask)
        out = poisson_blend(fake_render(img, mask), img, seam)
        assert np.abs(out - img).max() < 1e-4

    def test_constant_offset_absorbed(self):
        rng = np.random.default_rng(1)
        bg = rng.uniform(0.2, 0.6, (32, 32, 3))
        bg = ndi.gaussian_filter(bg, (2, 2, 0))
        fg_img = np.clip(bg + 0.2, 0, 1)
        mask = disk_mask(32, 32, 16, 16, 10)
        seam = SeamResult(mask, 0.0, mask)
        out = poisson_blend(fake_render(fg_img, np.ones_like(mask)), bg, seam)
        assert np.abs(out - bg).max() < 1e-3

    def test_gradients_match_foreground(self):
        rng = np.random.default_rng(2)
        bg = ndi.gaussian_filter(rng.uniform(0, 1, (40, 40, 3)), (3, 3, 0))
        fg_img = ndi.gaussian_filter(rng.uniform(0, 1, (40, 40, 3)), (2, 2, 0))
        mask = disk_mask(40, 40, 20, 20, 13)
        seam = SeamResult(mask, 0.0, mask)
        out = poisson_blend(fake_render(fg_img, np.ones_like(mask)), bg, seam)
        interior = ndi.binary_erosion(mask, iterations=2)
        lap_out = ndi.laplace(out[..., 0])
        lap_fg = ndi.laplace(fg_img[..., 0])
        assert np.abs(lap_out[interior] - lap_fg[interior]).max() < 1e-3

    def test_matches_dense_oracle_32(self):
        rng = np.random.default_rng(3)
        region = disk_mask(32, 32, 16, 16, 11)
        guidance = ndi.gaussian_filter(rng.uniform(0, 1, (32, 32)), 2)
        dirichlet = ndi.gaussian_filter(rng.uniform(0, 1, (32, 32)), 3)
        got = poisson_solve_region(region, guidance, dirichlet, tol=1e-8)
        want = _dense_poisson(region, guidance, dirichlet)
        assert np.abs(got - want).max() < 1e-4

    def test_nonconvergence_raises(self):
        region = disk_mask(32, 32, 16, 16, 11)
        rng = np.random.default_rng(4)
        guidance = rng.uniform(0, 1, (32, 32))
        with pytest.raises(SolverError):
            poisson_solve_region(region, guidance, np.zeros((32, 32)), max_iters=2)


def _dense_poisson(region, guidance, dirichlet):
    h, w = region.shape
    ids = np.full((h, w), -1)
    pts = np.nonzero(region)
    n = pts[0].size
    ids[pts] = np.arange(n)
    a = np.zeros((n, n))
    b = np.zeros(n)
    for k, (i, j) in enumerate(zip(*pts)):
        deg = 0
        for di, dj in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            ni, nj = i + di, j + dj
            if not (0 <= ni < h and 0 <= nj < w):
                continue
            deg += 1
            b[k] += guidance[i, j] - guidance[ni, nj]
            if region[ni, nj]:
                a[k, ids[ni, nj]] = -1.0
            else:
                b[k] += dirichlet[ni, nj]
        a[k, k] = deg
    x = np.linalg.solve(a, b)
    out = dirichlet.copy()
    out[pts] = x
    return out


class TestFillInterior:
    def test_identical_boundaries_direct_copy(self):
        rng = np.random.default_rng(0)
        img = ndi.gaussian_filter(rng.uniform(0, 1, (48, 48, 3)), (2, 2, 0))
        mask = disk_mask(48, 48, 24, 24, 9)
        out = fill_interior(img, img, mask)
        assert np.abs(out - img).max() < 1e-4

    def test_empty_mask_noop(self):
        img = np.random.default_rng(1).uniform(0, 1, (32, 32, 3))
        out = fill_interior(img, img * 0.5, np.zeros((32, 32), dtype=bool))
        assert np.array_equal(out, img)

    def test_offset_boundary_warped_into_place(self):
        h = w = 96
        rng = np.random.default_rng(2)
        composite = ndi.gaussian_filter(rng.uniform(0.3, 0.7, (h, w, 3)), (4, 4, 0))
        src_mask = disk_mask(h, w, 48, 46, 14)
        dst_mask = disk_mask(h, w, 48, 49, 14)  # 3 px offset
        yy, xx = np.mgrid[0:h, 0:w]
        rad_src = np.sqrt((yy - 48.0) ** 2 + (xx - 46.0) ** 2)
        source = np.repeat(np.clip(rad_src / 14.0, 0, 2)[..., None], 3, axis=2) * 0.4
        out = fill_interior(composite, source, src_mask, dst_mask, cell=8)
        # the source is a radial cone centered at the source center; warping
        # its boundary onto the destination boundary must land the cone apex
        # (the interior minimum) on the destination center within ~1 px
        interior = ndi.binary_erosion(dst_mask, iterations=3)
        vals = np.where(interior, out[..., 0], np.inf)
        iy, ix = np.unravel_index(np.argmin(vals), vals.shape)
        assert np.hypot(ix + 0.5 - 49.0, iy + 0.5 - 48.0) < 1.8
        # without the warp the apex would sit at the source center, 3 px off
        direct = fill_interior(composite, source, dst_mask)
        vals_d = np.where(interior, direct[..., 0], np.inf)
        iy2, ix2 = np.unravel_index(np.argmin(vals_d), vals_d.shape)
        assert np.hypot(ix2 + 0.5 - 46.0, iy2 + 0.5 - 48.0) < 1.8

    def test_mouth_template_same_contract(self):
        from caricature_forge.pipeline import mouth_template

        h = w = 64
        rng = np.random.default_rng(3)
        composite = ndi.gaussian_filter(rng.uniform(0.3, 0.8, (h, w, 3)), (2, 2, 0))
        mouth = disk_mask(h, w, 40, 32, 8)
        timg = mouth_template("grin", (h, w), mouth)
        out = fill_interior(composite, timg, mouth)
        assert out.shape == composite.shape
        assert not np.allclose(out[mouth], composite[mouth])
        outside = ~ndi.binary_dilation(mouth)
        assert np.array_equal(out[outside], composite[outside])


class TestLighting:
    def _sphere_render(self, light, albedo=0.5, size=64):
        n = uniform_sphere_normals(size * size).reshape(size, size, 3)
        shading = sh_basis(n) @ light.coeffs
        img = albedo * shading
        mask = np.ones((size, size), dtype=bool)
        render = RenderOutput(
            np.repeat(img[..., None], 3, axis=2), mask, n, n,
            np.ones((size, size)), np.zeros((size, size)),
        )
        return img, render, mask

    def test_recovers_forward_synthesized_light(self):
        rng = np.random.default_rng(5)
        for _ in range(3):
            c = np.zeros(9)
            c[0] = rng.uniform(2.2, 3.0)
            c[1:4] = rng.uniform(-0.4, 0.4, 3)
            c[4:] = rng.uniform(-0.15, 0.15, 5)
            light = SHLighting(c)
            img, render, mask = self._sphere_render(light)
            got = estimate_lighting(img, render, mask)
            gauge = img.mean() / 0.5  # fix the a*L scale at true a-mean 0.5
            rel = np.linalg.norm(got.coeffs * gauge - c) / np.linalg.norm(c)
            assert rel < 0.05

    def test_constant_normals_only_dc(self):
        h = 40
        n = np.zeros((h, h, 3))
        n[..., 2] = -1.0
        light = SHLighting(np.array([2.5, 0.3, -0.2, 0.1, 0, 0, 0, 0, 0]))
        shading = sh_basis(n) @ light.coeffs
        img = 0.5 * shading
        render = RenderOutput(
            np.repeat(img[..., None], 3, axis=2),
            np.ones((h, h), dtype=bool),
            n,
            n,
            np.ones((h, h)),
            np.zeros((h, h)),
        )
        got = estimate_lighting(img, render, np.ones((h, h), dtype=bool))
        # the observable combination a*L is reproduced (a-gauge = mean intensity)
        resid = img - img.mean() * (sh_basis(n) @ got.coeffs)
        assert np.abs(resid).max() < 1e-3
        # unobservable modes are driven to zero by the prior
        assert np.abs(got.coeffs[1:]).max() < 1e-6 * np.abs(got.coeffs[0])

    def test_objective_non_increasing(self):
        light = SHLighting(np.array([2.6, 0.2, -0.3, 0.15, 0.05, 0, -0.05, 0.02, 0.01]))
        img, render, mask = self._sphere_render(light)
        history = []
        estimate_lighting(img, render, mask, objective_history=history)
        assert len(history) >= 2
        assert all(b <= a + 1e-9 * max(abs(a), 1) for a, b in zip(history, history[1:]))

    def test_small_region_rejected(self):
        img = np.zeros((10, 10))
        n = np.zeros((10, 10, 3))
        n[..., 2] = -1
        render = RenderOutput(
            np.zeros((10, 10, 3)), np.ones((10, 10), dtype=bool), n, n,
            np.ones((10, 10)), np.zeros((10, 10)),
        )
        with pytest.raises(InsufficientRegionError):
            estimate_lighting(img, render, np.ones((10, 10), dtype=bool))


class TestAlpha:
    def _render_with_normals(self, nb, na, mask):
        h, w = mask.shape
        return RenderOutput(np.zeros((h, w, 3)), mask, nb, na, np.ones((h, w)), np.zeros((h, w)))

    def test_unchanged_normals_give_unit_alpha(self):
        h = w = 64
        mask = disk_mask(h, w, 32, 32, 24)
        n = np.zeros((h, w, 3))
        n[..., 2] = -1.0
        light = SHLighting(np.array([2.5, 0.2, -0.4, 0.1, 0, 0, 0, 0, 0]))
        alpha = build_alpha(light, self._render_with_normals(n, n, mask))
        assert np.all(alpha.values == 1.0)

    def test_boundary_exactly_one(self):
        h = w = 64
        mask = disk_mask(h, w, 32, 32, 24)
        rng = np.random.default_rng(0)
        nb = np.zeros((h, w, 3))
        nb[..., 2] = -1.0
        tilt = ndi.gaussian_filter(rng.normal(0, 0.4, (h, w)), 4)
        na = nb.copy()
        na[..., 0] = tilt
        na /= np.linalg.norm(na, axis=2, keepdims=True)
        light = SHLighting(np.array([2.5, 0.2, -0.4, 0.3, 0, 0, 0, 0, 0]))
        alpha = build_alpha(light, self._render_with_normals(nb, na, mask))
        boundary = mask & ~ndi.binary_erosion(mask, iterations=4)
        assert np.all(alpha.values[boundary] == 1.0)
        assert np.all(alpha.values[~mask] == 1.0)
        interior = ndi.binary_erosion(mask, iterations=8)
        assert np.abs(alpha.values[interior] - 1.0).max() > 1e-3

    def test_clamped_to_bounds(self):
        h = w = 48
        mask = disk_mask(h, w, 24, 24, 18)
        nb = np.zeros((h, w, 3))
        nb[..., 2] = -1.0
        na = np.zeros((h, w, 3))
        na[..., 1] = 1.0  # drastically different shading
        light = SHLighting(np.array([0.5, 0.0, -0.9, 0, 0, 0, 0, 0, 0]))
        alpha = build_alpha(light, self._render_with_normals(nb, na, mask), downsample=1)
        assert alpha.values.min() >= 0.3
        assert alpha.values.max() <= 3.0


class TestReshade:
    def test_identity(self):
        img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
        alpha = AlphaMap(np.ones((16, 16)), np.ones((16, 16), dtype=bool))
        assert np.array_equal(reshade(img, alpha), img)

    def test_doubling_midgray(self):
        img = np.full((8, 8, 3), 0.25)
        alpha = AlphaMap(np.full((8, 8), 2.0), np.ones((8, 8), dtype=bool))
        assert np.allclose(reshade(img, alpha), 0.5)

    def test_chromaticity_preserved(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0.1, 0.4, (16, 16, 3))
        alpha = AlphaMap(rng.uniform(0.5, 2.0, (16, 16)), np.ones((16, 16), dtype=bool))
        out = reshade(img, alpha)
        unclipped = out.max(axis=2) < 1.0
        ratio_in = img[..., 0] / img[..., 1]
        ratio_out = np.where(out[..., 1] > 0, out[..., 0] / out[..., 1], 0)
        assert np.allclose(ratio_out[unclipped], ratio_in[unclipped], rtol=1e-9)


class TestEarEdit:
    def _curve(self):
        t = np.linspace(0, 1, 24)
        x = 60 + 8 * np.sin(np.pi * t)
        y = 40 + 40 * t
        return np.column_stack([x, y])

    def test_identity_redraw(self):
        img = np.random.default_rng(0).uniform(0, 1, (128, 128, 3))
        c = self._curve()
        out = ear_edit(img, c, c, cell=16)
        assert np.abs(out - img).max() < 1e-9

    def test_shift_moves_curve_pixels(self):
        rng = np.random.default_rng(1)
        img = ndi.gaussian_filter(rng.uniform(0, 1, (128, 128, 3)), (3, 3, 0))
        c = self._curve()
        mid = c[len(c) // 2]
        img[int(mid[1]), int(mid[0])] = [1, 0, 0]
        img[int(mid[1]) - 1 : int(mid[1]) + 2, int(mid[0]) - 1 : int(mid[0]) + 2] = [1, 0, 0]
        out = ear_edit(img, c, c + np.array([5.0, 0.0]), cell=8)
        red = out[..., 0] - 0.5 * (out[..., 1] + out[..., 2])
        yy, xx = np.unravel_index(np.argmax(red), red.shape)
        assert abs((xx + 0.5) - (mid[0] + 5.0)) <= 1.5
        assert abs((yy + 0.5) - mid[1]) <= 1.5

    def test_far_pixels_untouched(self):
        img = np.random.default_rng(2).uniform(0, 1, (160, 160, 3))
        c = self._curve()
        out = ear_edit(img, c, c + np.array([4.0, 2.0]), cell=16)
        assert np.array_equal(out[150:, 150:], img[150:, 150:])

    def test_wildly_different_lengths_rejected(self):
        c = self._curve()
        with pytest.raises(ValueError):
            ear_edit(np.zeros((64, 64, 3)), c, c[:2] * 0.1)


def test_to_gray_luminance():
    img = np.zeros((4, 4, 3))
    img[..., 1] = 1.0
    assert np.allclose(to_gray(img), 0.7152)


class TestAlphaHomotopy:
    def test_mean_alpha_approaches_one_as_deformation_vanishes(self):
        from caricature_forge.field import synth_exaggeration
        from caricature_forge.mesh import LambdaField, exaggerate, prefactor
        from caricature_forge.render import render_textured
        from caricature_forge.synthetic import default_lighting, fit_camera, make_face, make_photo

        mesh = make_face()
        cam = fit_camera(mesh, (256, 256))
        photo, _ = make_photo(mesh, cam, seed=3)
        ctx = prefactor(mesh)
        lam = synth_exaggeration(mesh, seed=6)
        light = default_lighting(0)
        gaps = []
        for t in (0.0, 0.25, 0.5, 1.0):
            vals = 1.0 + t * (lam.values - 1.0)
            ex = exaggerate(mesh, LambdaField(vals, mesh.topology_id), ctx)
            render = render_textured(mesh, ex, cam, photo)
            alpha = build_alpha(light, render)
            gaps.append(abs(float(alpha.values[render.mask].mean()) - 1.0))
        assert gaps[0] < 1e-6  # identity deformation (up to solver epsilon)
        assert gaps[0] <= gaps[1] + 1e-9
        assert gaps[1] <= gaps[2] + 2e-3
        assert gaps[2] <= gaps[3] + 2e-3
