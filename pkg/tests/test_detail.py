"""detail-enhance: patch planning, feathered residual merging, the baseline
enhancer, the seam metric, and training-pair generation."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from caricature_forge.detail import (
    baseline_residual,
    enhance,
    expected_pair_count,
    laplacian_energy,
    make_baseline_enhancer,
    make_direct_color_baseline,
    make_training_pairs,
    merge_direct_colors,
    plan_patches,
    seam_discontinuity,
)
from caricature_forge.errors import ContractViolationError


class TestPlanPatches:
    def test_single_patch_for_exact_size(self):
        plan = plan_patches(np.ones((256, 256), dtype=bool))
        assert plan.origins.shape == (1, 2)
        assert tuple(plan.origins[0]) == (0, 0)

    def test_two_patches_448_wide(self):
        plan = plan_patches(np.ones((256, 448), dtype=bool), size=256, stride=192)
        assert sorted(o[1] for o in plan.origins) == [0, 192]
        assert {o[0] for o in plan.origins} == {0}

    def test_random_masks_fully_covered(self):
        rng = np.random.default_rng(0)
        for _ in range(6):
            h = int(rng.integers(256, 500))
            w = int(rng.integers(256, 500))
            mask = np.zeros((h, w), dtype=bool)
            cy, cx = rng.integers(0, h), rng.integers(0, w)
            ry, rx = int(rng.integers(10, h // 2)), int(rng.integers(10, w // 2))
            yy, xx = np.mgrid[0:h, 0:w]
            mask |= ((yy - cy) / max(ry, 1)) ** 2 + ((xx - cx) / max(rx, 1)) ** 2 <= 1
            if not mask.any():
                continue
            plan = plan_patches(mask)
            covered = np.zeros((h, w), dtype=bool)
            for y, x in plan.origins:
                covered[y : y + 256, x : x + 256] = True
            assert covered[mask].all()

    def test_image_smaller_than_patch_rejected(self):
        with pytest.raises(ValueError):
            plan_patches(np.ones((100, 300), dtype=bool))

    def test_empty_mask_empty_plan(self):
        plan = plan_patches(np.zeros((300, 300), dtype=bool))
        assert plan.origins.shape[0] == 0


class TestEnhanceMerge:
    def test_zero_enhancer_bit_exact(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (300, 400, 3))
        plan = plan_patches(np.ones((300, 400), dtype=bool))
        out = enhance(img, plan, lambda p, o: np.zeros_like(p))
        assert np.array_equal(out, img)

    def test_constant_residual_proves_unit_weights(self):
        # a tiny uniform residual passes the contract; if feather weights sum
        # to exactly 1 everywhere, the merged output shifts by exactly c
        rng = np.random.default_rng(2)
        img = rng.uniform(0.2, 0.7, (300, 440, 3))
        plan = plan_patches(np.ones((300, 440), dtype=bool))
        c = 0.015
        out = enhance(img, plan, lambda p, o: np.full_like(p, c))
        covered = np.zeros((300, 440), dtype=bool)
        for y, x in plan.origins:
            covered[y : y + 256, x : x + 256] = True
        assert np.allclose(out[covered] - img[covered], c, atol=1e-12)

    def test_single_cover_passes_residual_through(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0.3, 0.6, (256, 256, 3))
        plan = plan_patches(np.ones((256, 256), dtype=bool))
        residual = 0.01 * np.sin(np.arange(256 * 256 * 3)).reshape(256, 256, 3)
        residual -= residual.mean(axis=(0, 1))
        out = enhance(img, plan, lambda p, o: residual)
        assert np.allclose(out, np.clip(img + residual, 0, 1), atol=1e-12)

    def test_nan_residual_names_patch(self):
        img = np.zeros((256, 448, 3))
        plan = plan_patches(np.ones((256, 448), dtype=bool))

        def bad(p, o):
            r = np.zeros_like(p)
            if o[1] == 192:
                r[0, 0, 0] = np.nan
            return r

        with pytest.raises(ContractViolationError, match="192"):
            enhance(img, plan, bad)

    def test_mean_offset_rejected(self):
        img = np.zeros((256, 256, 3))
        plan = plan_patches(np.ones((256, 256), dtype=bool))
        with pytest.raises(ContractViolationError, match="mean"):
            enhance(img, plan, lambda p, o: np.full_like(p, 0.05))


class TestBaselineEnhancer:
    def test_zero_where_not_stretched(self):
        rng = np.random.default_rng(4)
        patch = rng.uniform(0, 1, (64, 64, 3))
        residual = baseline_residual(patch, np.full((64, 64), 0.8))
        assert np.array_equal(residual, np.zeros_like(patch))

    def test_flat_patch_no_residual(self):
        patch = np.full((64, 64, 3), 0.5)
        residual = baseline_residual(patch, np.full((64, 64), 2.5))
        assert np.abs(residual).max() < 1e-12

    def test_sharpens_blurry_content_under_stretch(self):
        rng = np.random.default_rng(5)
        sharp = rng.uniform(0, 1, (96, 96, 3))
        blurry = np.stack([gaussian_filter(sharp[..., c], 2.0) for c in range(3)], -1)
        stretch = np.full((96, 96), 2.0)
        residual = baseline_residual(blurry, stretch)
        enhanced = np.clip(blurry + residual, 0, 1)
        assert laplacian_energy(enhanced) > 1.2 * laplacian_energy(blurry)

    def test_zero_mean_on_support(self):
        rng = np.random.default_rng(6)
        patch = rng.uniform(0, 1, (64, 64, 3))
        stretch = np.full((64, 64), 1.0)
        stretch[20:50, 10:40] = 3.0
        residual = baseline_residual(patch, stretch)
        sup = stretch > 1.0
        for c in range(3):
            assert abs(residual[..., c][sup].mean()) < 1e-12
        assert np.abs(residual[~sup]).max() == 0.0


class TestSeamProperty:
    def test_residual_merge_is_seam_free_and_direct_colors_are_not(self, scene):
        pairs = make_training_pairs(
            scene["photo"], scene["mesh"], scene["camera"], levels=3, seed=1
        )
        assert pairs
        direct_failures = 0
        for pair in pairs:
            blurry, stretch = pair["blurry"], pair["stretch_map"]
            plan = plan_patches(pair["mask"])
            assert plan.origins.shape[0] >= 2  # must actually tile

            enhanced = enhance(blurry, plan, make_baseline_enhancer(stretch))
            full = np.clip(blurry + baseline_residual(blurry, stretch), 0, 1)
            m = seam_discontinuity(enhanced, full, plan)
            assert m["boundary_max"] <= 0.05 * m["interior_p95"]

            color_fn = make_direct_color_baseline(stretch)
            direct = merge_direct_colors(blurry, plan, color_fn)
            full_direct = np.clip(color_fn(blurry, (0, 0)), 0, 1)
            md = seam_discontinuity(direct, full_direct, plan)
            if md["boundary_max"] > 0.05 * md["interior_p95"]:
                direct_failures += 1
        assert direct_failures >= (len(pairs) + 1) // 2


class TestTrainingPairs:
    def test_counting_identity(self):
        assert expected_pair_count(899, 10) == 8990
        assert expected_pair_count(3, 4) == 12

    def test_pairs_generated_and_sharper(self, scene):
        pairs = make_training_pairs(
            scene["photo"], scene["mesh"], scene["camera"], levels=3, seed=1
        )
        assert len(pairs) >= 2
        for pair in pairs:
            assert pair["stretch"] > 1.0
            assert len(pair["crops"]) == 10
            if pair["stretch"] > 1.3:
                m = pair["mask"]
                # compare sharpness where the face is rendered
                ys, xs = np.nonzero(m)
                y0, y1 = ys.min(), ys.max()
                x0, x1 = xs.min(), xs.max()
                e_s = laplacian_energy(pair["sharp"][y0:y1, x0:x1])
                e_b = laplacian_energy(pair["blurry"][y0:y1, x0:x1])
                assert e_s > e_b

    def test_deterministic(self, scene):
        a = make_training_pairs(scene["photo"], scene["mesh"], scene["camera"], levels=2, seed=3)
        b = make_training_pairs(scene["photo"], scene["mesh"], scene["camera"], levels=2, seed=3)
        assert len(a) == len(b)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa["blurry"], pb["blurry"])
            assert pa["crops"] == pb["crops"]
