"""HTTP plug-in contract: lambda-map predictor and residual enhancer share the
raster container wire format."""

import numpy as np
import pytest

from caricature_forge.detail import enhance, external_enhancer, plan_patches
from caricature_forge.errors import ContractViolationError
from caricature_forge.field import run_external_predictor
from caricature_forge.mesh import compute_laplacians
from caricature_forge.param import (
    build_chart,
    build_flattened_maps,
    container_bytes,
    container_from_bytes,
)
from caricature_forge.sketch import correspondence_displacements, project_curves


class _Resp:
    def __init__(self, content):
        self.content = content

    def raise_for_status(self):
        pass


def test_http_predictor_round_trip(face, camera, monkeypatch):
    chart = build_chart(face)
    base = project_curves(face, camera)
    edited = base.copy()
    edited.curves["mouth"] = edited.curves["mouth"] + np.array([2.0, 1.0])
    disp = correspondence_displacements(base, edited)
    maps = build_flattened_maps(chart, face, compute_laplacians(face), disp, camera)

    seen = {}

    def fake_post(url, content=None, headers=None, timeout=None):
        data, mask = container_from_bytes(content)
        seen["url"] = url
        seen["channels"] = data.shape[2]
        lam_map = np.full((chart.resolution, chart.resolution), 1.25, dtype=np.float32)
        return _Resp(container_bytes(lam_map, mask))

    import httpx

    monkeypatch.setattr(httpx, "post", fake_post)
    lam = run_external_predictor(maps, "http://predictor.local/lambda", chart, face)
    assert seen["url"] == "http://predictor.local/lambda"
    assert seen["channels"] == 7  # L_d(3) + L_m + S_d(2) + S_m
    assert np.allclose(lam.values, 1.25)


def test_http_enhancer_round_trip(monkeypatch):
    rng = np.random.default_rng(0)
    img = rng.uniform(0.2, 0.8, (256, 256, 3))
    stretch = np.full((256, 256), 2.0)

    def fake_post(url, content=None, headers=None, timeout=None):
        data, mask = container_from_bytes(content)
        assert data.shape[2] == 4  # RGB + stretch channel
        residual = np.zeros(data.shape[:2] + (3,), dtype=np.float32)
        residual[:, :, 0] = 0.01 * np.sin(np.arange(data.shape[1]) / 3.0)
        residual[:, :, 0] -= residual[:, :, 0].mean()
        return _Resp(container_bytes(residual, mask))

    import httpx

    monkeypatch.setattr(httpx, "post", fake_post)
    plan = plan_patches(np.ones((256, 256), dtype=bool))
    out = enhance(img, plan, external_enhancer("http://enh.local", stretch))
    assert not np.array_equal(out, img)
    assert np.abs(out - img).max() < 0.02


def test_http_enhancer_bad_shape_rejected(monkeypatch):
    def fake_post(url, content=None, headers=None, timeout=None):
        return _Resp(container_bytes(np.zeros((8, 8, 3), dtype=np.float32),
                                     np.ones((8, 8), dtype=np.uint8)))

    import httpx

    monkeypatch.setattr(httpx, "post", fake_post)
    fn = external_enhancer("http://enh.local", np.ones((256, 256)))
    with pytest.raises(ContractViolationError):
        fn(np.zeros((256, 256, 3)), (0, 0))
