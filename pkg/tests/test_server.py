"""HTTP API surface consumed by the sketch UI."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from caricature_forge.server import create_app


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    root = tmp_path_factory.mktemp("sessions")
    app = create_app(root)
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def sid(client):
    resp = client.post("/sessions", json={"synthetic": {"seed": 0, "size": 384}})
    assert resp.status_code == 200
    return resp.json()["id"]


def _mouth_edit(client, sid, amplitude=7.0):
    sketch = client.get(f"/sessions/{sid}/sketch", params={"view": "frontal"}).json()
    mouth = next(c for c in sketch["curves"] if c["name"] == "mouth")
    pts = np.asarray(mouth["points"])
    from caricature_forge.sketch import eval_polyline

    t = np.linspace(0, 1, 20)
    rep = eval_polyline(pts, 0.25 + 0.5 * t)
    rep = rep + np.array([0.0, amplitude]) * (np.sin(np.pi * t) ** 2)[:, None]
    return {
        "view": "frontal",
        "curve": "mouth",
        "s0": 0.25,
        "s1": 0.75,
        "replacement": rep.tolist(),
    }


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_unknown_session_404(client):
    assert client.get("/sessions/nope/sketch").status_code == 404


def test_sketch_views(client, sid):
    for view in ("frontal", "side"):
        sk = client.get(f"/sessions/{sid}/sketch", params={"view": view}).json()
        assert sk["view"] == view
        names = {c["name"] for c in sk["curves"]}
        assert "silhouette" in names and "mouth" in names
    assert client.get(f"/sessions/{sid}/sketch", params={"view": "top"}).status_code == 422


def test_edit_cycle_roundtrip(client, sid):
    body = _mouth_edit(client, sid)
    resp = client.post(f"/sessions/{sid}/edits", json=body)
    assert resp.status_code == 200
    preview = resp.json()
    assert preview["station_error"] < 1.0
    assert preview["lambda_max"] > 1.0
    # displayed sketch reflects the exaggerated model now
    sk = client.get(f"/sessions/{sid}/sketch").json()
    assert sk["curves"]


def test_unsnappable_edit_rejected_and_state_kept(client, sid):
    state_before = client.get(f"/sessions/{sid}/state").json()
    bad = {
        "view": "frontal",
        "curve": "mouth",
        "s0": 0.3,
        "s1": 0.7,
        "replacement": [[0.0, 0.0], [5.0, 5.0]],
    }
    resp = client.post(f"/sessions/{sid}/edits", json=bad)
    assert resp.status_code == 422
    assert "stage" in resp.json()
    assert client.get(f"/sessions/{sid}/state").json() == state_before


def test_invalid_interval_rejected(client, sid):
    bad = {
        "view": "frontal",
        "curve": "mouth",
        "s0": 0.9,
        "s1": 0.2,
        "replacement": [[0.0, 0.0], [5.0, 5.0]],
    }
    assert client.post(f"/sessions/{sid}/edits", json=bad).status_code == 422


def test_synthesize_and_result(client, sid):
    resp = client.post(f"/sessions/{sid}/synthesize", json={"dump_stages": False})
    assert resp.status_code == 200
    assert resp.json()["counters"]["result"] >= 1
    img = client.get(f"/sessions/{sid}/result")
    assert img.status_code == 200
    assert img.headers["content-type"] == "image/png"
    assert img.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_photo_served(client, sid):
    img = client.get(f"/sessions/{sid}/photo")
    assert img.status_code == 200
    assert img.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_mouth_fill_endpoint(client, sid):
    resp = client.post(f"/sessions/{sid}/mouth-fill", json={"template": "grin"})
    assert resp.status_code == 200
    assert client.post(f"/sessions/{sid}/mouth-fill", json={"template": "x"}).status_code == 422


def test_ear_edit_endpoint(client, sid):
    sk = client.get(f"/sessions/{sid}/sketch").json()
    ear = next(c for c in sk["curves"] if c["name"] == "left_ear")
    pts = np.asarray(ear["points"])
    moved = pts + np.array([3.0, 0.0])
    resp = client.post(
        f"/sessions/{sid}/ear-edit",
        json={"boundary": pts.tolist(), "redrawn": moved.tolist()},
    )
    assert resp.status_code == 200
    bad = client.post(
        f"/sessions/{sid}/ear-edit",
        json={"boundary": pts.tolist(), "redrawn": (pts[:2] * 0.01).tolist()},
    )
    assert bad.status_code == 422


def test_state_digest_is_deterministic(client, sid):
    a = client.get(f"/sessions/{sid}/state").json()
    b = client.get(f"/sessions/{sid}/state").json()
    assert a == b
    assert set(a["sketches"].keys()) == {"frontal", "side"}
