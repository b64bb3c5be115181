import json
import socket
import threading
import time
import urllib.error
import urllib.request

import pytest
from fastapi.testclient import TestClient

from needlesim.service import create_app

from test_scene import _registration_command


@pytest.fixture(scope="module")
def client(data_root, warmed):
    return TestClient(create_app(data_root))


@pytest.fixture(scope="module")
def asset_paths(data_root):
    return {
        "volume": data_root / "volumes" / "head.nrrd",
        "model": data_root / "models" / "head" / "model.json",
        "landmarks": data_root / "volumes" / "head.landmarks.json",
    }


def _new_session(client, with_model=True):
    body = {"volume": "volumes/head.nrrd"}
    if with_model:
        body["model"] = "models/head/model.json"
    r = client.post("/sessions", json=body)
    assert r.status_code == 200
    return r.json()["id"]


# ---------------------------------------------------------------------------
# Discovery

def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_catalog_lists_assets(client):
    r = client.get("/volumes")
    assert r.status_code == 200
    body = r.json()
    assert {"name": "volumes/head.nrrd",
            "landmarks": "volumes/head.landmarks.json"} in body["volumes"]
    assert {"name": "models/head/model.json"} in body["models"]


# ---------------------------------------------------------------------------
# Session creation and lookup

def test_create_session_validation(client):
    r = client.post("/sessions", json={})
    assert r.status_code == 400
    assert r.json()["code"] == "bad_request"
    r = client.post("/sessions", json={"volume": "volumes/ghost.nrrd"})
    assert r.status_code == 404
    assert r.json()["code"] == "not_found"
    r = client.post("/sessions", json={"volume": "../../etc/passwd"})
    assert r.status_code == 400


def test_create_and_fetch_session(client):
    sid = _new_session(client)
    r = client.get(f"/sessions/{sid}")
    assert r.status_code == 200
    d = r.json()
    assert d["id"] == sid and d["revision"] == 0
    assert d["schema_version"] == 1


def test_unknown_session_is_404(client):
    for call in (
        lambda: client.get("/sessions/nope"),
        lambda: client.get("/sessions/nope/frame"),
        lambda: client.post("/sessions/nope/commands",
                            json={"type": "SetLayout", "mode": "overlapping"}),
    ):
        r = call()
        assert r.status_code == 404
        assert r.json() == {"code": "not_found", "message": "no session 'nope'"}


# ---------------------------------------------------------------------------
# Commands

def test_command_mutates_and_returns_revision(client):
    sid = _new_session(client)
    r = client.post(f"/sessions/{sid}/commands",
                    json={"type": "SetLayout", "mode": "side_by_side"})
    assert r.status_code == 200
    body = r.json()
    assert body["revision"] == 1
    assert body["session"]["layout"]["mode"] == "side_by_side"


def test_command_revision_conflict(client):
    sid = _new_session(client)
    cmd = {"type": "SetLayout", "mode": "side_by_side"}
    ok = client.post(f"/sessions/{sid}/commands", json=cmd,
                     headers={"X-Expected-Revision": "0"})
    assert ok.status_code == 200
    stale = client.post(f"/sessions/{sid}/commands", json=cmd,
                        headers={"X-Expected-Revision": "0"})
    assert stale.status_code == 409
    body = stale.json()
    assert body["code"] == "conflict"
    assert "expected revision 0" in body["message"]
    bad = client.post(f"/sessions/{sid}/commands", json=cmd,
                      headers={"X-Expected-Revision": "soon"})
    assert bad.status_code == 400


def test_invalid_command_is_bad_request(client):
    sid = _new_session(client)
    r = client.post(f"/sessions/{sid}/commands", json={"type": "Explode"})
    assert r.status_code == 400
    r = client.post(f"/sessions/{sid}/commands",
                    json={"type": "RemoveNeedle", "id": "ghost"})
    assert r.status_code == 404


# ---------------------------------------------------------------------------
# Frames and slices

def test_frame_deterministic_and_revision_header(client):
    sid = _new_session(client)
    a = client.get(f"/sessions/{sid}/frame", params={"w": 64, "h": 64})
    b = client.get(f"/sessions/{sid}/frame", params={"w": 64, "h": 64})
    assert a.status_code == 200
    assert a.headers["content-type"] == "image/png"
    assert a.headers["x-revision"] == "0"
    assert a.content == b.content
    assert a.content.startswith(b"\x89PNG")


def test_frame_changes_after_tf_edit(client):
    sid = _new_session(client)
    before = client.get(f"/sessions/{sid}/frame", params={"w": 64, "h": 64})
    tf = client.get(f"/sessions/{sid}").json()["tf"]
    tf["contrast"]["brightness"] = 0.25
    r = client.post(f"/sessions/{sid}/commands", json={"type": "SetTF", "tf": tf})
    assert r.status_code == 200
    after = client.get(f"/sessions/{sid}/frame", params={"w": 64, "h": 64})
    assert after.headers["x-revision"] == "1"
    assert after.content != before.content


def test_frame_rejects_zero_width(client):
    sid = _new_session(client)
    r = client.get(f"/sessions/{sid}/frame", params={"w": 0})
    assert r.status_code == 400
    assert r.json()["code"] == "bad_request"


def test_slice_endpoint(client):
    sid = _new_session(client)
    client.post(f"/sessions/{sid}/commands", json={
        "type": "AddPlane",
        "plane": {"id": "v", "kind": "view", "p": [-36.75, -36.75, -36.75],
                  "n": [0, 0, 1], "extent": [120, 120], "resolution": [64, 64]}})
    client.post(f"/sessions/{sid}/commands", json={
        "type": "AddPlane",
        "plane": {"id": "c", "kind": "cutout", "p": [0, 0, 0], "n": [1, 0, 0]}})
    r = client.get(f"/sessions/{sid}/planes/v/slice",
                   params={"w": 32, "h": 32, "needles": "1"})
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    assert r.status_code == 200
    r = client.get(f"/sessions/{sid}/planes/c/slice")
    assert r.status_code == 400
    r = client.get(f"/sessions/{sid}/planes/ghost/slice")
    assert r.status_code == 404


# ---------------------------------------------------------------------------
# Histogram, scoring, picking

def test_histogram(client, head48):
    sid = _new_session(client, with_model=False)
    r = client.get(f"/sessions/{sid}/histogram", params={"bins": 8})
    assert r.status_code == 200
    body = r.json()
    assert body["bin_count"] == 8 and len(body["counts"]) == 8
    assert sum(body["counts"]) == 48 ** 3
    assert client.get(f"/sessions/{sid}/histogram",
                      params={"bins": 1}).status_code == 400


def test_score_over_http(client, asset_paths):
    sid = _new_session(client)
    r = client.post(f"/sessions/{sid}/commands",
                    json=_registration_command(asset_paths))
    assert r.status_code == 200
    client.post(f"/sessions/{sid}/commands", json={
        "type": "AddNeedle",
        "needle": {"id": "n1", "length_mm": 40.0, "base": [0, 0, 200],
                   "dir": [0, 0, -1], "depth_mm": 0.0}})
    # read the acupoint's posed position from a scoring probe, then hit it
    probe = client.get(f"/sessions/{sid}/score",
                       params={"needle": "n1", "acupoint": "crown"})
    assert probe.status_code == 200
    assert probe.json()["hit"] is False
    report = probe.json()
    assert set(report) >= {"needle_id", "acupoint", "tip_distance_mm", "hit",
                           "depth_violation", "forbidden_contacts", "crossings"}
    r = client.get(f"/sessions/{sid}/score",
                   params={"needle": "ghost", "acupoint": "crown"})
    assert r.status_code == 404
    r = client.get(f"/sessions/{sid}/score",
                   params={"needle": "n1", "acupoint": "nowhere"})
    assert r.status_code == 404


def test_pick_surface_over_http(client):
    sid = _new_session(client)
    r = client.post(f"/sessions/{sid}/pick", json={"x": 256, "y": 256})
    assert r.status_code == 200
    body = r.json()
    assert body["hit"] is True
    assert len(body["point"]) == 3 and len(body["direction"]) == 3
    r = client.post(f"/sessions/{sid}/pick", json={"x": "left"})
    assert r.status_code == 400


# ---------------------------------------------------------------------------
# Live instance over a real socket

def start_live_server(data_root):
    """Serve on an OS-assigned localhost port; returns (base_url, stop)."""
    import uvicorn

    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    config = uvicorn.Config(create_app(data_root), host="127.0.0.1", port=port,
                            log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15.0
    while not server.started:
        if time.monotonic() > deadline or not thread.is_alive():
            raise RuntimeError("service did not start")
        time.sleep(0.02)

    def stop():
        server.should_exit = True
        thread.join(timeout=10.0)

    return f"http://127.0.0.1:{port}", stop


def http_get(url):
    try:
        with urllib.request.urlopen(url) as r:
            return r.status, dict(r.headers), r.read()
    except urllib.error.HTTPError as e:
        return e.code, dict(e.headers), e.read()


def http_post_json(url, payload, headers=None):
    req = urllib.request.Request(
        url, data=json.dumps(payload).encode(), method="POST",
        headers={"Content-Type": "application/json", **(headers or {})})
    try:
        with urllib.request.urlopen(req) as r:
            return r.status, dict(r.headers), r.read()
    except urllib.error.HTTPError as e:
        return e.code, dict(e.headers), e.read()


@pytest.fixture(scope="module")
def live(data_root, warmed):
    base, stop = start_live_server(data_root)
    yield base
    stop()


def test_live_instance_round_trip(live):
    status, _, body = http_get(f"{live}/health")
    assert status == 200 and json.loads(body) == {"status": "ok"}

    status, _, body = http_get(f"{live}/sessions/nope")
    assert status == 404 and json.loads(body)["code"] == "not_found"

    status, _, body = http_post_json(f"{live}/sessions",
                                     {"volume": "volumes/head.nrrd"})
    assert status == 200
    sid = json.loads(body)["id"]

    status, headers, first = http_get(f"{live}/sessions/{sid}/frame?w=48&h=48")
    assert status == 200 and headers["content-type"] == "image/png"
    status, _, second = http_get(f"{live}/sessions/{sid}/frame?w=48&h=48")
    assert first == second
