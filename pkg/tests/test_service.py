import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from promptseg.backends import SyntheticDualEncoder
from promptseg.service import create_app, encode_mask_png, load_config


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(load_config(None)))


@pytest.fixture(scope="module")
def disk_png():
    backend = SyntheticDualEncoder()
    img = backend.render_concept("disk")
    buf = io.BytesIO()
    Image.fromarray((img * 255).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def b64(raw):
    return base64.b64encode(raw).decode()


def test_health(client):
    resp = client.get("/api/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert "synthetic" in body["backends"]


def test_backends_endpoint(client):
    body = client.get("/api/backends").json()
    assert body["dual_encoder"]["name"] == "synthetic"
    assert body["dual_encoder"]["input_size"] == [64, 64]
    assert body["dual_encoder"]["capabilities"]["activations_exposed"]
    assert body["segmenter"]["deterministic"]


def test_segment_response_invariants(client, disk_png):
    resp = client.post(
        "/api/segment",
        json={"image_b64": b64(disk_png), "prompt": "disk", "params": {"top_k": 4}},
    )
    assert resp.status_code == 200
    body = resp.json()
    mask = np.asarray(Image.open(io.BytesIO(base64.b64decode(body["mask_png_b64"])))) > 127
    assert mask.shape == (64, 64)
    assert mask.any()
    saliency = np.load(io.BytesIO(base64.b64decode(body["saliency_npy_b64"])))
    assert saliency.shape == (64, 64)
    assert 0 <= saliency.min() and saliency.max() <= 1
    assert body["boxes"]
    for xmin, ymin, xmax, ymax in body["boxes"]:
        assert 0 <= xmin <= xmax < 64 and 0 <= ymin <= ymax < 64
    assert body["provenance"]["prompt"] == "disk"
    assert body["timings"]["pipeline_s"] >= 0


def test_segment_with_gt_returns_metrics(client, disk_png):
    backend = SyntheticDualEncoder()
    gt = backend.concept_region("disk")
    resp = client.post(
        "/api/segment",
        json={
            "image_b64": b64(disk_png),
            "prompt": "disk",
            "gt_b64": b64(encode_mask_png(gt)),
            "params": {"top_k": 4},
        },
    )
    metrics = resp.json()["metrics"]
    assert metrics["iou"] >= 0.7
    assert metrics["dsc"] >= metrics["iou"]
    assert 0 <= metrics["auc"] <= 1


def test_empty_prompt_is_client_error(client, disk_png):
    resp = client.post("/api/segment", json={"image_b64": b64(disk_png), "prompt": "   "})
    assert resp.status_code == 400
    assert resp.json()["error"] == "EmptyPrompt"


def test_bad_image_payload_is_client_error(client):
    resp = client.post(
        "/api/segment", json={"image_b64": b64(b"not a png"), "prompt": "disk"}
    )
    assert resp.status_code == 400
    assert resp.json()["error"] == "DecodeError"


def test_service_is_stateless(client, disk_png):
    req = {"image_b64": b64(disk_png), "prompt": "disk", "params": {"top_k": 4}}
    first = client.post("/api/segment", json=req).json()
    # interleave an unrelated request, then repeat the original
    client.post("/api/segment", json={"image_b64": b64(disk_png), "prompt": "square"})
    second = client.post("/api/segment", json=req).json()
    second["timings"] = first["timings"]
    assert first == second


def test_saliency_endpoint(client, disk_png):
    resp = client.post(
        "/api/saliency",
        json={"image_b64": b64(disk_png), "prompt": "disk",
              "params": {"method": "gradcam"}},
    )
    body = resp.json()
    assert body["method"] == "gradcam"
    values = np.load(io.BytesIO(base64.b64decode(body["saliency_npy_b64"])))
    assert values.shape == (64, 64)


def test_metrics_endpoint(client):
    pred = np.zeros((16, 16), dtype=bool)
    pred[:, :8] = True
    gt = np.zeros((16, 16), dtype=bool)
    gt[:8, :] = True
    resp = client.post(
        "/api/metrics",
        json={"pred_b64": b64(encode_mask_png(pred)), "gt_b64": b64(encode_mask_png(gt))},
    )
    body = resp.json()
    assert body["iou"] == pytest.approx(1 / 3)
    assert body["dsc"] == pytest.approx(1 / 2)


def test_config_merging(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"saliency": {"top_k": 7}}')
    cfg = load_config(str(path))
    assert cfg["saliency"]["top_k"] == 7
    assert cfg["saliency"]["method"] == "gscorecam"
    assert cfg["backend"]["name"] == "synthetic"
