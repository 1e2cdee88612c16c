import numpy as np
import pytest
from fastapi.testclient import TestClient

import pllac.main
from pllac.data import make_blobs, save_features
from pllac.main import app

client = TestClient(app)


@pytest.fixture
def blobs_csv(tmp_path):
    data = make_blobs(60, 3, np.random.default_rng(0))
    return save_features(data.features, str(tmp_path / "blobs.csv"), labels=data.labels)


def train_body(dataset, output, **extra):
    body = {"dataset": dataset, "epochs": 2, "batch_size": 32, "theta": "fixed:0.7", "trials": 1,
            "output": output}
    body.update(extra)
    return body


def test_theta_endpoint_returns_estimate_and_curve():
    rng = np.random.default_rng(1)
    pll = rng.standard_normal((80, 2))
    unlabeled = np.vstack([rng.standard_normal((40, 2)), rng.standard_normal((40, 2)) + 10.0])
    response = client.post("/theta", json={"pll_features": pll.tolist(), "unlabeled_features": unlabeled.tolist()})
    assert response.status_code == 200
    body = response.json()
    assert 0.0 <= body["theta_hat"] <= 1.0
    assert body["bandwidth"] > 0
    assert len(body["curve"]) == 64


def test_theta_endpoint_maps_package_errors_to_400():
    response = client.post("/theta", json={"pll_features": [[0.0, 1.0], [1.0, 0.0]],
                                           "unlabeled_features": [[0.0, 1.0, 2.0]]})
    assert response.status_code == 400
    assert response.json()["error"] == "DataError"


def test_theta_endpoint_validates_bandwidth():
    response = client.post("/theta", json={"pll_features": [[0.0]], "unlabeled_features": [[1.0]],
                                           "bandwidth": -1.0})
    assert response.status_code == 422


def test_train_endpoint_runs_and_saves(tmp_path, blobs_csv):
    response = client.post("/train", json=train_body(blobs_csv, str(tmp_path / "out"), **{"lambda": 0.5}))
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert 0.0 <= body["accuracy"] <= 1.0
    assert (tmp_path / "out" / "summary.json").exists()
    assert (tmp_path / "out" / "checkpoint.json").exists()


def test_train_endpoint_rejects_unknown_keys(tmp_path, blobs_csv):
    response = client.post("/train", json=train_body(blobs_csv, str(tmp_path), learning_rate=0.1))
    assert response.status_code == 422


def test_train_endpoint_without_dataset_is_a_bad_request(tmp_path):
    response = client.post("/train", json={"epochs": 1, "output": str(tmp_path)})
    assert response.status_code == 400
    assert "no dataset" in response.json()["detail"]


def test_download_unknown_type():
    assert client.get("/download/everything").status_code == 404


def test_download_missing_and_present(tmp_path, monkeypatch, blobs_csv):
    monkeypatch.setattr(pllac.main, "OUTPUT_FOLDER", str(tmp_path))
    assert client.get("/download/summary").status_code == 404

    client.post("/train", json=train_body(blobs_csv, str(tmp_path)))
    response = client.get("/download/summary")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"

    epochs = client.get("/download/epochs")
    assert epochs.status_code == 200
    assert len(epochs.text.strip().splitlines()) == 2


def test_download_from_a_custom_output_folder(tmp_path, blobs_csv):
    out = tmp_path / "custom"
    assert client.post("/train", json=train_body(blobs_csv, str(out))).status_code == 200

    response = client.get("/download/checkpoint", params={"folder": str(out)})
    assert response.status_code == 200
    assert response.json()["arch"] == "linear"
    assert client.get("/download/grid_csv", params={"folder": str(out)}).status_code == 404
