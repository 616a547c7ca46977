import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from iosr import corpus
from iosr.evaluation import batch_retrain_oracle, joint_train_config
from iosr.head import TrainConfig
from iosr.service import TeachingEngine, create_app

DIM = 16
BASE_CLASSES = 8


@pytest.fixture()
def engine():
    spec = corpus.SynthSpec(
        dim=DIM, class_count=BASE_CLASSES, train_per_class=40, test_per_class=10, seed=13
    )
    train, test = corpus.synth_gaussian_corpus(spec)
    head = batch_retrain_oracle(train, joint_train_config(seed=2))
    return TeachingEngine(
        head,
        train.per_class(),
        TrainConfig(epochs=30, seed=3),
        world=test.subset(range(20)),
        experiment_report={"baseline_accuracy": 0.97, "steps": []},
    )


@pytest.fixture()
def client(engine):
    return TestClient(create_app(engine))


def wait_for_version(client, version, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        health = client.get("/healthz").json()
        if health["head_version"] >= version:
            return health
        time.sleep(0.02)
    raise TimeoutError(f"head never reached version {version}")


class TestReadEndpoints:
    def test_classes_of_fresh_base_head(self, client):
        classes = client.get("/classes").json()
        assert len(classes) == BASE_CLASSES
        assert all(c["origin"] == "base" for c in classes)
        assert [c["id"] for c in classes] == list(range(BASE_CLASSES))

    def test_healthz(self, client):
        body = client.get("/healthz").json()
        assert body["status"] == "ok"
        assert body["classes"] == BASE_CLASSES

    def test_predict_roundtrip(self, client, engine):
        x = engine._world.features[0].astype(float).tolist()
        body = client.post("/predict", json={"features": x}).json()
        assert body["class_name"] in {c.name for c in engine.head.registry}
        assert 0.0 < body["probability"] <= 1.0
        assert abs(sum(body["probabilities"].values()) - 1.0) < 1e-6

    def test_predict_dimension_mismatch_is_400(self, client):
        resp = client.post("/predict", json={"features": [1.0, 2.0]})
        assert resp.status_code == 400
        assert resp.json()["kind"] == "dimension_mismatch"

    def test_predict_needs_exactly_one_input(self, client):
        resp = client.post("/predict", json={})
        assert resp.status_code == 400

    def test_world_has_predictions_and_truth(self, client):
        body = client.get("/world").json()
        assert body["head_version"] == 0
        assert len(body["samples"]) == 20
        sample = body["samples"][0]
        assert {"id", "predicted_class", "probability", "norm", "truth_class", "correct"} <= set(
            sample
        )
        assert isinstance(sample["correct"], bool)

    def test_metrics_returns_report(self, client):
        body = client.get("/metrics/experiment").json()
        assert body["baseline_accuracy"] == 0.97

    def test_metrics_404_without_report(self, engine):
        engine._report = None
        client = TestClient(create_app(engine))
        assert client.get("/metrics/experiment").status_code == 404


class TestSessionFlow:
    def teach_one_class(self, client, engine, name="multimeter", samples=3):
        rng = np.random.default_rng(5)
        start = client.post("/session/start").json()
        assert start["phase"] == "await_correction"
        assert len(start["world"]["samples"]) == 20
        corrected = client.post("/session/correct", json={"name": name}).json()
        assert corrected["phase"] == "collecting"
        cluster = rng.random(DIM) + 3.0
        for i in range(samples):
            body = client.post(
                "/session/sample", json={"features": (cluster + 0.01 * rng.random(DIM)).tolist()}
            ).json()
            assert body["collected"] == i + 1
        return client.post("/session/finish").json()

    def test_full_teaching_cycle(self, client, engine):
        finish = self.teach_one_class(client, engine)
        assert finish["phase"] == "retraining"
        health = wait_for_version(client, 2)
        assert health["retrain_error"] is None
        classes = client.get("/classes").json()
        assert len(classes) == BASE_CLASSES + 1
        assert classes[-1] == {"id": BASE_CLASSES, "name": "multimeter", "origin": "added"}
        # session is idle again and a second class can be taught
        status = client.post("/session/start").json()
        assert status["phase"] == "await_correction"

    def test_duplicate_class_name_is_409(self, client):
        client.post("/session/start")
        resp = client.post("/session/correct", json={"name": "class_00"})
        assert resp.status_code == 409
        assert resp.json()["kind"] == "duplicate_class"

    def test_finish_without_samples_is_409(self, client):
        client.post("/session/start")
        client.post("/session/correct", json={"name": "widget"})
        resp = client.post("/session/finish")
        assert resp.status_code == 409
        assert resp.json()["kind"] == "rejected_transition"

    def test_concurrent_retrain_is_409(self, client, engine):
        engine.retrain_barrier = threading.Event()
        try:
            finish = self.teach_one_class(client, engine, name="oscilloscope")
            assert finish["phase"] == "retraining"
            resp = client.post("/session/finish")
            assert resp.status_code == 409
            resp = client.post("/session/start")
            assert resp.status_code == 409
        finally:
            engine.retrain_barrier.set()
        wait_for_version(client, 2)

    def test_abort_returns_to_idle(self, client):
        client.post("/session/start")
        client.post("/session/correct", json={"name": "widget"})
        body = client.post("/session/abort").json()
        assert body["phase"] == "idle"
        assert body["collected"] == 0

    def test_sample_dimension_mismatch_is_400(self, client):
        client.post("/session/start")
        client.post("/session/correct", json={"name": "widget"})
        resp = client.post("/session/sample", json={"features": [1.0]})
        assert resp.status_code == 400

    def test_world_version_reflects_retrain(self, client, engine):
        before = client.get("/world").json()["head_version"]
        self.teach_one_class(client, engine, name="soldering_iron")
        wait_for_version(client, before + 2)
        after = client.get("/world").json()["head_version"]
        assert after == before + 2  # append + column training


class TestEngineValidation:
    def test_pools_must_cover_registry(self, engine):
        pools = {0: list(engine._pools.values())[0]}
        with pytest.raises(ValueError):
            TeachingEngine(engine.head, pools, TrainConfig())

    def test_image_payload_without_extractor_is_rejected(self, client):
        resp = client.post(
            "/predict",
            json={"image": {"width": 2, "height": 2, "pixels": [0.1, 0.2, 0.3, 0.4]}},
        )
        assert resp.status_code == 400

    def test_image_payload_with_extractor(self):
        from iosr.embed import ExtractorConfig, FeatureExtractor

        extractor = FeatureExtractor(ExtractorConfig(patch_grid=2, output_dim=DIM))
        spec = corpus.SynthSpec(dim=DIM, class_count=3, train_per_class=10, test_per_class=5, seed=1)
        train, _ = corpus.synth_gaussian_corpus(spec)
        head = batch_retrain_oracle(train, joint_train_config(seed=1), extractor.fingerprint)
        engine = TeachingEngine(head, train.per_class(), TrainConfig(), extractor=extractor)
        client = TestClient(create_app(engine))
        resp = client.post(
            "/predict",
            json={"image": {"width": 2, "height": 2, "pixels": [0.1, 0.9, 0.3, 0.4]}},
        )
        assert resp.status_code == 200
        assert resp.json()["class_name"] in {"class_00", "class_01", "class_02"}
