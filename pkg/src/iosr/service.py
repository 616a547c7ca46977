"""Teaching service: HTTP + JSON wire API around the classifier head.

Readers always see a complete head snapshot; retraining runs as a single
background job and swaps the snapshot atomically when done. The session
endpoints drive the finite state machine; POST /session/start fires
StartSession immediately followed by RequestWorld, so the response carries
the emitted world view.

No `from __future__ import annotations` here: the wire-API models are
defined inside create_app and FastAPI must see real classes, not strings.
"""

import threading
from dataclasses import replace

import numpy as np

from . import session as fsm
from .corpus import LabeledFeatureSet
from .embed import FeatureExtractor
from .head import (
    ClassifierHead,
    DimensionMismatchError,
    DuplicateClassError,
    TrainConfig,
    add_class_end_to_end,
    logits,
    softmax,
)
from .seeding import derive_seed


class TeachingEngine:
    """Owns the head snapshot, the sample pools, and the session FSM."""

    def __init__(
        self,
        head: ClassifierHead,
        pools: dict[int, LabeledFeatureSet],
        train_cfg: TrainConfig = TrainConfig(),
        world: LabeledFeatureSet | None = None,
        extractor: FeatureExtractor | None = None,
        experiment_report: dict | None = None,
    ):
        for cid, pool in pools.items():
            if pool.dim != head.dim:
                raise DimensionMismatchError(
                    f"pool for class {cid} has dim {pool.dim}, head has {head.dim}"
                )
        missing = [c.id for c in head.registry if c.id not in pools or len(pools[c.id]) == 0]
        if missing:
            raise ValueError(f"classes {missing} have no negative-sampling pool")
        if extractor is not None and head.extractor_digest:
            if extractor.fingerprint != head.extractor_digest:
                raise ValueError("extractor fingerprint does not match the head's digest")
        self._head = head
        self._pools = dict(pools)
        self._train_cfg = train_cfg
        self._world = world
        self._extractor = extractor
        self._report = experiment_report
        self._state = fsm.initial_state()
        self._lock = threading.Lock()
        self._retrain_thread: threading.Thread | None = None
        self.retrain_error: str | None = None
        self.retrain_barrier: threading.Event | None = None  # test seam: job waits on it

    # -- reads ------------------------------------------------------------

    @property
    def head(self) -> ClassifierHead:
        return self._head

    @property
    def state(self) -> fsm.SessionState:
        return self._state

    def classes(self) -> list[dict]:
        return [
            {"id": c.id, "name": c.name, "origin": c.origin} for c in self._head.registry
        ]

    def features_from_payload(self, features=None, image=None) -> np.ndarray:
        if (features is None) == (image is None):
            raise ValueError("provide exactly one of 'features' or 'image'")
        if features is not None:
            x = np.asarray(features, dtype=np.float64)
            if x.shape != (self._head.dim,):
                raise DimensionMismatchError(
                    f"expected {self._head.dim} features, got shape {x.shape}"
                )
            return x
        if self._extractor is None:
            raise ValueError("service has no extractor configured; submit raw features")
        arr = np.asarray(image["pixels"], dtype=np.float64).reshape(
            image["height"], image["width"], image.get("channels", 1)
        )
        return self._extractor.extract(arr)

    def predict(self, x) -> dict:
        head = self._head
        z = logits(head, x)
        probs = softmax(z)
        best = int(np.argmax(z))
        return {
            "class_id": head.registry[best].id,
            "class_name": head.registry[best].name,
            "probability": float(probs[best]),
            "probabilities": {c.name: float(p) for c, p in zip(head.registry, probs)},
            "head_version": head.version,
        }

    def world_view(self) -> dict:
        head = self._head
        samples = []
        if self._world is not None:
            X = self._world.features.astype(np.float64)
            scores = X @ head.weights + head.biases
            probs = softmax(scores)
            best = np.argmax(scores, axis=1)
            norms = np.linalg.norm(X, axis=1)
            for i in range(len(self._world)):
                truth_id = int(self._world.labels[i])
                truth = self._world.class_names.get(truth_id)
                predicted = head.registry[int(best[i])].name
                samples.append(
                    {
                        "id": i,
                        "predicted_class": predicted,
                        "probability": float(probs[i, best[i]]),
                        "norm": float(norms[i]),
                        "truth_class": truth,
                        "correct": None if truth is None else bool(predicted == truth),
                    }
                )
        return {
            "head_version": head.version,
            "phase": self._state.phase.value,
            "samples": samples,
        }

    def experiment_report(self):
        return self._report

    # -- session ----------------------------------------------------------

    def _apply(self, event) -> list:
        state, actions = fsm.handle_event(self._state, event)
        state.check_invariants()
        self._state = state
        return actions

    def session_start(self) -> dict:
        with self._lock:
            self._apply(fsm.StartSession())
            self._apply(fsm.RequestWorld())
        view = self.world_view()
        return {"phase": self._state.phase.value, "world": view}

    def session_correct(self, name: str) -> dict:
        with self._lock:
            if self._head.class_named(name) is not None:
                raise DuplicateClassError(f"class {name!r} already exists")
            self._apply(fsm.Correct(name))
        return self.session_status()

    def session_add_sample(self, x) -> dict:
        with self._lock:
            self._apply(fsm.AddSample(np.asarray(x, dtype=np.float64)))
        return self.session_status()

    def session_finish(self) -> dict:
        with self._lock:
            actions = self._apply(fsm.FinishCollection())
            start = next(a for a in actions if isinstance(a, fsm.StartRetrain))
            self.retrain_error = None
            self._retrain_thread = threading.Thread(
                target=self._retrain_job, args=(start.name, start.samples), daemon=True
            )
            self._retrain_thread.start()
        return self.session_status()

    def session_abort(self) -> dict:
        with self._lock:
            self._apply(fsm.Abort())
        return self.session_status()

    def session_status(self) -> dict:
        return {
            "phase": self._state.phase.value,
            "pending_class": self._state.pending_class,
            "collected": len(self._state.collected),
            "session_retrains": self._state.head_version,
            "head_version": self._head.version,
            "retrain_error": self.retrain_error,
        }

    def _retrain_job(self, name: str, samples: tuple) -> None:
        if self.retrain_barrier is not None:
            self.retrain_barrier.wait()
        try:
            head = self._head
            new_id = head.n_classes
            positives = LabeledFeatureSet(
                head.dim,
                {new_id: name},
                np.full(len(samples), new_id, dtype=np.uint16),
                np.stack([np.asarray(s, dtype=np.float32) for s in samples]),
            )
            cfg = replace(
                self._train_cfg, seed=derive_seed(self._train_cfg.seed, 300, new_id)
            )
            new_head = add_class_end_to_end(head, name, positives, self._pools, cfg)
            with self._lock:
                self._head = new_head
                self._pools[new_id] = positives
                self._apply(fsm.RetrainDone())
        except Exception as exc:  # surfaced via /healthz, session returns to idle
            with self._lock:
                self.retrain_error = f"{type(exc).__name__}: {exc}"
                self._apply(fsm.Abort())

    def wait_for_retrain(self, timeout: float = 30.0) -> bool:
        thread = self._retrain_thread
        if thread is None:
            return True
        thread.join(timeout)
        return not thread.is_alive()


def create_app(engine: TeachingEngine):
    """Build the FastAPI application exposing the wire API."""
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel

    class ImagePayload(BaseModel):
        width: int
        height: int
        channels: int = 1
        pixels: list[float]

    class FeaturePayload(BaseModel):
        features: list[float] | None = None
        image: ImagePayload | None = None

    class CorrectPayload(BaseModel):
        name: str

    app = FastAPI(title="iosr teaching service")

    def error_response(status: int, kind: str, exc: Exception):
        return JSONResponse(status_code=status, content={"error": str(exc), "kind": kind})

    @app.exception_handler(DimensionMismatchError)
    async def _dim_error(request: Request, exc):
        return error_response(400, "dimension_mismatch", exc)

    @app.exception_handler(DuplicateClassError)
    async def _dup_error(request: Request, exc):
        return error_response(409, "duplicate_class", exc)

    @app.exception_handler(fsm.RejectedTransitionError)
    async def _fsm_error(request: Request, exc):
        return error_response(409, "rejected_transition", exc)

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc):
        return error_response(400, "invalid_request", exc)

    def payload_features(body: FeaturePayload):
        image = body.image.model_dump() if body.image is not None else None
        return engine.features_from_payload(body.features, image)

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "head_version": engine.head.version,
            "classes": engine.head.n_classes,
            "phase": engine.state.phase.value,
            "retrain_error": engine.retrain_error,
        }

    @app.get("/classes")
    def classes():
        return engine.classes()

    @app.post("/predict")
    def predict(body: FeaturePayload):
        return engine.predict(payload_features(body))

    @app.get("/world")
    def world():
        return engine.world_view()

    @app.post("/session/start")
    def session_start():
        return engine.session_start()

    @app.post("/session/correct")
    def session_correct(body: CorrectPayload):
        return engine.session_correct(body.name)

    @app.post("/session/sample")
    def session_sample(body: FeaturePayload):
        return engine.session_add_sample(payload_features(body))

    @app.post("/session/finish")
    def session_finish():
        return engine.session_finish()

    @app.post("/session/abort")
    def session_abort():
        return engine.session_abort()

    @app.get("/metrics/experiment")
    def metrics_experiment():
        report = engine.experiment_report()
        if report is None:
            return JSONResponse(
                status_code=404,
                content={"error": "no experiment report available", "kind": "not_found"},
            )
        return report

    return app


def serve(engine: TeachingEngine, bind: str = "127.0.0.1:8077") -> None:
    """Run the service until interrupted."""
    import uvicorn

    host, _, port = bind.partition(":")
    uvicorn.run(create_app(engine), host=host or "127.0.0.1", port=int(port or 8077))
