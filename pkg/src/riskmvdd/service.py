"""HTTP prediction service: a stateless scoring surface over immutable models.

Models load once at startup from a directory of model documents; every
request evaluates against that frozen registry, so concurrent requests cannot
observe each other.  Responses always carry ``schema_version``.

Endpoints:
  GET  /models                    -> catalog of loaded models
  GET  /features/{feature_set}    -> manifest driving UI form generation
  POST /predict                   -> class, probability band, phenotype
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .features import BUILTIN_FEATURE_SETS, FeatureSet, builtin_feature_set, load_manifest
from .modeldoc import load_model
from .mvdd import IndeterminatePrediction, Mvdd, validate
from .predicting import SCHEMA_VERSION, predict_payload

log = logging.getLogger("riskmvdd.service")


class PredictRequest(BaseModel):
    feature_set: str
    outcome: str
    values: dict[str, float]


class ServiceState:
    """Immutable after startup: (feature_set, outcome) -> validated diagram."""

    def __init__(self):
        self.models: dict[tuple[str, str], Mvdd] = {}
        self.feature_sets: dict[str, FeatureSet] = {}

    def load_models(self, model_dir: Path) -> None:
        for path in sorted(model_dir.glob("*.json")):
            try:
                model = load_model(path)
            except Exception as exc:  # skip non-model JSON files in the directory
                log.warning("skipping %s: %s", path.name, exc)
                continue
            if not isinstance(model, Mvdd):
                continue
            report = validate(model)
            if not report.ok:
                log.warning("skipping %s: fails validation (%s)", path.name, report.codes())
                continue
            self.models[(model.feature_set, model.outcome)] = model
        for name in BUILTIN_FEATURE_SETS:
            self.feature_sets[name] = builtin_feature_set(name)
        for path in sorted(model_dir.glob("*.manifest.csv")):
            fs = load_manifest(path)
            name = fs.name.replace(".manifest", "")
            self.feature_sets[name] = FeatureSet(name=name, features=fs.features)


def _feature_payload(feature_set: FeatureSet) -> dict:
    features = []
    for spec in feature_set.features:
        features.append(
            {
                "name": spec.name,
                "kind": spec.kind,
                "unit": spec.unit,
                "valid_range": list(spec.valid_range) if spec.valid_range else None,
                "categories": [
                    {"code": c.code, "label": c.label} for c in spec.category_values
                ]
                or None,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "feature_set": feature_set.name,
        "features": features,
    }


def _error(status: int, error: str, **extra) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"schema_version": SCHEMA_VERSION, "error": error, **extra}
    )


def create_app(model_dir: Path, ui_dir: Path | None = None) -> FastAPI:
    state = ServiceState()
    state.load_models(Path(model_dir))

    app = FastAPI(title="riskmvdd prediction service", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(RequestValidationError)
    async def malformed_value(_request: Request, exc: RequestValidationError):
        return _error(422, "malformed_value", detail=exc.errors())

    @app.middleware("http")
    async def access_log(request: Request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        log.info(
            "%s %s model=%s status=%d latency_ms=%.1f",
            request.method,
            request.url.path,
            getattr(request.state, "model_key", "-"),
            response.status_code,
            elapsed_ms,
        )
        return response

    @app.get("/models")
    async def models():
        catalog = [
            {
                "feature_set": fs,
                "outcome": outcome,
                "k": model.k,
                "metadata": model.metadata,
            }
            for (fs, outcome), model in sorted(state.models.items())
        ]
        return {"schema_version": SCHEMA_VERSION, "models": catalog}

    @app.get("/features/{feature_set}")
    async def features(feature_set: str):
        fs = state.feature_sets.get(feature_set)
        if fs is None:
            return _error(404, "unknown_feature_set", feature_set=feature_set)
        return _feature_payload(fs)

    @app.post("/predict")
    async def predict(body: PredictRequest, request: Request):
        request.state.model_key = f"{body.feature_set}/{body.outcome}"
        model = state.models.get((body.feature_set, body.outcome))
        if model is None:
            return _error(
                404, "unknown_model", feature_set=body.feature_set, outcome=body.outcome
            )
        feature_set = state.feature_sets.get(body.feature_set)
        try:
            payload = predict_payload(model, dict(body.values), feature_set)
        except IndeterminatePrediction as exc:
            return _error(
                409, "indeterminate_prediction", missing_features=exc.missing_features
            )
        return payload

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
