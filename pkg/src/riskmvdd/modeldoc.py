"""Model documents: one JSON container for diagrams and baselines, dispatched
by the ``kind`` tag."""

from __future__ import annotations

import json
from pathlib import Path

from .baselines import BASELINE_KINDS, BaselineModel, deserialize_baseline, serialize_baseline
from .mvdd import CorruptDocument, Mvdd, deserialize, serialize

Model = Mvdd | BaselineModel


def dumps_model(model: Model) -> str:
    if isinstance(model, Mvdd):
        return serialize(model)
    return serialize_baseline(model)


def loads_model(text: str) -> Model:
    try:
        kind = json.loads(text).get("kind")
    except (json.JSONDecodeError, AttributeError) as exc:
        raise CorruptDocument(f"not a model document: {exc}") from None
    if kind == "mvdd":
        return deserialize(text)
    if kind in BASELINE_KINDS:
        return deserialize_baseline(text)
    raise CorruptDocument(f"unknown model kind {kind!r}")


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path: str | Path) -> Model:
    return loads_model(Path(path).read_text(encoding="utf-8"))
