"""Surrogate models with a shared fit / predict / importance surface.

Only the ordering of importance scores is consumed downstream, so the three
families can report on incompatible scales.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .design import Design, InputMap
from .forest import ForestConfig, ForestModel, fit_forest
from .kriging import (
    KrigingConfig,
    KrigingModel,
    expected_improvement,
    expected_improvement_from,
    fit_kriging,
    predict_kriging,
)
from .linear import LinearModel, RankDeficientError, fit_linear

MODEL_FORMAT_VERSION = 1
MODEL_TYPES = ("kriging", "linear", "forest")

__all__ = [
    "Design", "InputMap", "ForestConfig", "ForestModel", "KrigingConfig", "KrigingModel",
    "LinearModel", "RankDeficientError", "MODEL_TYPES", "expected_improvement",
    "expected_improvement_from", "fit_forest", "fit_kriging", "fit_linear", "importance",
    "importance_positions", "load_model", "predict_kriging", "rank_parameters", "save_model",
]


def importance(model) -> np.ndarray:
    if isinstance(model, KrigingModel):
        return np.asarray(model.theta, dtype=float).copy()
    if isinstance(model, LinearModel):
        return np.abs(model.coef)
    if isinstance(model, ForestModel):
        return model.permutation_importance()
    raise TypeError(f"no importance measure for {type(model).__name__}")


def rank_parameters(scores) -> list[int]:
    """1-based indices from most to least important; ties go to the lower index."""
    scores = np.asarray(scores, dtype=float)
    return [int(i) + 1 for i in sorted(range(len(scores)), key=lambda i: (-scores[i], i))]


def importance_positions(scores) -> np.ndarray:
    """Position of each parameter with ``d`` for the most important and 1 for the least.

    Tied scores share the mean of the positions they span.
    """
    return rankdata(np.asarray(scores, dtype=float), method="average")


def save_model(model, path: str | Path) -> None:
    payload = {"format_version": MODEL_FORMAT_VERSION, "model": model.to_dict()}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model(path: str | Path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {payload.get('format_version')}")
    d = payload["model"]
    kinds = {"kriging": KrigingModel, "linear": LinearModel, "forest": ForestModel}
    return kinds[d["kind"]].from_dict(d)
