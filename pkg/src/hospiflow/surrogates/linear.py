"""Main-effects linear regression on standardised inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .design import Design, InputMap


class RankDeficientError(ValueError):
    def __init__(self, message: str, columns: list[int]):
        super().__init__(message)
        self.columns = columns


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray
    x_mean: np.ndarray
    x_sd: np.ndarray
    residual_scale: float
    inputs: InputMap

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.intercept + ((X - self.x_mean) / self.x_sd) @ self.coef

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_sd": self.x_sd.tolist(),
            "residual_scale": self.residual_scale,
            "inputs": self.inputs.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            float(d["intercept"]), np.array(d["coef"]), np.array(d["x_mean"]), np.array(d["x_sd"]),
            float(d["residual_scale"]), InputMap.from_dict(d["inputs"]),
        )


def _collinear(Z: np.ndarray, columns, tol: float) -> list[str]:
    problems = []
    const = [j for j in range(Z.shape[1]) if not np.any(Z[:, j])]
    for j in const:
        problems.append(f"x{columns[j]} is constant")
    live = [j for j in range(Z.shape[1]) if j not in const]
    if not live:
        return problems
    _, R, piv = qr(Z[:, live], mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * diag[0]))
    indep = [live[p] for p in piv[:rank]]
    for p in piv[rank:]:
        j = live[p]
        c, *_ = np.linalg.lstsq(Z[:, indep], Z[:, j], rcond=None)
        partners = [f"x{columns[indep[k]]}" for k in np.flatnonzero(np.abs(c) > 1e-8)]
        problems.append(f"x{columns[j]} is collinear with {', '.join(partners) or 'the intercept'}")
    return problems


def fit_linear(design: Design) -> LinearModel:
    """Least squares with inputs standardised to zero mean and unit (population) variance."""
    X, y = np.asarray(design.X, dtype=float), np.asarray(design.y, dtype=float)
    n, d = X.shape
    if n < d + 2:
        raise ValueError(f"linear fit needs at least d + 2 = {d + 2} points, got {n}")
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    Z = np.where(sd > 0, (X - mean) / np.where(sd > 0, sd, 1.0), 0.0)
    problems = _collinear(Z, design.columns, tol=1e-10)
    if problems:
        bad = sorted({int(p.split()[0][1:]) for p in problems})
        raise RankDeficientError("rank-deficient design: " + "; ".join(problems), bad)
    A = np.column_stack([np.ones(n), Z])
    if np.ptp(y) == 0.0:
        # exact zeros rather than round-off, so importance ties stay ties
        beta = np.concatenate([[y[0]], np.zeros(d)])
    else:
        beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ beta
    dof = max(n - d - 1, 1)
    return LinearModel(
        float(beta[0]), beta[1:], mean, sd, float(np.sqrt(resid @ resid / dof)), InputMap.of(design)
    )
