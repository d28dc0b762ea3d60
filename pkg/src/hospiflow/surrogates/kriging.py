"""Ordinary Kriging with an anisotropic Gaussian correlation.

Correlation between two unit-scaled inputs is ``exp(-sum_k theta_k (a_k - b_k)^2)``.
``theta`` and the nugget are fitted by maximising the concentrated
log-likelihood (mean and process variance profiled out) with a multi-start
L-BFGS-B search over their log10 values, using the analytic gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.stats import norm

from .design import Design, InputMap

LN10 = math.log(10.0)
_JITTERS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class KrigingConfig:
    theta_bounds: tuple[float, float] = (1e-3, 1e2)
    # None estimates the nugget within nugget_bounds; a number fixes it.
    nugget: float | None = None
    nugget_bounds: tuple[float, float] = (1e-8, 1.0)
    restarts: int = 10
    maxiter: int = 200
    theta: tuple[float, ...] | None = None


@dataclass
class KrigingModel:
    X: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    nugget: float
    inputs: InputMap
    mu: float = 0.0
    sigma2: float = 0.0
    jitter: float = 0.0
    degenerate: bool = False
    neg_log_likelihood: float = float("nan")
    _y_shift: float = field(default=0.0, repr=False)
    _y_scale: float = field(default=1.0, repr=False)

    def __post_init__(self):
        self._chol = None
        if not self.degenerate:
            self._factor()

    def _factor(self):
        yn = (self.y - self._y_shift) / self._y_scale
        psi, jitter, chol = _factor_psi(self.X, self.theta, self.nugget, self.jitter)
        self.jitter = jitter
        self._chol = chol
        ones = np.ones(len(yn))
        self._p1 = cho_solve(chol, ones)
        self._1p1 = float(ones @ self._p1)
        self.mu = float(self._p1 @ yn / self._1p1)
        r = yn - self.mu
        self._alpha = cho_solve(chol, r)
        self.sigma2 = float(r @ self._alpha / len(yn))

    @property
    def process_sd(self) -> float:
        return math.sqrt(max(self.sigma2, 0.0)) * self._y_scale

    @property
    def trend(self) -> float:
        return self.mu * self._y_scale + self._y_shift

    def correlation(self, Xq: np.ndarray) -> np.ndarray:
        w = np.sqrt(self.theta)
        return np.exp(-cdist(Xq * w, self.X * w, "sqeuclidean"))

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and standard deviation at unit-scaled points."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if self.degenerate:
            return np.full(len(Xq), self.y[0]), np.zeros(len(Xq))
        psi = self.correlation(Xq)
        mean = self.mu + psi @ self._alpha
        v = solve_triangular(self._chol[0], psi.T, lower=True)
        var = self.sigma2 * (1.0 - np.sum(v * v, axis=0) + (1.0 - psi @ self._p1) ** 2 / self._1p1)
        sd = np.sqrt(np.clip(var, 0.0, None))
        return mean * self._y_scale + self._y_shift, sd * self._y_scale

    def extrapolated(self, Xq) -> np.ndarray:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        return np.any((Xq < 0.0) | (Xq > 1.0), axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": "kriging",
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "theta": self.theta.tolist(),
            "nugget": self.nugget,
            "jitter": self.jitter,
            "degenerate": self.degenerate,
            "inputs": self.inputs.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KrigingModel":
        y = np.array(d["y"], dtype=float)
        shift, scale = _y_normalisation(y)
        return cls(
            np.array(d["X"], dtype=float), y, np.array(d["theta"], dtype=float), float(d["nugget"]),
            InputMap.from_dict(d["inputs"]), jitter=float(d["jitter"]), degenerate=bool(d["degenerate"]),
            _y_shift=shift, _y_scale=scale,
        )


def _y_normalisation(y: np.ndarray) -> tuple[float, float]:
    scale = float(np.std(y))
    return float(np.mean(y)), scale if scale > 0 else 1.0


def _factor_psi(X, theta, nugget, min_jitter=0.0):
    w = np.sqrt(theta)
    psi = np.exp(-cdist(X * w, X * w, "sqeuclidean"))
    n = len(X)
    for jitter in _JITTERS:
        if jitter < min_jitter:
            continue
        try:
            chol = cho_factor(psi + (nugget + jitter) * np.eye(n), lower=True)
            return psi, jitter, chol
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("correlation matrix is not positive definite")


class _Likelihood:
    """Concentrated negative log-likelihood over ``log10`` hyperparameters."""

    def __init__(self, X, y, fixed_nugget):
        self.X, self.y = X, y
        self.n, self.d = X.shape
        self.fixed_nugget = fixed_nugget
        diff = X[:, None, :] - X[None, :, :]
        self.D = np.moveaxis(diff * diff, 2, 0)  # d x n x n

    def split(self, phi):
        theta = 10.0 ** phi[: self.d]
        lam = self.fixed_nugget if self.fixed_nugget is not None else 10.0 ** phi[self.d]
        return theta, lam

    def __call__(self, phi):
        theta, lam = self.split(phi)
        R = np.exp(-np.tensordot(theta, self.D, axes=1))
        n = self.n
        for jitter in _JITTERS:
            try:
                c, low = cho_factor(R + (lam + jitter) * np.eye(n), lower=True)
                break
            except np.linalg.LinAlgError:
                continue
        else:
            return 1e10, np.zeros_like(phi)
        ones = np.ones(n)
        p1 = cho_solve((c, low), ones)
        mu = p1 @ self.y / (ones @ p1)
        r = self.y - mu
        alpha = cho_solve((c, low), r)
        sigma2 = max(r @ alpha / n, 1e-300)
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        nll = 0.5 * n * math.log(sigma2) + 0.5 * logdet
        Pinv = cho_solve((c, low), np.eye(n))
        M = 0.5 * Pinv - np.outer(alpha, alpha) / (2.0 * sigma2)
        grad_theta = -theta * LN10 * np.tensordot(self.D, M * R, axes=([1, 2], [0, 1]))
        if self.fixed_nugget is None:
            g_lam = lam * LN10 * (np.trace(M))
            grad = np.append(grad_theta, g_lam)
        else:
            grad = grad_theta
        return float(nll), grad


def fit_kriging(design: Design, cfg: KrigingConfig | None = None, rng: np.random.Generator | None = None) -> KrigingModel:
    cfg = cfg or KrigingConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    X, y = np.asarray(design.X, dtype=float), np.asarray(design.y, dtype=float)
    inputs = InputMap.of(design)
    shift, scale = _y_normalisation(y)
    if np.ptp(y) == 0.0:
        return KrigingModel(X, y, np.zeros(design.d), 0.0, inputs, degenerate=True, _y_shift=shift, _y_scale=scale)

    yn = (y - shift) / scale
    if cfg.theta is not None:
        theta = np.asarray(cfg.theta, dtype=float)
        nugget = cfg.nugget if cfg.nugget is not None else cfg.nugget_bounds[0]
        model = KrigingModel(X, y, theta, nugget, inputs, _y_shift=shift, _y_scale=scale)
        return model

    lik = _Likelihood(X, yn, cfg.nugget)
    lo_t, hi_t = np.log10(cfg.theta_bounds)
    bounds = [(lo_t, hi_t)] * design.d
    if cfg.nugget is None:
        bounds.append(tuple(np.log10(cfg.nugget_bounds)))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    first = lo + 0.5 * (hi - lo)
    if cfg.nugget is None:
        first[-1] = np.clip(-3.0, lo[-1], hi[-1])
    starts = [first]
    for _ in range(max(cfg.restarts - 1, 0)):
        starts.append(lo + rng.random(len(bounds)) * (hi - lo))

    best_phi, best_val = None, math.inf
    for phi0 in starts:
        res = minimize(lik, phi0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": cfg.maxiter})
        if res.fun < best_val:
            best_val, best_phi = float(res.fun), res.x
    theta, lam = lik.split(best_phi)
    return KrigingModel(
        X, y, theta, float(lam), inputs, neg_log_likelihood=best_val, _y_shift=shift, _y_scale=scale
    )


def predict_kriging(model: KrigingModel, x) -> tuple[np.ndarray, np.ndarray]:
    return model.predict(x)


def expected_improvement_from(mean, sd, best: float) -> np.ndarray:
    """Closed-form expected improvement for minimisation."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    gap = best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, gap / np.where(sd > 0, sd, 1.0), 0.0)
        ei = np.where(sd > 0, gap * norm.cdf(z) + sd * norm.pdf(z), np.maximum(gap, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(model: KrigingModel, x, best_observed: float) -> np.ndarray:
    mean, sd = model.predict(x)
    return expected_improvement_from(mean, sd, best_observed)
