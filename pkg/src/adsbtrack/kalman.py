"""Single-model Kalman filter with per-step process/observation noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .models import GaussianState, StateSpace


class FilterDivergence(RuntimeError):
    """Raised when a filter step produces a non-finite state."""

    def __init__(self, message: str, step: int | None = None, partial=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
        # (estimates, model probabilities) of the steps before the failure, when available
        self.partial = partial


class SingularInnovation(np.linalg.LinAlgError):
    def __init__(self, cond: float):
        super().__init__(f"innovation covariance is not positive definite (condition number {cond:.3e})")
        self.cond = cond


@dataclass
class UpdateOutput:
    state: GaussianState
    innovation: np.ndarray
    innovation_cov: np.ndarray
    likelihood: float
    log_likelihood: float


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def predict(s: GaussianState, ss: StateSpace) -> GaussianState:
    n = s.mean.shape[0]
    if ss.F.shape != (n, n) or ss.Q.shape != (n, n):
        raise ValueError(f"state dimension {n} does not match model matrices {ss.F.shape}")
    xp, Pp = kernels.kf_predict(_f64(s.mean), _f64(s.cov), _f64(ss.F), _f64(ss.Q))
    if not (np.all(np.isfinite(xp)) and np.all(np.isfinite(Pp))):
        raise FilterDivergence("prediction produced a non-finite state")
    return GaussianState(xp, Pp, s.kind)


def update(s: GaussianState, o, H, R, joseph: bool = False) -> UpdateOutput:
    """Measurement update; ``o`` is an observation vector or ``Observation``."""
    o = _f64(o.as_array() if hasattr(o, "as_array") else np.atleast_1d(o))
    H = _f64(np.atleast_2d(H))
    R = _f64(np.atleast_2d(R))
    n = s.mean.shape[0]
    if H.shape[1] != n or H.shape[0] != o.shape[0] or R.shape != (o.shape[0], o.shape[0]):
        raise ValueError(f"inconsistent shapes: H {H.shape}, R {R.shape}, o {o.shape}, state {n}")
    S = H @ s.cov @ H.T + R
    _, _, ok = kernels.chol_inverse(_f64(S))
    if not ok:
        raise SingularInnovation(float(np.linalg.cond(S)))
    x, P, nu, S, ll, _, _ = kernels.kf_update(_f64(s.mean), _f64(s.cov), o, H, R, joseph)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
        raise FilterDivergence("update produced a non-finite state")
    return UpdateOutput(GaussianState(x, P, s.kind), nu, S,
                        float(np.exp(max(ll, kernels.LOGLIK_FLOOR))), float(ll))


def log_likelihood(innovation, S) -> float:
    nu = _f64(np.atleast_1d(innovation))
    S = _f64(np.atleast_2d(S))
    Si, logdet, ok = kernels.chol_inverse(S)
    if not ok:
        raise ValueError("innovation covariance must be positive definite")
    return float(-0.5 * (nu @ Si @ nu + logdet + nu.shape[0] * kernels.LOG_2PI))


def gaussian_likelihood(innovation, S) -> float:
    """Density of N(0, S) at ``innovation``; log-density floored at -700."""
    return float(np.exp(max(log_likelihood(innovation, S), kernels.LOGLIK_FLOOR)))
