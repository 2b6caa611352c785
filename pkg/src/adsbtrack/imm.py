"""Two-model IMM (constant velocity + constant jerk) built on the kernels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .kalman import FilterDivergence
from .models import (
    DEFAULT_AUG_VAR,
    GaussianState,
    ModelKind,
    NoiseParams,
    observation_matrix,
    q_basis,
    transition_matrix,
)

log = logging.getLogger(__name__)


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


@dataclass(frozen=True)
class ImmConfig:
    lam: tuple = ((0.95, 0.05), (0.05, 0.95))
    initial_mu: tuple = (0.5, 0.5)
    aug_var: tuple = tuple(DEFAULT_AUG_VAR)
    q_mode: str = "default"
    joseph: bool = False

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.shape != (2, 2) or np.any(lam < 0) or np.any(np.abs(lam.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError(f"transition matrix rows must be probability vectors: {lam.tolist()}")
        mu = np.asarray(self.initial_mu, dtype=float)
        if mu.shape != (2,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError(f"initial model probabilities must sum to 1: {mu.tolist()}")
        aug = np.asarray(self.aug_var, dtype=float)
        if aug.shape != (6,) or np.any(aug <= 0):
            raise ValueError("aug_var needs six positive variances")

    @property
    def lam_array(self) -> np.ndarray:
        return _f64(self.lam)

    @property
    def mu_array(self) -> np.ndarray:
        return _f64(self.initial_mu)

    @property
    def aug_array(self) -> np.ndarray:
        return _f64(self.aug_var)


class ModelBank:
    """Fixed F/H matrices and Q bases for one sample period."""

    def __init__(self, T: float, q_mode: str = "default"):
        self.T = float(T)
        self.q_mode = q_mode
        self.F1 = _f64(transition_matrix(ModelKind.CV, T))
        self.F2 = _f64(transition_matrix(ModelKind.CJ, T))
        self.H1 = _f64(observation_matrix(ModelKind.CV))
        self.H2 = _f64(observation_matrix(ModelKind.CJ))
        self.B1 = _f64(q_basis(ModelKind.CV, T, q_mode))
        self.B2 = _f64(q_basis(ModelKind.CJ, T, q_mode))

    def matrices(self, theta: np.ndarray):
        """(Q_cv, Q_cj, R) for a 12-vector of noise scales."""
        theta = np.asarray(theta, dtype=float)
        Q1 = _f64(np.tensordot(theta[0:3] ** 2, self.B1, axes=1))
        Q2 = _f64(np.tensordot(theta[3:6] ** 2, self.B2, axes=1))
        R = _f64(np.diag(theta[6:12] ** 2))
        return Q1, Q2, R

    def sigma_grad(self, theta, g_Q1, g_Q2, g_R) -> np.ndarray:
        """Chain adjoints of (Q_cv, Q_cj, R) back to the 12 noise scales."""
        theta = np.asarray(theta, dtype=float)
        g = np.empty(12)
        g[0:3] = 2.0 * theta[0:3] * np.tensordot(self.B1, g_Q1, axes=([1, 2], [0, 1]))
        g[3:6] = 2.0 * theta[3:6] * np.tensordot(self.B2, g_Q2, axes=([1, 2], [0, 1]))
        g[6:12] = 2.0 * theta[6:12] * np.diag(g_R)
        return g


@lru_cache(maxsize=16)
def model_bank(T: float, q_mode: str = "default") -> ModelBank:
    return ModelBank(T, q_mode)


@dataclass
class ImmState:
    cv: GaussianState
    cj: GaussianState
    mu: np.ndarray
    combined_mean: np.ndarray
    combined_cov: np.ndarray


@dataclass
class StepDiagnostics:
    innovations: tuple
    log_likelihoods: np.ndarray
    mu: np.ndarray
    delta: np.ndarray
    r_inflated: bool = False
    flags: list = field(default_factory=list)


def mixing_probabilities(mu_prev, lam) -> np.ndarray:
    """mix[i, j] = P(model i at k-1 | model j at k); columns sum to one."""
    _, mix, status = kernels.mixing(_f64(mu_prev), _f64(lam))
    if status & kernels.ZERO_MIX_COLUMN:
        log.warning("zero predicted probability for a model; mixing column set to uniform")
    return mix


def interact(cv: GaussianState, cj: GaussianState, mix, aug_var=DEFAULT_AUG_VAR):
    """Mixed initial states for the CV and CJ filters."""
    if cv.mean.shape[0] != 6 or cj.mean.shape[0] != 12:
        raise ValueError("interact expects a 6-dim CV state and a 12-dim CJ state")
    mix = np.asarray(mix, dtype=float)
    x1, P1, x2, P2 = _f64(cv.mean), _f64(cv.cov), _f64(cj.mean), _f64(cj.cov)
    x01, P01 = kernels.mix2(x1, P1, _f64(x2[:6]), _f64(P2[:6, :6]), mix[0, 0], mix[1, 0])
    xl, Pl = kernels.lift(x1, P1, _f64(np.broadcast_to(aug_var, (6,))))
    x02, P02 = kernels.mix2(xl, Pl, x2, P2, mix[0, 1], mix[1, 1])
    return GaussianState(x01, P01, ModelKind.CV), GaussianState(x02, P02, ModelKind.CJ)


def update_model_probabilities(mu_prev, lam, likelihoods) -> np.ndarray:
    L = np.asarray(likelihoods, dtype=float)
    if np.any(L < 0):
        raise ValueError("likelihoods must be non-negative")
    cbar, _, _ = kernels.mixing(_f64(mu_prev), _f64(lam))
    with np.errstate(divide="ignore"):
        ll = np.log(L)
    mu = kernels.model_probabilities(_f64(ll), cbar)
    assert np.all(np.isfinite(mu)), "model probabilities not finite"
    return mu


def combine(cv: GaussianState, cj: GaussianState, mu):
    """Probability-weighted 6-dim mean and covariance (spread term included)."""
    return kernels.combine(_f64(cv.mean[:6]), _f64(cv.cov[:6, :6]),
                           _f64(cj.mean[:6]), _f64(cj.cov[:6, :6]), _f64(mu))


def initial_state(o0, sigma_r, cfg: ImmConfig) -> ImmState:
    """Start both filters on the first observation with covariance diag(sigma_r**2)."""
    o0 = _f64(o0)
    P = np.diag(np.asarray(sigma_r, dtype=float) ** 2)
    cv = GaussianState(o0.copy(), P.copy(), ModelKind.CV)
    xl, Pl = kernels.lift(o0, _f64(P), cfg.aug_array)
    cj = GaussianState(xl, Pl, ModelKind.CJ)
    mu = cfg.mu_array.copy()
    xc, Pc = combine(cv, cj, mu)
    return ImmState(cv, cj, mu, xc, Pc)


def imm_step(state: ImmState, o, params: NoiseParams, T: float, cfg: ImmConfig):
    """One IMM cycle with noise matrices rebuilt from ``params``."""
    bank = model_bank(float(T), cfg.q_mode)
    Q1, Q2, R = bank.matrices(params.as_vector())
    o = _f64(o.as_array() if hasattr(o, "as_array") else o)
    out = kernels.imm_forward(
        _f64(state.cv.mean), _f64(state.cv.cov), _f64(state.cj.mean), _f64(state.cj.cov),
        _f64(state.mu), o, bank.F1, Q1, bank.F2, Q2, bank.H1, bank.H2, R,
        cfg.lam_array, cfg.aug_array, cfg.joseph)
    x1, P1, x2, P2, mu, xc, Pc, ll, status = out
    if status & kernels.SINGULAR or not np.all(np.isfinite(xc)):
        raise FilterDivergence("IMM step failed: singular innovation covariance or non-finite state")
    flags = []
    if status & kernels.R_INFLATED:
        flags.append("r_inflated")
        log.info("innovation covariance singular; retried with R x%g", kernels.R_INFLATION)
    if status & kernels.ZERO_MIX_COLUMN:
        flags.append("zero_mix_column")
        log.debug("model with zero predicted probability; uniform mixing column used")
    new = ImmState(GaussianState(x1, P1, ModelKind.CV), GaussianState(x2, P2, ModelKind.CJ), mu, xc, Pc)
    innov = (o - x1[:6], o - x2[:6])
    diag = StepDiagnostics(innov, ll, mu, o - xc, bool(status & kernels.R_INFLATED), flags)
    return new, diag


def local_origin(obs) -> np.ndarray:
    """Offset that moves the first observed position to the origin.

    Projected northings are millions of metres; filtering relative to the
    first fix keeps the arithmetic well away from that magnitude.
    """
    origin = np.zeros(6)
    origin[:3] = np.asarray(obs, dtype=float)[0, :3]
    return origin


def run_fixed(obs, params: NoiseParams, T: float, cfg: ImmConfig, initial_sigma_r=None):
    """Plain IMM-KF over an (N, 6) observation array with constant noise matrices.

    Filtering runs in coordinates relative to the first observation.
    Returns (estimates (N, 6), model probabilities (N, 2)).  Raises
    :class:`FilterDivergence` carrying the failing step index.
    """
    origin = local_origin(obs)
    obs = _f64(np.asarray(obs, dtype=float) - origin)
    theta = params.as_vector()
    bank = model_bank(float(T), cfg.q_mode)
    Q1, Q2, R = bank.matrices(theta)
    s0 = initial_state(obs[0], theta[6:] if initial_sigma_r is None else initial_sigma_r, cfg)
    xs, mus, *_, fail = kernels.filter_track(
        obs, s0.cv.mean, s0.cv.cov, s0.cj.mean, s0.cj.cov, s0.mu, bank.F1, Q1, bank.F2, Q2,
        bank.H1, bank.H2, R, cfg.lam_array, cfg.aug_array, cfg.joseph)
    if fail >= 0:
        raise FilterDivergence("fixed IMM-KF diverged", step=int(fail),
                               partial=(xs[:fail] + origin, mus[:fail]))
    return xs + origin, mus
