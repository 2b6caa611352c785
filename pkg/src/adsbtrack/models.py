"""Constant-velocity and constant-jerk state-space models.

Both models observe position and velocity, so ``H`` selects the first six
state components.  Process noise is assembled per axis as

    Q = sum_a sigma_a**2 * B_a

where ``B_a`` (see :func:`q_basis`) holds the block coefficients for
axis ``a``.  Training uses the same basis to map dQ back to dsigma.

``q_discretization`` selects the block coefficients:

* ``"default"``: CV position block T**3/2; CJ position-acceleration
  T**5/30 so that Q stays positive semi-definite.
* ``"literal"``: as ``"default"`` but CJ position-acceleration T**5/72.  This
  matrix is indefinite (min eigenvalue about -0.6% of the largest at
  T=1); kept only for comparison runs.
* ``"standard"``: textbook discretisation, CV T**3/3 and CJ T**5/30.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

Q_MODES = ("default", "literal", "standard")


class ModelKind(Enum):
    CV = 6
    CJ = 12

    @property
    def state_dim(self) -> int:
        return self.value


@dataclass(frozen=True)
class StateSpace:
    kind: ModelKind
    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    T: float


@dataclass
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray
    kind: ModelKind | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean length {n}")
        if self.kind is not None and self.kind.state_dim != n:
            raise ValueError(f"{self.kind.name} state needs dimension {self.kind.state_dim}, got {n}")


@dataclass(frozen=True)
class NoiseBounds:
    vw: tuple[float, float] = (0.01, 50.0)
    jw: tuple[float, float] = (0.01, 50.0)
    r_pos: tuple[float, float] = (0.1, 500.0)
    r_vel: tuple[float, float] = (0.01, 50.0)

    def per_param(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper bounds as 12-vectors in NoiseParams order."""
        groups = [self.vw] * 3 + [self.jw] * 3 + [self.r_pos] * 3 + [self.r_vel] * 3
        lo = np.array([g[0] for g in groups], dtype=float)
        hi = np.array([g[1] for g in groups], dtype=float)
        return lo, hi


@dataclass(frozen=True)
class NoiseParams:
    """Per-axis noise scales: CV velocity noise, CJ jerk noise, observation std."""

    sigma_vw: np.ndarray
    sigma_jw: np.ndarray
    sigma_r: np.ndarray

    def __post_init__(self):
        for name, size in (("sigma_vw", 3), ("sigma_jw", 3), ("sigma_r", 6)):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (size,):
                raise ValueError(f"{name} needs {size} entries, got {arr.shape[0]}")
            if not np.all(arr > 0):
                raise ValueError(f"{name} entries must be positive: {arr}")
            object.__setattr__(self, name, arr)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.sigma_vw, self.sigma_jw, self.sigma_r])

    @classmethod
    def from_vector(cls, v) -> "NoiseParams":
        v = np.asarray(v, dtype=float)
        return cls(v[0:3], v[3:6], v[6:12])

    @classmethod
    def isotropic(cls, vw: float, jw: float, r_pos: float, r_vel: float) -> "NoiseParams":
        return cls(np.full(3, vw), np.full(3, jw), np.array([r_pos] * 3 + [r_vel] * 3))

    def check_bounds(self, bounds: NoiseBounds) -> bool:
        lo, hi = bounds.per_param()
        v = self.as_vector()
        return bool(np.all(v >= lo) and np.all(v <= hi))

    def __eq__(self, other):
        if not isinstance(other, NoiseParams):
            return NotImplemented
        return bool(np.array_equal(self.as_vector(), other.as_vector()))

    def __hash__(self):
        return hash(self.as_vector().tobytes())


def _check_T(T: float):
    if not T > 0:
        raise ValueError(f"sample period must be positive, got {T}")


def _check_sigma(sigma, size: int, name: str) -> np.ndarray:
    s = np.asarray(sigma, dtype=float).reshape(-1)
    if s.shape != (size,):
        raise ValueError(f"{name} needs {size} entries, got {s.shape[0]}")
    if not np.all(s > 0):
        raise ValueError(f"{name} entries must be positive: {s}")
    return s


def _block_coefficients(kind: ModelKind, T: float, mode: str) -> np.ndarray:
    if mode not in Q_MODES:
        raise ValueError(f"unknown q discretization {mode!r}; expected one of {Q_MODES}")
    if kind is ModelKind.CV:
        pos = T**3 / 3.0 if mode == "standard" else T**3 / 2.0
        return np.array([[pos, T**2 / 2.0],
                         [T**2 / 2.0, T]])
    pa = T**5 / 72.0 if mode == "literal" else T**5 / 30.0
    return np.array([
        [T**7 / 252.0, T**6 / 72.0, pa, T**4 / 24.0],
        [T**6 / 72.0, T**5 / 20.0, T**4 / 8.0, T**3 / 6.0],
        [pa, T**4 / 8.0, T**3 / 3.0, T**2 / 2.0],
        [T**4 / 24.0, T**3 / 6.0, T**2 / 2.0, T],
    ])


def q_basis(kind: ModelKind, T: float, mode: str = "default") -> np.ndarray:
    """Per-axis unit-variance process noise matrices, shape (3, n, n)."""
    _check_T(T)
    coef = _block_coefficients(kind, T, mode)
    nb = coef.shape[0]
    n = 3 * nb
    basis = np.zeros((3, n, n))
    for axis in range(3):
        idx = np.arange(nb) * 3 + axis
        basis[axis][np.ix_(idx, idx)] = coef
    return basis


def transition_matrix(kind: ModelKind, T: float) -> np.ndarray:
    _check_T(T)
    I3 = np.eye(3)
    if kind is ModelKind.CV:
        # velocity block is identity: the tabulated T*I would rescale velocity every step
        return np.block([[I3, T * I3], [np.zeros((3, 3)), I3]])
    F = np.eye(12)
    coeffs = (T, T**2 / 2.0, T**3 / 6.0)
    for row in range(4):
        for off, c in enumerate(coeffs, start=1):
            col = row + off
            if col < 4:
                F[3 * row:3 * row + 3, 3 * col:3 * col + 3] = c * I3
    return F


def observation_matrix(kind: ModelKind) -> np.ndarray:
    H = np.zeros((6, kind.state_dim))
    H[:, :6] = np.eye(6)
    return H


def process_noise(kind: ModelKind, T: float, sigma, mode: str = "default") -> np.ndarray:
    s = _check_sigma(sigma, 3, "sigma")
    return np.tensordot(s**2, q_basis(kind, T, mode), axes=1)


def build_cv(T: float, sigma_vw, mode: str = "default") -> StateSpace:
    _check_T(T)
    kind = ModelKind.CV
    return StateSpace(kind, transition_matrix(kind, T), process_noise(kind, T, sigma_vw, mode),
                      observation_matrix(kind), T)


def build_cj(T: float, sigma_jw, mode: str = "default") -> StateSpace:
    _check_T(T)
    kind = ModelKind.CJ
    return StateSpace(kind, transition_matrix(kind, T), process_noise(kind, T, sigma_jw, mode),
                      observation_matrix(kind), T)


def build_r(sigma_r) -> np.ndarray:
    s = _check_sigma(sigma_r, 6, "sigma_r")
    return np.diag(s**2)


DEFAULT_AUG_VAR = np.array([10.0, 10.0, 10.0, 10.0, 10.0, 10.0])


def lift_state(s: GaussianState, aug_var=DEFAULT_AUG_VAR) -> GaussianState:
    """Pad a 6-state CV estimate to the 12-state CJ layout."""
    if s.mean.shape[0] != 6:
        raise ValueError(f"lift_state expects a 6-dim state, got {s.mean.shape[0]}")
    aug_var = np.broadcast_to(np.asarray(aug_var, dtype=float), (6,))
    if not np.all(aug_var > 0):
        raise ValueError("augmentation variances must be positive")
    mean = np.concatenate([s.mean, np.zeros(6)])
    cov = np.zeros((12, 12))
    cov[:6, :6] = s.cov
    cov[6:, 6:] = np.diag(aug_var)
    return GaussianState(mean, cov, ModelKind.CJ)


def drop_state(s: GaussianState) -> GaussianState:
    """Truncate a 12-state CJ estimate to its position/velocity part."""
    if s.mean.shape[0] != 12:
        raise ValueError(f"drop_state expects a 12-dim state, got {s.mean.shape[0]}")
    return GaussianState(s.mean[:6].copy(), s.cov[:6, :6].copy(), ModelKind.CV)
