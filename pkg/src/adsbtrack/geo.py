"""Geodetic ADS-B records to local Cartesian observations.

Positions go through a Gauss-Krueger (transverse Mercator, unit scale on
the central meridian) projection evaluated with the Krueger n-series to
sixth order; truncation error is below a micrometre inside a 6 degree
zone.  Velocities are split into east/north/up components using the
heading (clockwise from north) and pitch (positive up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
ZONE_HALF_WIDTH_DEG = 6.0


@dataclass(frozen=True)
class ProjectionConfig:
    central_meridian: float = 0.0
    false_easting: float = 0.0
    a: float = WGS84_A
    f: float = WGS84_F

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"semi-major axis must be positive, got {self.a}")
        if not 0 < self.f < 1:
            raise ValueError(f"flattening must lie in (0, 1), got {self.f}")

    @classmethod
    def for_longitude(cls, lon: float, **kwargs) -> "ProjectionConfig":
        """Config centred on ``lon`` rounded to the nearest whole degree."""
        return cls(central_meridian=float(round(lon)), **kwargs)


@dataclass(frozen=True)
class AdsbRecord:
    t: float
    lon: float
    lat: float
    alt: float
    v: float
    psi: float
    theta: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if self.v < 0:
            raise ValueError(f"speed must be non-negative, got {self.v}")
        if not -math.pi / 2 <= self.theta <= math.pi / 2:
            raise ValueError(f"pitch {self.theta} outside [-pi/2, pi/2]")


@dataclass(frozen=True)
class Observation:
    t: float
    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.vx, self.vy, self.vz])


class _Series:
    """Ellipsoid-dependent constants of the Krueger series."""

    def __init__(self, a: float, f: float):
        n = f / (2.0 - f)
        self.e2 = f * (2.0 - f)
        self.e = math.sqrt(self.e2)
        n2, n3, n4, n5, n6 = n**2, n**3, n**4, n**5, n**6
        self.A = a / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0)
        self.alpha = np.array([
            n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 + 7891 * n6 / 37800,
            13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 - 1983433 * n6 / 1935360,
            61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
            49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
            34729 * n5 / 80640 - 3418889 * n6 / 1995840,
            212378941 * n6 / 319334400,
        ])
        self.beta = np.array([
            n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800,
            n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
            17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
            4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
            4583 * n5 / 161280 - 108847 * n6 / 3991680,
            20648693 * n6 / 638668800,
        ])
        self.j2 = 2.0 * np.arange(1, 7)


_SERIES_CACHE: dict[tuple[float, float], _Series] = {}


def _series(cfg: ProjectionConfig) -> _Series:
    key = (cfg.a, cfg.f)
    if key not in _SERIES_CACHE:
        _SERIES_CACHE[key] = _Series(cfg.a, cfg.f)
    return _SERIES_CACHE[key]


def _check_zone(dlon, cfg: ProjectionConfig):
    bad = np.abs(dlon) >= ZONE_HALF_WIDTH_DEG
    if np.any(bad):
        worst = float(np.max(np.abs(dlon)))
        raise ValueError(
            f"longitude offset {worst:.6f} deg from central meridian "
            f"{cfg.central_meridian} is outside the zone bound of "
            f"+/-{ZONE_HALF_WIDTH_DEG} deg")


def project(lat, lon, alt, cfg: ProjectionConfig):
    """Forward projection; returns (easting, northing, height).

    Accepts scalars or arrays.  ``alt`` is passed through unchanged.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    dlon = lon - cfg.central_meridian
    _check_zone(dlon, cfg)
    if np.any(np.abs(lat) > 90.0):
        raise ValueError("latitude outside [-90, 90]")
    s = _series(cfg)
    phi = np.radians(lat)
    lam = np.radians(dlon)
    sphi = np.sin(phi)
    # conformal latitude as tan(chi)
    tau = np.tan(phi)
    sig = np.sinh(s.e * np.arctanh(s.e * sphi))
    taup = tau * np.sqrt(1.0 + sig**2) - sig * np.sqrt(1.0 + tau**2)
    xip = np.arctan2(taup, np.cos(lam))
    etap = np.arcsinh(np.sin(lam) / np.hypot(taup, np.cos(lam)))
    xi_terms = np.sin(np.multiply.outer(s.j2, xip)) * np.cosh(np.multiply.outer(s.j2, etap))
    eta_terms = np.cos(np.multiply.outer(s.j2, xip)) * np.sinh(np.multiply.outer(s.j2, etap))
    xi = xip + np.tensordot(s.alpha, xi_terms, axes=1)
    eta = etap + np.tensordot(s.alpha, eta_terms, axes=1)
    x = cfg.false_easting + s.A * eta
    y = s.A * xi
    z = np.asarray(alt, dtype=float)
    return _unwrap(x), _unwrap(y), _unwrap(z)


def unproject(x, y, cfg: ProjectionConfig):
    """Inverse projection; returns (lat, lon) in degrees."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("unproject requires finite coordinates")
    s = _series(cfg)
    xi = y / s.A
    eta = (x - cfg.false_easting) / s.A
    xip = xi - np.tensordot(
        s.beta, np.sin(np.multiply.outer(s.j2, xi)) * np.cosh(np.multiply.outer(s.j2, eta)), axes=1)
    etap = eta - np.tensordot(
        s.beta, np.cos(np.multiply.outer(s.j2, xi)) * np.sinh(np.multiply.outer(s.j2, eta)), axes=1)
    sxip = np.sin(xip)
    cxip = np.cos(xip)
    shetap = np.sinh(etap)
    taup = sxip / np.hypot(shetap, cxip)
    lam = np.arctan2(shetap, cxip)
    tau = _tau_from_taup(taup, s.e, s.e2)
    lat = np.degrees(np.arctan(tau))
    lon = cfg.central_meridian + np.degrees(lam)
    return _unwrap(lat), _unwrap(lon)


def _tau_from_taup(taup, e, e2):
    # Newton iteration on tan(phi) given tan(conformal latitude)
    tau = np.array(taup, dtype=float)
    e2m = 1.0 - e2
    for _ in range(8):
        sig = np.sinh(e * np.arctanh(e * tau / np.sqrt(1.0 + tau**2)))
        taupa = tau * np.sqrt(1.0 + sig**2) - sig * np.sqrt(1.0 + tau**2)
        dtau = ((taup - taupa) / np.sqrt(1.0 + taupa**2)
                * (1.0 + e2m * tau**2) / (e2m * np.sqrt(1.0 + tau**2)))
        tau = tau + dtau
        if np.all(np.abs(dtau) <= 1e-15 * np.maximum(1.0, np.abs(tau))):
            break
    return tau


def _unwrap(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def decompose_velocity(v, psi, theta):
    """Split speed into (east, north, up) components."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("speed must be non-negative")
    ct = np.cos(theta)
    vx = v * ct * np.sin(psi)
    vy = v * ct * np.cos(psi)
    vz = v * np.sin(theta)
    return _unwrap(vx), _unwrap(vy), _unwrap(vz)


def compose_velocity(vx, vy, vz):
    """Inverse of :func:`decompose_velocity`: (speed, heading, pitch)."""
    vx, vy, vz = (np.asarray(c, dtype=float) for c in (vx, vy, vz))
    horiz = np.hypot(vx, vy)
    v = np.sqrt(horiz**2 + vz**2)
    psi = np.mod(np.arctan2(vx, vy), 2 * np.pi)
    theta = np.arctan2(vz, horiz)
    return _unwrap(v), _unwrap(psi), _unwrap(theta)


def to_observation(rec: AdsbRecord, cfg: ProjectionConfig) -> Observation:
    x, y, z = project(rec.lat, rec.lon, rec.alt, cfg)
    vx, vy, vz = decompose_velocity(rec.v, rec.psi, rec.theta)
    return Observation(rec.t, x, y, z, vx, vy, vz)


def records_to_array(records, cfg: ProjectionConfig) -> np.ndarray:
    """Vectorised :func:`to_observation` over a sequence; returns (N, 6)."""
    cols = np.array([[r.lat, r.lon, r.alt, r.v, r.psi, r.theta] for r in records], dtype=float)
    x, y, z = project(cols[:, 0], cols[:, 1], cols[:, 2], cfg)
    vx, vy, vz = decompose_velocity(cols[:, 3], cols[:, 4], cols[:, 5])
    return np.column_stack([x, y, z, vx, vy, vz])


def observation_to_record(t: float, state, cfg: ProjectionConfig) -> AdsbRecord:
    """Render a local (x, y, z, vx, vy, vz) vector as a geodetic record.

    The heading is measured from grid north of the projection, so the
    pair observation_to_record / to_observation round-trips exactly.
    """
    x, y, z, vx, vy, vz = (float(c) for c in state)
    lat, lon = unproject(x, y, cfg)
    v, psi, theta = compose_velocity(vx, vy, vz)
    return AdsbRecord(t=t, lon=lon, lat=lat, alt=z, v=v, psi=psi, theta=theta)
