"""Synthetic maneuvering UAV tracks with distance-dependent ADS-B noise.

Truth is integrated in closed form piece by piece: constant-jerk
polynomial pieces (cruise, climb ramps, jerk bursts) and constant-rate
horizontal turns.  Observations add white Gaussian noise whose standard
deviation grows affinely with distance to the ground station:

    sigma_k = sigma0 * (1 + kappa * |p_k - gs|)

Randomness: one top-level seed is expanded with
``np.random.SeedSequence(seed).spawn(n)``; track ``i`` draws its script
from ``default_rng(child[i].spawn(2)[0])`` and its noise from
``default_rng(child[i].spawn(2)[1])``, and the split uses
``default_rng(seed)`` directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geo

SIG_DIGITS = 12


def quantize(a) -> np.ndarray:
    """Round to 12 significant digits, the precision written to track files."""
    a = np.asarray(a, dtype=float)
    flat = [float(f"{v:.{SIG_DIGITS}g}") for v in a.reshape(-1)]
    return np.array(flat, dtype=float).reshape(a.shape)


@dataclass(frozen=True)
class Segment:
    """One maneuver.

    kind: ``cruise``; ``turn`` (``rate`` deg/s, positive = clockwise);
    ``climb`` (ramp vertical speed to ``vz`` m/s); ``jerk`` (horizontal
    burst with peak jerk ``jerk`` m/s^3 along heading offset ``angle``
    deg, acceleration returns to zero at the end).
    """

    kind: str
    duration: float
    rate: float = 0.0
    vz: float = 0.0
    jerk: float = 0.0
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in ("cruise", "turn", "climb", "jerk"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")


@dataclass(frozen=True)
class SimConfig:
    T: float = 1.0
    steps: int = 600
    sigma0: tuple = (15.0, 15.0, 15.0, 1.5, 1.5, 1.5)
    kappa: float = 2e-4
    site_lat: float = 32.0
    site_lon: float = 118.8
    gs_height: float = 0.0
    max_turn_rate: float = 15.0
    max_climb: float = 10.0
    max_jerk: float = 0.5
    speed_range: tuple = (15.0, 30.0)
    start_radius: tuple = (1000.0, 4000.0)
    altitude_range: tuple = (300.0, 800.0)
    sharp_turn_at: float = 0.6
    script: tuple | None = None
    start: tuple | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if len(self.sigma0) != 6 or min(self.sigma0) <= 0:
            raise ValueError("sigma0 needs six positive entries")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")

    @property
    def projection(self) -> geo.ProjectionConfig:
        return geo.ProjectionConfig.for_longitude(self.site_lon)

    @property
    def gs_position(self) -> np.ndarray:
        x, y, _ = geo.project(self.site_lat, self.site_lon, 0.0, self.projection)
        return np.array([x, y, self.gs_height])

    def accel_bound(self) -> float:
        """Largest acceleration any scripted maneuver may produce."""
        vmax = self.speed_range[1] + self.max_climb
        return max(vmax * math.radians(self.max_turn_rate), 2.0 * self.max_climb / 4.0,
                   self.max_jerk * 8.0 / 2.0)


@dataclass
class Track:
    t: np.ndarray
    truth: np.ndarray
    obs: np.ndarray
    sigma: np.ndarray
    T: float
    name: str = ""
    turn_onset: float | None = None

    def __post_init__(self):
        n = self.t.shape[0]
        if not (self.truth.shape == (n, 6) and self.obs.shape == (n, 6) and self.sigma.shape == (n, 6)):
            raise ValueError("truth, observations and noise trace must have equal lengths")

    def __len__(self):
        return self.t.shape[0]


@dataclass
class Dataset:
    tracks: list
    split: dict = field(default_factory=dict)
    seed: int = 0
    config: SimConfig | None = None

    def subset(self, part: str) -> list:
        return [self.tracks[i] for i in self.split[part]]


# ------------------------------------------------------------------ truth

def _poly_piece(p, v, a, j, dur):
    return ("poly", p.copy(), v.copy(), a.copy(), np.asarray(j, float).copy(), dur)


def _eval_piece(piece, t):
    kind = piece[0]
    if kind == "poly":
        _, p0, v0, a0, j, _ = piece
        p = p0 + v0 * t + a0 * t**2 / 2.0 + j * t**3 / 6.0
        v = v0 + a0 * t + j * t**2 / 2.0
        a = a0 + j * t
        return p, v, a
    _, p0, speed, psi0, vz, omega, _ = piece
    psi = psi0 + omega * t
    if omega == 0.0:
        dx, dy = speed * math.sin(psi0) * t, speed * math.cos(psi0) * t
    else:
        dx = speed / omega * (math.cos(psi0) - math.cos(psi))
        dy = speed / omega * (math.sin(psi) - math.sin(psi0))
    p = p0 + np.array([dx, dy, vz * t])
    v = np.array([speed * math.sin(psi), speed * math.cos(psi), vz])
    a = np.array([speed * omega * math.cos(psi), -speed * omega * math.sin(psi), 0.0])
    return p, v, a


def _pieces_for(seg: Segment, p, v, a, cfg: SimConfig):
    """Expand a segment into closed-form pieces starting from (p, v, a)."""
    d = seg.duration
    if seg.kind == "cruise":
        return [_poly_piece(p, v, np.zeros(3), np.zeros(3), d)]
    if seg.kind == "turn":
        if abs(seg.rate) > cfg.max_turn_rate + 1e-12:
            raise ValueError(f"turn rate {seg.rate} exceeds limit {cfg.max_turn_rate} deg/s")
        speed = math.hypot(v[0], v[1])
        psi0 = math.atan2(v[0], v[1])
        return [("turn", p.copy(), speed, psi0, float(v[2]), math.radians(seg.rate), d)]
    if seg.kind == "climb":
        if abs(seg.vz) > cfg.max_climb + 1e-12:
            raise ValueError(f"climb rate {seg.vz} exceeds limit {cfg.max_climb} m/s")
        ramp = min(d, max(4.0, abs(seg.vz - v[2])))
        jz = 4.0 * (seg.vz - v[2]) / ramp**2
        j = np.array([0.0, 0.0, jz])
        pieces = [_poly_piece(p, v, np.zeros(3), j, ramp / 2.0)]
        p1, v1, a1 = _eval_piece(pieces[0], ramp / 2.0)
        pieces.append(_poly_piece(p1, v1, a1, -j, ramp / 2.0))
        p2, v2, _ = _eval_piece(pieces[1], ramp / 2.0)
        v2[2] = seg.vz
        if d > ramp:
            pieces.append(_poly_piece(p2, v2, np.zeros(3), np.zeros(3), d - ramp))
        return pieces
    if abs(seg.jerk) > cfg.max_jerk + 1e-12:
        raise ValueError(f"jerk {seg.jerk} exceeds limit {cfg.max_jerk} m/s^3")
    if d > 8.0:
        raise ValueError("jerk bursts are limited to 8 s")
    psi = math.atan2(v[0], v[1]) + math.radians(seg.angle)
    j = seg.jerk * np.array([math.sin(psi), math.cos(psi), 0.0])
    first = _poly_piece(p, v, np.zeros(3), j, d / 2.0)
    p1, v1, a1 = _eval_piece(first, d / 2.0)
    second = _poly_piece(p1, v1, a1, -j, d / 2.0)
    return [first, second]


def generate_truth(cfg: SimConfig, script=None, start=None) -> np.ndarray:
    """Sample the scripted trajectory at t = k*T; returns (steps, 6)."""
    script = script if script is not None else cfg.script
    start = start if start is not None else cfg.start
    if script is None or start is None:
        raise ValueError("generate_truth needs a maneuver script and a start state")
    total = cfg.steps * cfg.T
    if sum(s.duration for s in script) > total + 1e-9:
        raise ValueError(f"script lasts {sum(s.duration for s in script)} s but the track "
                         f"duration is {total} s")
    p = np.asarray(start[:3], dtype=float)
    v = np.asarray(start[3:6], dtype=float)
    a = np.zeros(3)
    pieces = []
    t0 = 0.0
    for seg in list(script) + [Segment("cruise", total + cfg.T)]:
        for piece in _pieces_for(seg, p, v, a, cfg):
            pieces.append((t0, piece))
            t0 += piece[-1]
            p, v, a = _eval_piece(piece, piece[-1])
            if piece[0] == "turn":
                a = np.zeros(3)
    out = np.zeros((cfg.steps, 6))
    idx = 0
    for k in range(cfg.steps):
        t = k * cfg.T
        while idx + 1 < len(pieces) and pieces[idx + 1][0] <= t:
            idx += 1
        start_t, piece = pieces[idx]
        pk, vk, _ = _eval_piece(piece, t - start_t)
        out[k, :3] = pk
        out[k, 3:] = vk
    return out


def random_script(cfg: SimConfig, rng: np.random.Generator):
    """Random start state and maneuver script that fills the track.

    Every script contains one sharp turn (90-180 deg at >= 10 deg/s)
    starting near ``sharp_turn_at`` of the track.
    """
    total = cfg.steps * cfg.T
    radius = rng.uniform(*cfg.start_radius)
    bearing = rng.uniform(0, 2 * math.pi)
    gs = cfg.gs_position
    speed = rng.uniform(*cfg.speed_range)
    heading = rng.uniform(0, 2 * math.pi)
    alt = rng.uniform(*cfg.altitude_range)
    start = (gs[0] + radius * math.sin(bearing), gs[1] + radius * math.cos(bearing), alt,
             speed * math.sin(heading), speed * math.cos(heading), 0.0)
    sharp_t = cfg.sharp_turn_at * total
    script = []
    t = 0.0
    sharp_done = False
    while t < total:
        if not sharp_done and t >= sharp_t - 60.0:
            lead = max(0.0, sharp_t - t)
            if lead > 0:
                script.append(Segment("cruise", lead))
                t += lead
            rate = rng.uniform(10.0, cfg.max_turn_rate) * rng.choice([-1.0, 1.0])
            angle = rng.uniform(90.0, 180.0)
            script.append(Segment("turn", angle / abs(rate), rate=rate))
            t += angle / abs(rate)
            sharp_done = True
            continue
        choice = rng.choice(["cruise", "turn", "climb", "jerk"], p=[0.35, 0.3, 0.2, 0.15])
        if choice == "cruise":
            seg = Segment("cruise", rng.uniform(20.0, 60.0))
        elif choice == "turn":
            rate = rng.uniform(3.0, cfg.max_turn_rate) * rng.choice([-1.0, 1.0])
            seg = Segment("turn", rng.uniform(30.0, 120.0) / abs(rate), rate=rate)
        elif choice == "climb":
            # climb or descend towards the middle of the altitude band, then level off
            mid = 0.5 * sum(cfg.altitude_range)
            sign = 1.0 if alt < mid else -1.0
            target = sign * rng.uniform(1.0, 5.0)
            dur = rng.uniform(15.0, 40.0)
            script.append(Segment("climb", dur, vz=target))
            alt += target * dur
            t += dur
            seg = Segment("climb", 8.0, vz=0.0)
        else:
            seg = Segment("jerk", rng.uniform(4.0, 6.0), jerk=rng.uniform(0.2, cfg.max_jerk),
                          angle=rng.uniform(60.0, 120.0) * rng.choice([-1.0, 1.0]))
        script.append(seg)
        t += seg.duration
    # trim so the script fits the track exactly
    trimmed = []
    t = 0.0
    for seg in script:
        if t + seg.duration > total:
            if seg.kind in ("cruise", "turn") and total - t > 1e-9:
                trimmed.append(Segment(seg.kind, total - t, rate=seg.rate))
            break
        trimmed.append(seg)
        t += seg.duration
    return start, tuple(trimmed)


# ------------------------------------------------------------------ noise

def noise_scale(truth, cfg: SimConfig) -> np.ndarray:
    dist = np.linalg.norm(np.asarray(truth)[:, :3] - cfg.gs_position, axis=1)
    return np.asarray(cfg.sigma0)[None, :] * (1.0 + cfg.kappa * dist)[:, None]


def observe(truth, cfg: SimConfig, rng: np.random.Generator):
    """Noisy observations and the per-step noise standard deviations."""
    truth = np.asarray(truth, dtype=float)
    sigma = noise_scale(truth, cfg)
    obs = truth + sigma * rng.standard_normal(truth.shape)
    return obs, sigma


def sharp_turn_onset(script, min_angle: float = 90.0, min_rate: float = 10.0) -> float | None:
    """Start time of the first turn of at least ``min_angle`` deg at ``min_rate`` deg/s or faster."""
    t = 0.0
    for seg in script:
        if seg.kind == "turn" and abs(seg.rate) >= min_rate and abs(seg.rate) * seg.duration >= min_angle - 1e-9:
            return t
        t += seg.duration
    return None


def make_track(cfg: SimConfig, seed_seq: np.random.SeedSequence, name: str = "") -> Track:
    script_ss, noise_ss = seed_seq.spawn(2)
    if cfg.script is not None and cfg.start is not None:
        start, script = cfg.start, cfg.script
    else:
        start, script = random_script(cfg, np.random.default_rng(script_ss))
    truth = generate_truth(cfg, script, start)
    obs, sigma = observe(truth, cfg, np.random.default_rng(noise_ss))
    t = np.arange(cfg.steps) * cfg.T
    onset = sharp_turn_onset(script)
    return Track(quantize(t), quantize(truth), quantize(obs), quantize(sigma), cfg.T, name,
                 None if onset is None else float(quantize(onset)))


def split_sizes(n: int) -> tuple[int, int, int]:
    """(train, val, test) sizes: 70/20/10 rounded, at least one val and one test track."""
    if n < 3:
        raise ValueError(f"need at least 3 tracks for a train/val/test split, got {n}")
    n_test = max(1, int(math.floor(0.1 * n + 0.5)))
    n_val = max(1, int(math.floor(0.2 * n + 0.5)))
    return n - n_val - n_test, n_val, n_test


def build_dataset(n_tracks: int, cfg: SimConfig, seed: int) -> Dataset:
    n_train, n_val, n_test = split_sizes(n_tracks)
    children = np.random.SeedSequence(seed).spawn(n_tracks)
    tracks = [make_track(cfg, children[i], name=f"track_{i:03d}") for i in range(n_tracks)]
    perm = np.random.default_rng(seed).permutation(n_tracks)
    split = {"train": sorted(int(i) for i in perm[:n_train]),
             "val": sorted(int(i) for i in perm[n_train:n_train + n_val]),
             "test": sorted(int(i) for i in perm[n_train + n_val:])}
    return Dataset(tracks, split, seed, cfg)


def geodetic_records(track: Track, proj: geo.ProjectionConfig) -> list:
    """Observations rendered as geodetic ADS-B records."""
    return [geo.observation_to_record(float(t), o, proj) for t, o in zip(track.t, track.obs)]
