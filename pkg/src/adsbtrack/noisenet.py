"""Recurrent noise-scale network: LSTM cell -> FC -> PReLU -> three tanh heads.

The heads emit 3 + 3 + 6 values in (-1, 1) which :func:`map_params` turns
into CV velocity-noise, CJ jerk-noise and observation standard deviations.
Forward and backward passes are hand-written numpy; the parameter blocks
live as views into one flat vector so optimisers can work on ``flat``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .models import NoiseBounds, NoiseParams

INPUT_DIM = 6
BLOCK_ORDER = ("W_ih", "W_hh", "b", "W_fc", "b_fc", "prelu",
               "W_cv", "b_cv", "W_cj", "b_cj", "W_r", "b_r")
CHECKPOINT_MAGIC = b"ADSBTRACK-NET\n"
CHECKPOINT_VERSION = 1


def block_shapes(h: int, d: int) -> dict[str, tuple[int, ...]]:
    return {
        "W_ih": (4 * h, INPUT_DIM), "W_hh": (4 * h, h), "b": (4 * h,),
        "W_fc": (d, h), "b_fc": (d,), "prelu": (1,),
        "W_cv": (3, d), "b_cv": (3,), "W_cj": (3, d), "b_cj": (3,),
        "W_r": (6, d), "b_r": (6,),
    }


class NetworkParams:
    """All weights of the network, stored contiguously in ``flat``.

    Gate rows of the LSTM blocks are ordered (input, forget, cell, output).
    """

    def __init__(self, hidden: int, trunk: int, flat=None, bounds: NoiseBounds | None = None,
                 input_scale=None, initial=None):
        self.hidden = int(hidden)
        self.trunk = int(trunk)
        self.shapes = block_shapes(self.hidden, self.trunk)
        size = sum(int(np.prod(s)) for s in self.shapes.values())
        if flat is None:
            flat = np.zeros(size)
        flat = np.array(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ValueError(f"expected {size} parameters for (h={hidden}, d={trunk}), got {flat.shape}")
        if not np.all(np.isfinite(flat)):
            raise ValueError("network parameters must be finite")
        self.flat = flat
        self.bounds = bounds or NoiseBounds()
        self.input_scale = np.ones(INPUT_DIM) if input_scale is None else np.asarray(input_scale, float)
        # noise scales for the first window of a track, before the network has run
        self.initial = None if initial is None else np.asarray(initial, float).copy()
        self.blocks: dict[str, np.ndarray] = {}
        off = 0
        for name in BLOCK_ORDER:
            n = int(np.prod(self.shapes[name]))
            self.blocks[name] = self.flat[off:off + n].reshape(self.shapes[name])
            off += n

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    @property
    def size(self) -> int:
        return self.flat.shape[0]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.hidden, self.trunk, self.flat.copy(), self.bounds, self.input_scale.copy(),
                             self.initial)

    def zeros_like(self) -> np.ndarray:
        return np.zeros_like(self.flat)


def init_params(hidden: int, trunk: int, rng: np.random.Generator, bounds: NoiseBounds | None = None,
                target: NoiseParams | None = None, input_scale=None) -> NetworkParams:
    """Uniform(+-1/sqrt(fan_in)) weights, forget-gate bias 1, PReLU slope 0.25.

    With ``target`` the head biases are set so the first step on a zero
    residual maps to those noise scales.
    """
    p = NetworkParams(hidden, trunk, bounds=bounds, input_scale=input_scale,
                      initial=None if target is None else target.as_vector())
    fan_in = {"W_ih": INPUT_DIM + hidden, "W_hh": INPUT_DIM + hidden, "b": INPUT_DIM + hidden,
              "W_fc": hidden, "b_fc": hidden, "W_cv": trunk, "b_cv": trunk,
              "W_cj": trunk, "b_cj": trunk, "W_r": trunk, "b_r": trunk}
    for name in BLOCK_ORDER:
        if name == "prelu":
            continue
        k = 1.0 / np.sqrt(fan_in[name])
        p[name][...] = rng.uniform(-k, k, size=p.shapes[name])
    p["b"][hidden:2 * hidden] = 1.0
    p["prelu"][0] = 0.25
    if target is not None:
        # bias the heads so a zero residual on a fresh carry emits exactly ``target``
        raw = np.arctanh(unmap_params(target, p.bounds))
        h0 = lstm_step(LstmCarry.zeros(hidden), np.zeros(INPUT_DIM), p).h
        z0 = p["W_fc"] @ h0 + p["b_fc"]
        a0 = np.where(z0 > 0, z0, p["prelu"][0] * z0)
        p["b_cv"][...] = raw[0:3] - p["W_cv"] @ a0
        p["b_cj"][...] = raw[3:6] - p["W_cj"] @ a0
        p["b_r"][...] = raw[6:12] - p["W_r"] @ a0
    return p


def frozen_params(hidden: int, trunk: int, target: NoiseParams, bounds: NoiseBounds | None = None) -> NetworkParams:
    """Network whose heads ignore their input and always emit ``target`` (up to rounding).

    ``initial`` is set to the emitted values so every window of a track
    runs under the same scales.
    """
    p = NetworkParams(hidden, trunk, bounds=bounds, initial=target.as_vector())
    raw = unmap_params(target, p.bounds)
    p["b_cv"][...] = np.arctanh(raw[0:3])
    p["b_cj"][...] = np.arctanh(raw[3:6])
    p["b_r"][...] = np.arctanh(raw[6:12])
    # the heads reproduce ``target`` only up to rounding; start from exactly what they emit
    p.initial = map_params(np.tanh(np.concatenate([p["b_cv"], p["b_cj"], p["b_r"]])), p.bounds)
    return p


def map_params(raw, bounds: NoiseBounds) -> np.ndarray:
    """Log-space map from (-1, 1) to [lo, hi]: lo * (hi/lo)**((raw+1)/2)."""
    lo, hi = bounds.per_param()
    raw = np.asarray(raw, dtype=float)
    return lo * (hi / lo) ** ((raw + 1.0) / 2.0)


def unmap_params(params: NoiseParams, bounds: NoiseBounds) -> np.ndarray:
    lo, hi = bounds.per_param()
    v = params.as_vector()
    if np.any(v <= lo) or np.any(v >= hi):
        raise ValueError("noise scales must lie strictly inside the configured bounds")
    return 2.0 * np.log(v / lo) / np.log(hi / lo) - 1.0


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmCarry:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "LstmCarry":
        return cls(np.zeros(hidden), np.zeros(hidden))


@dataclass
class HeadOutput:
    raw: np.ndarray
    mapped: NoiseParams


def input_features(delta, scale) -> np.ndarray:
    """Signed log compression of residuals: sign(d) * log1p(|d| / scale)."""
    delta = np.asarray(delta, dtype=float)
    return np.sign(delta) * np.log1p(np.abs(delta) / scale)


def _lstm_gates(carry: LstmCarry, x, p: NetworkParams):
    h = p.hidden
    z = p["W_ih"] @ x + p["W_hh"] @ carry.h + p["b"]
    i = _sigmoid(z[:h])
    f = _sigmoid(z[h:2 * h])
    g = np.tanh(z[2 * h:3 * h])
    o = _sigmoid(z[3 * h:])
    c = f * carry.c + i * g
    tc = np.tanh(c)
    return LstmCarry(o * tc, c), (i, f, g, o, tc)


def lstm_step(carry: LstmCarry, x, p: NetworkParams) -> LstmCarry:
    return _lstm_gates(carry, np.asarray(x, dtype=float), p)[0]


@dataclass
class ForwardCache:
    xs: np.ndarray
    carries: list
    gates: list
    z: np.ndarray
    a: np.ndarray
    raw: np.ndarray
    sigma: np.ndarray


def forward(carry: LstmCarry, deltas, p: NetworkParams, features: bool = True):
    """Run one window of residuals through the network.

    ``deltas`` has shape (steps, 6).  Returns (HeadOutput, new carry,
    cache for :func:`backward`).  With ``features=False`` the rows are fed
    to the LSTM unchanged.
    """
    deltas = np.atleast_2d(np.asarray(deltas, dtype=float))
    if deltas.shape[0] == 0:
        raise ValueError("forward needs at least one input step")
    xs = input_features(deltas, p.input_scale) if features else deltas
    carries = [carry]
    gates = []
    for x in xs:
        carry, gt = _lstm_gates(carry, x, p)
        carries.append(carry)
        gates.append(gt)
    z = p["W_fc"] @ carry.h + p["b_fc"]
    a = np.where(z > 0, z, p["prelu"][0] * z)
    u = np.concatenate([p["W_cv"] @ a + p["b_cv"], p["W_cj"] @ a + p["b_cj"], p["W_r"] @ a + p["b_r"]])
    raw = np.tanh(u)
    sigma = map_params(raw, p.bounds)
    out = HeadOutput(raw, NoiseParams.from_vector(sigma))
    return out, carry, ForwardCache(xs, carries, gates, z, a, raw, sigma)


def backward(cache: ForwardCache, g_sigma, p: NetworkParams) -> np.ndarray:
    """Gradient of a scalar w.r.t. ``p.flat`` given its gradient w.r.t. the 12 noise scales.

    The carry entering the window is treated as a constant.
    """
    grad = NetworkParams(p.hidden, p.trunk)
    h = p.hidden
    lo, hi = p.bounds.per_param()
    g_raw = np.asarray(g_sigma, dtype=float) * cache.sigma * 0.5 * np.log(hi / lo)
    g_u = g_raw * (1.0 - cache.raw**2)
    a = cache.a
    g_a = np.zeros_like(a)
    for name_w, name_b, sl in (("W_cv", "b_cv", slice(0, 3)), ("W_cj", "b_cj", slice(3, 6)),
                               ("W_r", "b_r", slice(6, 12))):
        gu = g_u[sl]
        grad[name_w][...] = np.outer(gu, a)
        grad[name_b][...] = gu
        g_a += p[name_w].T @ gu
    z = cache.z
    slope = p["prelu"][0]
    g_z = np.where(z > 0, g_a, slope * g_a)
    grad["prelu"][0] = np.sum(np.where(z > 0, 0.0, z) * g_a)
    h_last = cache.carries[-1].h
    grad["W_fc"][...] = np.outer(g_z, h_last)
    grad["b_fc"][...] = g_z
    g_h = p["W_fc"].T @ g_z
    g_c = np.zeros(h)
    W_ih, W_hh, b = grad["W_ih"], grad["W_hh"], grad["b"]
    for t in range(len(cache.gates) - 1, -1, -1):
        i, f, g, o, tc = cache.gates[t]
        prev = cache.carries[t]
        g_o = g_h * tc
        g_c = g_c + g_h * o * (1.0 - tc**2)
        dz = np.concatenate([
            g_c * g * i * (1.0 - i),
            g_c * prev.c * f * (1.0 - f),
            g_c * i * (1.0 - g**2),
            g_o * o * (1.0 - o),
        ])
        W_ih += np.outer(dz, cache.xs[t])
        W_hh += np.outer(dz, prev.h)
        b += dz
        g_h = p["W_hh"].T @ dz
        g_c = g_c * f
    return grad.flat


def l1_norm(p: NetworkParams) -> float:
    return float(np.sum(np.abs(p.flat)))


# ---------------------------------------------------------------- checkpoints

def _header(p: NetworkParams) -> dict:
    return {
        "format": CHECKPOINT_VERSION,
        "input_dim": INPUT_DIM,
        "hidden": p.hidden,
        "trunk": p.trunk,
        "blocks": [[name, list(p.shapes[name])] for name in BLOCK_ORDER],
        "bounds": {"vw": list(p.bounds.vw), "jw": list(p.bounds.jw),
                   "r_pos": list(p.bounds.r_pos), "r_vel": list(p.bounds.r_vel)},
        "input_scale": [float(v) for v in p.input_scale],
        "initial": None if p.initial is None else [float(v) for v in p.initial],
    }


def dumps(p: NetworkParams) -> bytes:
    """Serialise to: magic line, one JSON header line, little-endian float64 blocks."""
    header = json.dumps(_header(p), sort_keys=True).encode()
    return CHECKPOINT_MAGIC + header + b"\n" + p.flat.astype("<f8").tobytes()


def loads(data: bytes, expect_hidden: int | None = None, expect_trunk: int | None = None) -> NetworkParams:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a network checkpoint (bad magic)")
    rest = data[len(CHECKPOINT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    if header.get("format") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format {header.get('format')}")
    if header.get("input_dim") != INPUT_DIM:
        raise ValueError(f"checkpoint input size {header.get('input_dim')} != {INPUT_DIM}")
    h, d = int(header["hidden"]), int(header["trunk"])
    if expect_hidden is not None and h != expect_hidden:
        raise ValueError(f"checkpoint hidden size {h} != expected {expect_hidden}")
    if expect_trunk is not None and d != expect_trunk:
        raise ValueError(f"checkpoint trunk size {d} != expected {expect_trunk}")
    shapes = block_shapes(h, d)
    declared = [(name, tuple(shape)) for name, shape in header["blocks"]]
    if declared != [(name, shapes[name]) for name in BLOCK_ORDER]:
        raise ValueError("checkpoint block layout does not match (6, h, d) network shape")
    flat = np.frombuffer(rest[nl + 1:], dtype="<f8").astype(np.float64)
    b = header["bounds"]
    bounds = NoiseBounds(tuple(b["vw"]), tuple(b["jw"]), tuple(b["r_pos"]), tuple(b["r_vel"]))
    initial = header.get("initial")
    if initial is not None and len(initial) != 12:
        raise ValueError("checkpoint initial noise scales must have 12 entries")
    return NetworkParams(h, d, flat, bounds, header["input_scale"], initial)


def save(p: NetworkParams, path) -> None:
    from .io import atomic_write_bytes
    atomic_write_bytes(path, dumps(p))


def load(path, **kwargs) -> NetworkParams:
    with open(path, "rb") as fh:
        return loads(fh.read(), **kwargs)


def digest(p: NetworkParams) -> str:
    return hashlib.sha256(dumps(p)).hexdigest()[:16]
