"""Run configuration: one YAML file covering simulation, filter, network and training.

Unknown keys and invalid values are reported as ``file:line: message``
using the YAML node positions.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .imm import ImmConfig
from .models import Q_MODES, NoiseBounds, NoiseParams
from .sim import SimConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; the message carries the file position when known."""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    n_tracks: int = 10
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    calibrate_initial: bool = True
    geodetic_input: bool = False

    @property
    def imm(self) -> ImmConfig:
        return self.train.imm

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return dataclasses.replace(self, seed=seed, train=dataclasses.replace(self.train, seed=seed))

    def as_dict(self) -> dict:
        t = self.train
        s = self.sim
        return {
            "seed": self.seed,
            "simulation": {
                "n_tracks": self.n_tracks, "T": s.T, "steps": s.steps, "sigma0": list(s.sigma0),
                "kappa": s.kappa, "site_lat": s.site_lat, "site_lon": s.site_lon, "gs_height": s.gs_height,
                "max_turn_rate": s.max_turn_rate, "max_climb": s.max_climb, "max_jerk": s.max_jerk,
                "speed_range": list(s.speed_range), "start_radius": list(s.start_radius),
                "altitude_range": list(s.altitude_range), "sharp_turn_at": s.sharp_turn_at,
            },
            "models": {"q_mode": t.imm.q_mode},
            "imm": {"lam": [list(r) for r in t.imm.lam], "initial_mu": list(t.imm.initial_mu),
                    "aug_var": list(t.imm.aug_var), "joseph": t.imm.joseph},
            "network": {"hidden": t.hidden, "trunk": t.trunk, "input_scale": list(t.input_scale),
                        "bounds": {k: list(getattr(t.bounds, k)) for k in ("vw", "jw", "r_pos", "r_vel")}},
            "training": {"window": t.window, "epochs": t.epochs, "lr": t.lr, "momentum": t.momentum,
                         "l1_weight": t.l1_weight, "clip_norm": t.clip_norm, "update_every": t.update_every,
                         "calibrate_initial": self.calibrate_initial},
            "noise": {"initial": [float(v) for v in t.initial.as_vector()]},
            "filter": {"geodetic_input": self.geodetic_input},
        }

    def digest(self) -> str:
        from .io import config_digest
        return config_digest(self.as_dict())


# ---------------------------------------------------------------- schema

_NUM = (int, float)
_SCHEMA = {
    "seed": int,
    "simulation": {
        "n_tracks": int, "T": _NUM, "steps": int, "sigma0": [6], "kappa": _NUM, "site_lat": _NUM,
        "site_lon": _NUM, "gs_height": _NUM, "max_turn_rate": _NUM, "max_climb": _NUM, "max_jerk": _NUM,
        "speed_range": [2], "start_radius": [2], "altitude_range": [2], "sharp_turn_at": _NUM,
    },
    "models": {"q_mode": str},
    "imm": {"lam": [[2], [2]], "initial_mu": [2], "aug_var": _NUM, "joseph": bool},
    "network": {"hidden": int, "trunk": int, "input_scale": [6],
                "bounds": {"vw": [2], "jw": [2], "r_pos": [2], "r_vel": [2]}},
    "training": {"window": int, "epochs": int, "lr": _NUM, "momentum": _NUM, "l1_weight": _NUM,
                 "clip_norm": _NUM, "update_every": int, "calibrate_initial": bool},
    "noise": {"initial": "noise"},
    "filter": {"geodetic_input": bool},
}


def _where(path, node) -> str:
    return f"{path}:{node.start_mark.line + 1}"


def _scalar(path, node, kind, key):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{_where(path, node)}: {key} must be a scalar")
    value = yaml.safe_load(node.value) if node.tag != "tag:yaml.org,2002:str" else node.value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{_where(path, node)}: {key} must be true or false, got {node.value!r}")
        return value
    if kind is str:
        return str(node.value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{_where(path, node)}: {key} must be an integer, got {node.value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        # PyYAML reads 1e-3 (no dot) as a string
        try:
            return float(node.value)
        except ValueError:
            raise ConfigError(f"{_where(path, node)}: {key} must be a number, got {node.value!r}") from None
    return float(value)


def _numbers(path, node, shape, key):
    if not isinstance(node, yaml.SequenceNode):
        raise ConfigError(f"{_where(path, node)}: {key} must be a list")
    if isinstance(shape[0], list):
        if len(node.value) != len(shape):
            raise ConfigError(f"{_where(path, node)}: {key} must have {len(shape)} rows")
        return [_numbers(path, n, s, key) for n, s in zip(node.value, shape)]
    if len(node.value) != shape[0]:
        raise ConfigError(f"{_where(path, node)}: {key} must have {shape[0]} entries, got {len(node.value)}")
    return [_scalar(path, n, _NUM, key) for n in node.value]


def _noise(path, node, key):
    if isinstance(node, yaml.MappingNode):
        vals = {}
        for k, v in node.value:
            if k.value not in ("vw", "jw", "r_pos", "r_vel"):
                raise ConfigError(f"{_where(path, k)}: unknown key {key}.{k.value}")
            vals[k.value] = _scalar(path, v, _NUM, f"{key}.{k.value}")
        missing = {"vw", "jw", "r_pos", "r_vel"} - set(vals)
        if missing:
            raise ConfigError(f"{_where(path, node)}: {key} is missing {sorted(missing)}")
        return NoiseParams.isotropic(vals["vw"], vals["jw"], vals["r_pos"], vals["r_vel"]).as_vector().tolist()
    return _numbers(path, node, [12], key)


def _walk(path, node, schema, prefix=""):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(path, node)}: {prefix or 'config'} must be a mapping")
    out = {}
    for knode, vnode in node.value:
        key = knode.value
        name = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"{_where(path, knode)}: unknown key {name!r}")
        if key in out:
            raise ConfigError(f"{_where(path, knode)}: duplicate key {name!r}")
        spec = schema[key]
        if isinstance(spec, dict):
            out[key] = _walk(path, vnode, spec, name + ".")
        elif isinstance(spec, list):
            out[key] = _numbers(path, vnode, spec, name)
        elif spec == "noise":
            out[key] = _noise(path, vnode, name)
        elif key == "aug_var" and isinstance(vnode, yaml.SequenceNode):
            out[key] = _numbers(path, vnode, [6], name)
        else:
            out[key] = _scalar(path, vnode, spec, name)
        out[f"@{key}"] = _where(path, knode)
    return out


def _build(raw: dict, path) -> RunConfig:
    base = RunConfig()

    def section(name):
        return raw.get(name, {})

    def at(sec, key):
        return sec.get(f"@{key}", str(path))

    def attempt(where, fn):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None

    sim_raw = section("simulation")
    sim_kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in sim_raw.items()
              if not k.startswith("@") and k != "n_tracks"}
    sim_cfg = attempt(at(raw, "simulation"), lambda: dataclasses.replace(base.sim, **sim_kw))
    n_tracks = sim_raw.get("n_tracks", base.n_tracks)
    if n_tracks < 3:
        raise ConfigError(f"{at(sim_raw, 'n_tracks')}: need at least 3 tracks for a train/val/test split, "
                          f"got {n_tracks}")

    q_mode = section("models").get("q_mode", base.imm.q_mode)
    if q_mode not in Q_MODES:
        raise ConfigError(f"{at(section('models'), 'q_mode')}: q_mode must be one of {Q_MODES}, got {q_mode!r}")
    imm_raw = section("imm")
    imm_kw = {"q_mode": q_mode}
    if "lam" in imm_raw:
        imm_kw["lam"] = tuple(tuple(r) for r in imm_raw["lam"])
    if "initial_mu" in imm_raw:
        imm_kw["initial_mu"] = tuple(imm_raw["initial_mu"])
    if "aug_var" in imm_raw:
        av = imm_raw["aug_var"]
        imm_kw["aug_var"] = tuple(av) if isinstance(av, list) else (float(av),) * 6
    if "joseph" in imm_raw:
        imm_kw["joseph"] = imm_raw["joseph"]
    imm_cfg = attempt(at(raw, "imm"), lambda: dataclasses.replace(base.imm, **imm_kw))

    net_raw = section("network")
    tr_raw = section("training")
    checks = {"window": (lambda v: v >= 1, ">= 1"), "epochs": (lambda v: v >= 0, ">= 0"),
              "lr": (lambda v: v >= 0, ">= 0"), "update_every": (lambda v: v >= 1, ">= 1"),
              "clip_norm": (lambda v: v > 0, "> 0"), "l1_weight": (lambda v: v >= 0, ">= 0"),
              "momentum": (lambda v: 0 <= v < 1, "in [0, 1)")}
    for key, (ok, rule) in checks.items():
        if key in tr_raw and not ok(tr_raw[key]):
            raise ConfigError(f"{at(tr_raw, key)}: training.{key} must be {rule}, got {tr_raw[key]}")
    tr_kw = {k: v for k, v in tr_raw.items() if not k.startswith("@") and k != "calibrate_initial"}
    for k in ("hidden", "trunk"):
        if k in net_raw:
            tr_kw[k] = net_raw[k]
    if "input_scale" in net_raw:
        tr_kw["input_scale"] = tuple(net_raw["input_scale"])
    if "bounds" in net_raw:
        b = {k: tuple(v) for k, v in net_raw["bounds"].items() if not k.startswith("@")}
        tr_kw["bounds"] = attempt(at(net_raw, "bounds"), lambda: dataclasses.replace(NoiseBounds(), **b))
    noise_raw = section("noise")
    if "initial" in noise_raw:
        tr_kw["initial"] = attempt(at(noise_raw, "initial"), lambda: NoiseParams.from_vector(noise_raw["initial"]))
    if "hidden" in tr_kw and tr_kw["hidden"] < 1 or "trunk" in tr_kw and tr_kw["trunk"] < 1:
        raise ConfigError(f"{at(raw, 'network')}: hidden and trunk sizes must be positive")
    tr_kw["imm"] = imm_cfg
    tr_kw["seed"] = raw.get("seed", base.seed)
    train_cfg = attempt(at(raw, "training"), lambda: dataclasses.replace(base.train, **tr_kw))

    return RunConfig(seed=raw.get("seed", base.seed), n_tracks=n_tracks, sim=sim_cfg, train=train_cfg,
                     calibrate_initial=tr_raw.get("calibrate_initial", base.calibrate_initial),
                     geodetic_input=section("filter").get("geodetic_input", base.geodetic_input))


def loads(text: str, path="<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if node is None:
        return RunConfig()
    return _build(_walk(path, node, _SCHEMA), path)


def load(path) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config: {exc.strerror}") from None
    return loads(text, str(p))


def dumps(cfg: RunConfig) -> str:
    """YAML text that :func:`loads` maps back to ``cfg``."""
    d = cfg.as_dict()
    # round-trip through JSON to drop numpy scalars
    return yaml.safe_dump(json.loads(json.dumps(d)), sort_keys=False)
