"""Track, estimate and report file formats (format=1).

Tracks and estimates are comma-separated text: ``# key=value`` header
lines, one column-name line, then rows written with 12 significant
digits.  Writes go to a temporary file that is renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import geo
from .sim import Dataset, Track, geodetic_records

FORMAT_VERSION = 1
STATE_COLS = ("x", "y", "z", "vx", "vy", "vz")
TRUTH_COLS = tuple(f"truth_{c}" for c in STATE_COLS)
OBS_COLS = tuple(f"obs_{c}" for c in STATE_COLS)
GEO_COLS = ("lon", "lat", "alt", "v", "psi", "theta")
PARAM_COLS = ("sigma_vwx", "sigma_vwy", "sigma_vwz", "sigma_jwx", "sigma_jwy", "sigma_jwz",
              "sigma_x", "sigma_y", "sigma_z", "sigma_vx", "sigma_vy", "sigma_vz")


class DataError(ValueError):
    """Malformed or inconsistent data file."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def fmt(v: float) -> str:
    return f"{v:.12g}"


def _table(header: dict, columns, rows: np.ndarray) -> str:
    lines = [f"# {k}={v}" for k, v in header.items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _parse_table(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    header = {}
    columns = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    header[k.strip()] = v.strip()
                continue
            if columns is None:
                columns = line.split(",")
                continue
            parts = line.split(",")
            if len(parts) != len(columns):
                raise DataError(f"{path}:{lineno}: expected {len(columns)} columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if columns is None:
        raise DataError(f"{path}: missing column header line")
    if header.get("format") != str(FORMAT_VERSION):
        raise DataError(f"{path}: unsupported or missing format field (format={header.get('format')})")
    data = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    return header, columns, data


def projection_string(p: geo.ProjectionConfig) -> str:
    return f"central_meridian:{fmt(p.central_meridian)};false_easting:{fmt(p.false_easting)};" \
           f"a:{fmt(p.a)};f:{p.f!r}"


def parse_projection(s: str) -> geo.ProjectionConfig:
    kv = dict(item.split(":", 1) for item in s.split(";"))
    return geo.ProjectionConfig(float(kv["central_meridian"]), float(kv["false_easting"]),
                                float(kv["a"]), float(kv["f"]))


def write_track(path, track: Track, proj: geo.ProjectionConfig, noise_digest: str = "",
                geodetic: bool = True) -> None:
    cols = ["t", *TRUTH_COLS, *OBS_COLS]
    data = [track.t[:, None], track.truth, track.obs]
    if geodetic:
        recs = geodetic_records(track, proj)
        cols += GEO_COLS
        data.append(np.array([[r.lon, r.lat, r.alt, r.v, r.psi, r.theta] for r in recs]))
    header = {"format": FORMAT_VERSION, "kind": "track", "name": track.name, "T": fmt(track.T),
              "projection": projection_string(proj), "noise_digest": noise_digest,
              "geodetic": int(geodetic)}
    if track.turn_onset is not None:
        header["turn_onset"] = fmt(track.turn_onset)
    atomic_write_text(path, _table(header, cols, np.hstack(data)))


def read_track(path, use_geodetic: bool = False):
    """Returns (Track, ProjectionConfig).

    With ``use_geodetic`` the observation columns are rebuilt from the
    lon/lat/alt/v/psi/theta columns through the projection.
    """
    header, columns, data = _parse_table(path)
    if header.get("kind") != "track":
        raise DataError(f"{path}: not a track file")
    missing = [c for c in ("t", *TRUTH_COLS, *OBS_COLS) if c not in columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    geodetic = header.get("geodetic") == "1"
    if geodetic and any(c not in columns for c in GEO_COLS):
        raise DataError(f"{path}: header declares geodetic columns but they are absent")
    expected = 1 + 12 + (6 if geodetic else 0)
    if len(columns) != expected:
        raise DataError(f"{path}: expected {expected} columns, found {len(columns)}")
    T = float(header["T"])
    ix = {c: i for i, c in enumerate(columns)}
    t = data[:, ix["t"]]
    if t.shape[0] < 1:
        raise DataError(f"{path}: no rows")
    if t.shape[0] > 1:
        dt = np.diff(t)
        if np.any(dt <= 0) or np.max(np.abs(dt - T)) > 1e-6 * max(T, 1.0):
            raise DataError(f"{path}: time column must increase in constant steps of T={T}")
    proj = parse_projection(header["projection"])
    truth = data[:, [ix[c] for c in TRUTH_COLS]]
    obs = data[:, [ix[c] for c in OBS_COLS]]
    if use_geodetic:
        if not geodetic:
            raise DataError(f"{path}: no geodetic columns to read")
        recs = [geo.AdsbRecord(row[ix["t"]], *(row[ix[c]] for c in GEO_COLS)) for row in data]
        obs = geo.records_to_array(recs, proj)
    sigma = np.full_like(obs, np.nan)
    onset = float(header["turn_onset"]) if "turn_onset" in header else None
    return Track(t, truth, obs, sigma, T, header.get("name", ""), onset), proj


def config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_dataset(out_dir, ds: Dataset, proj: geo.ProjectionConfig, digest: str) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for tr in ds.tracks:
        p = out_dir / f"{tr.name}.csv"
        write_track(p, tr, proj, noise_digest=digest)
        paths.append(p)
    manifest = {"format": FORMAT_VERSION, "seed": ds.seed, "config_digest": digest,
                "tracks": [f"{tr.name}.csv" for tr in ds.tracks],
                "split": {k: [f"{ds.tracks[i].name}.csv" for i in v] for k, v in ds.split.items()}}
    mp = out_dir / "manifest.json"
    atomic_write_text(mp, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    paths.append(mp)
    return paths


def read_manifest(dataset_dir):
    dataset_dir = Path(dataset_dir)
    mp = dataset_dir / "manifest.json"
    if not mp.is_file():
        raise DataError(f"{dataset_dir}: manifest.json not found")
    manifest = json.loads(mp.read_text())
    if manifest.get("format") != FORMAT_VERSION:
        raise DataError(f"{mp}: unsupported manifest format")
    return manifest


def write_estimates(path, t, estimates, mu, params, method: str, digest: str = "") -> None:
    cols = ["t", *STATE_COLS, "mu_cv", "mu_cj", *PARAM_COLS]
    header = {"format": FORMAT_VERSION, "kind": "estimates", "method": method, "digest": digest}
    rows = np.column_stack([t, estimates, mu, params])
    atomic_write_text(path, _table(header, cols, rows))


def read_estimates(path):
    """Returns (method name, t, estimates (N, 6), mu (N, 2), params (N, 12))."""
    header, columns, data = _parse_table(path)
    if header.get("kind") != "estimates":
        raise DataError(f"{path}: not an estimates file")
    ix = {c: i for i, c in enumerate(columns)}
    try:
        est = data[:, [ix[c] for c in STATE_COLS]]
        mu = data[:, [ix["mu_cv"], ix["mu_cj"]]]
        params = data[:, [ix[c] for c in PARAM_COLS]]
    except KeyError as exc:
        raise DataError(f"{path}: missing column {exc}") from None
    return header.get("method", Path(path).stem), data[:, ix["t"]], est, mu, params


def write_keyvalue(path, items: dict) -> None:
    atomic_write_text(path, "".join(f"{k}={v}\n" for k, v in items.items()))


def read_keyvalue(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out
