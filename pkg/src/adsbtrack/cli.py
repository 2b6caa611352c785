"""Command-line driver: simulate, filter, train, eval.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 filter
divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, evaluate, io, noisenet, sim, train
from .config import ConfigError, RunConfig, load
from .imm import run_fixed
from .io import DataError
from .kalman import FilterDivergence

log = logging.getLogger("adsbtrack")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

CHECKPOINT_NAME = "checkpoint.bin"


def _config(args) -> RunConfig:
    return load(args.config).with_seed(args.seed)


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    cfg = _config(args)
    ds = sim.build_dataset(cfg.n_tracks, cfg.sim, cfg.seed)
    paths = io.write_dataset(args.out, ds, cfg.sim.projection, cfg.digest())
    print(f"wrote {len(ds.tracks)} tracks and manifest to {args.out} "
          f"(train {len(ds.split['train'])}, val {len(ds.split['val'])}, test {len(ds.split['test'])})")
    log.debug("files: %s", [str(p) for p in paths])
    return EXIT_OK


# ---------------------------------------------------------------- filter

def _write_filter_outputs(out: Path, track, method, t, est, mu, params, digest):
    stem = f"{track.name or 'track'}.{method}"
    io.write_estimates(out / f"{stem}.csv", t, est, mu, params, method, digest)
    if track.truth is not None and est.shape[0] == len(track):
        rep = evaluate.rmse(est, track.truth)
        io.write_keyvalue(out / f"{stem}.report.kv", {"method": method, **rep.as_dict()})
        print(f"{method}: rmse_total={rep.rmse_total:.4f} m (x {rep.rmse_x:.4f}, y {rep.rmse_y:.4f}, "
              f"z {rep.rmse_z:.4f})")


def cmd_filter(args) -> int:
    cfg = _config(args)
    track, _ = io.read_track(args.track, use_geodetic=cfg.geodetic_input)
    out = Path(args.out)
    digest = cfg.digest()
    if args.checkpoint:
        try:
            net = noisenet.load(args.checkpoint, expect_hidden=cfg.train.hidden if args.strict_shape else None)
        except OSError as exc:
            raise DataError(f"{args.checkpoint}: {exc.strerror}") from None
        except ValueError as exc:
            raise DataError(f"{args.checkpoint}: {exc}") from None
        tcfg = train.TrainConfig(**{**_train_kwargs(cfg.train), "hidden": net.hidden, "trunk": net.trunk,
                                    "bounds": net.bounds, "input_scale": tuple(net.input_scale)})
        method = args.name or "adaptive"
        try:
            res = train.run_track(track.obs, None, net, tcfg, track.T)
        except FilterDivergence as exc:
            est, mu, params = exc.partial
            _write_filter_outputs(out, track, method, track.t[:len(est)], est, mu, params, digest)
            raise
        _write_filter_outputs(out, track, method, track.t, res.estimates, res.mus, res.params, digest)
        return EXIT_OK

    if args.mode == "perfect":
        params, score, _ = train.grid_search([track], cfg.imm)
        print(f"grid-best noise scales: {np.round(params.as_vector(), 4).tolist()} (rmse {score:.4f})")
    else:
        params = cfg.train.initial
    method = args.name or args.mode
    theta = np.tile(params.as_vector(), (len(track), 1))
    try:
        est, mu = run_fixed(track.obs, params, track.T, cfg.imm)
    except FilterDivergence as exc:
        est, mu = exc.partial
        _write_filter_outputs(out, track, method, track.t[:len(est)], est, mu, theta[:len(est)], digest)
        raise
    _write_filter_outputs(out, track, method, track.t, est, mu, theta, digest)
    return EXIT_OK


def _train_kwargs(tc: train.TrainConfig) -> dict:
    return {f.name: getattr(tc, f.name) for f in tc.__dataclass_fields__.values()}


# ---------------------------------------------------------------- train

def _load_split(dataset_dir: Path, part: str, geodetic: bool):
    manifest = io.read_manifest(dataset_dir)
    return [io.read_track(dataset_dir / name, use_geodetic=geodetic)[0] for name in manifest["split"][part]]


def cmd_train(args) -> int:
    cfg = _config(args)
    ds_dir = Path(args.dataset)
    train_tracks = _load_split(ds_dir, "train", cfg.geodetic_input)
    val_tracks = _load_split(ds_dir, "val", cfg.geodetic_input)
    if not train_tracks:
        raise DataError(f"{ds_dir}: training split is empty")
    tcfg = cfg.train
    if cfg.calibrate_initial:
        params, score, _ = train.grid_search(train_tracks, cfg.imm)
        print(f"initial noise scales calibrated on the training split: "
              f"{np.round(params.as_vector(), 4).tolist()} (rmse {score:.4f})")
        tcfg = train.TrainConfig(**{**_train_kwargs(tcfg), "initial": params})
    if tcfg.epochs == 0:
        log.warning("epochs=0: writing the initialised network without training")
    out = Path(args.out)
    log_lines = []
    result = train.train(train_tracks, val_tracks, tcfg, log_fn=log_lines.append)
    noisenet.save(result.net, out / CHECKPOINT_NAME)
    io.atomic_write_text(out / "train_log.jsonl",
                         "".join(json.dumps(r, sort_keys=True) + "\n" for r in log_lines))
    curve = ["epoch,train_loss,val_rmse"]
    curve.append(f"0,,{io.fmt(result.val_rmse[0])}")
    for e, (lo, v) in enumerate(zip(result.train_loss, result.val_rmse[1:]), start=1):
        curve.append(f"{e},{io.fmt(lo)},{io.fmt(v)}")
    io.atomic_write_text(out / "loss_curve.csv", "# format=1\n" + "\n".join(curve) + "\n")
    io.write_keyvalue(out / "train_summary.kv", {
        "best_epoch": result.best_epoch, "best_val_rmse": io.fmt(min(result.val_rmse)),
        "skipped_tracks": result.skipped, "checkpoint_digest": noisenet.digest(result.net),
        "config_digest": cfg.digest(),
    })
    print(f"trained {tcfg.epochs} epochs; best validation rmse {min(result.val_rmse):.4f} "
          f"at epoch {result.best_epoch}; checkpoint {out / CHECKPOINT_NAME}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    truth_track, _ = io.read_track(args.truth)
    n = len(truth_track)
    reports = {"raw": evaluate.rmse(truth_track.obs, truth_track.truth)}
    for path in args.estimates:
        method, t, est, _, _ = io.read_estimates(path)
        if est.shape[0] != n or not np.allclose(t, truth_track.t, rtol=0, atol=1e-9):
            raise DataError(f"{path}: {est.shape[0]} rows not aligned with {n} truth rows")
        if method in reports:
            raise DataError(f"{path}: duplicate method name {method!r}")
        reports[method] = evaluate.rmse(est, truth_track.truth)
    baseline = args.baseline
    if baseline not in reports:
        raise DataError(f"baseline {baseline!r} not among methods {sorted(reports)}")
    table = evaluate.format_table(reports, baseline)
    out = Path(args.out)
    io.atomic_write_text(out / "report.txt", f"# format=1\n# truth={truth_track.name}\n{table}\n")
    kv = {"format": 1, "truth": truth_track.name, "baseline": baseline}
    for name, rep in reports.items():
        for key, value in rep.as_dict().items():
            kv[f"{name}.{key}"] = io.fmt(value)
    io.write_keyvalue(out / "report.kv", kv)
    names = list(reports)
    rows = np.column_stack([truth_track.t] + [reports[m].mae_trace for m in names])
    io.atomic_write_text(out / "mae_trace.csv",
                         "# format=1\n" + ",".join(["t"] + names) + "\n"
                         + "".join(",".join(io.fmt(v) for v in row) + "\n" for row in rows))
    axes = ["method,rmse_x,rmse_y,rmse_z,rmse_total,reduction_pct"]
    for name in names:
        r = reports[name]
        axes.append(",".join([name] + [io.fmt(v) for v in (r.rmse_x, r.rmse_y, r.rmse_z, r.rmse_total,
                                                             r.relative_reduction)]))
    io.atomic_write_text(out / "rmse_axes.csv", "# format=1\n" + "\n".join(axes) + "\n")
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------- entry

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adsbtrack", description="Adaptive IMM tracking of ADS-B reports.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML run configuration (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="top-level seed, overrides the config")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("simulate", help="generate a dataset of tracks and a split manifest")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="filter one track file")
    sp.add_argument("track")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--checkpoint", help="network checkpoint for adaptive filtering")
    g.add_argument("--mode", choices=("fixed", "perfect"), default="fixed",
                   help="fixed: configured initial noise; perfect: grid-tuned on this track's truth")
    sp.add_argument("--name", help="method name written to the estimates file")
    sp.add_argument("--strict-shape", action="store_true",
                    help="reject checkpoints whose hidden size differs from the config")
    common(sp)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("train", help="train the noise network on a dataset directory")
    sp.add_argument("dataset")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="compare estimate files against a track's truth")
    sp.add_argument("estimates", nargs="+")
    sp.add_argument("--truth", required=True, help="track file holding the ground truth")
    sp.add_argument("--baseline", default="raw", help="method the reductions are relative to")
    common(sp)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FilterDivergence as exc:
        print(f"filter diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
