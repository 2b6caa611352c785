import numpy as np
import pytest

from adsbtrack import io, sim
from adsbtrack.sim import Segment, SimConfig


def test_cruise_is_straight_line():
    cfg = SimConfig(steps=50, script=(Segment("cruise", 50.0),), start=(0, 0, 100, 10, 0, 0))
    truth = sim.generate_truth(cfg)
    assert np.allclose(np.diff(truth[:, 0]), 10.0)
    assert np.allclose(truth[:, 1:3], [0.0, 100.0])
    assert np.allclose(truth[:, 3:], [10.0, 0.0, 0.0])


def test_turn_keeps_speed_and_heading_rate():
    cfg = SimConfig(steps=40, script=(Segment("cruise", 5.0), Segment("turn", 9.0, rate=10.0)),
                    start=(0, 0, 100, 0, 20, 0))
    truth = sim.generate_truth(cfg)
    speed = np.linalg.norm(truth[:, 3:], axis=1)
    assert np.abs(speed - 20.0).max() < 1e-9
    heading = np.degrees(np.arctan2(truth[:, 3], truth[:, 4]))
    assert heading[5] == pytest.approx(0.0, abs=1e-9)
    assert heading[14] == pytest.approx(90.0, abs=1e-9)
    assert np.allclose(np.diff(heading[5:15]), 10.0)


def test_velocity_is_derivative_of_position():
    cfg = SimConfig(steps=400)
    start, script = sim.random_script(cfg, np.random.default_rng(1))
    # central differences of the closed form on a fine grid
    fine = sim.generate_truth(SimConfig(steps=40000, T=0.01), script=script, start=start)
    err = np.linalg.norm((fine[2:, :3] - fine[:-2, :3]) / 0.02 - fine[1:-1, 3:], axis=1)
    # only samples straddling a turn entry or exit, where acceleration jumps, see O(h) error
    assert err.max() <= cfg.accel_bound() * 0.01 / 2
    assert np.quantile(err, 0.99) < 1e-4


def test_kinematic_audit_stays_within_bounds():
    cfg = SimConfig()
    for i in range(5):
        tr = sim.make_track(cfg, np.random.SeedSequence(100 + i), "t")
        acc = np.linalg.norm(np.diff(tr.truth[:, 3:], axis=0), axis=1) / cfg.T
        assert acc.max() <= cfg.accel_bound()
        step = (tr.truth[1:, :3] - tr.truth[:-1, :3]) / cfg.T
        mean_v = 0.5 * (tr.truth[1:, 3:] + tr.truth[:-1, 3:])
        assert np.linalg.norm(step - mean_v, axis=1).max() <= cfg.accel_bound() * cfg.T


def test_every_random_track_has_sharp_turn():
    cfg = SimConfig()
    for i in range(10):
        start, script = sim.random_script(cfg, np.random.default_rng(i))
        onset = sim.sharp_turn_onset(script)
        # the scripted sharp turn starts at 60% of the track; an earlier random turn may also qualify
        assert onset is not None and onset <= 0.6 * cfg.steps * cfg.T + 1e-9
        assert any(s.kind == "turn" and abs(s.rate) >= 10.0 and abs(s.rate) * s.duration >= 90.0 - 1e-9
                   for s in script)
        assert sum(s.duration for s in script) <= cfg.steps * cfg.T + 1e-9


def test_sharp_turn_onset():
    script = (Segment("cruise", 10.0), Segment("turn", 3.0, rate=5.0), Segment("turn", 9.0, rate=-12.0))
    assert sim.sharp_turn_onset(script) == 13.0
    assert sim.sharp_turn_onset(script[:2]) is None


def test_script_validation():
    with pytest.raises(ValueError, match="lasts"):
        sim.generate_truth(SimConfig(steps=10), script=(Segment("cruise", 20.0),), start=(0,) * 6)
    with pytest.raises(ValueError, match="turn rate"):
        sim.generate_truth(SimConfig(steps=10), script=(Segment("turn", 5.0, rate=30.0),),
                           start=(0, 0, 0, 0, 10, 0))
    with pytest.raises(ValueError):
        Segment("hover", 1.0)
    with pytest.raises(ValueError):
        Segment("cruise", 0.0)
    with pytest.raises(ValueError):
        SimConfig(kappa=-1.0)


def test_noise_free_observation_equals_truth():
    cfg = SimConfig(steps=20, kappa=0.0, sigma0=(1e-300,) * 6)
    truth = np.random.default_rng(0).normal(size=(20, 6))
    obs, _ = sim.observe(truth, cfg, np.random.default_rng(1))
    assert np.array_equal(obs, truth)


def test_distance_scaling():
    cfg = SimConfig(kappa=0.001)
    gs = cfg.gs_position
    truth = np.zeros((1, 6))
    truth[0, :3] = gs + np.array([600.0, 800.0, 0.0])
    scale = sim.noise_scale(truth, cfg)
    assert np.allclose(scale[0] / np.array(cfg.sigma0), 2.0)


def test_monte_carlo_standard_deviation():
    cfg = SimConfig(kappa=0.0, sigma0=(15.0, 15.0, 15.0, 1.5, 1.5, 1.5))
    truth = np.zeros((100_000, 6))
    obs, sigma = sim.observe(truth, cfg, np.random.default_rng(5))
    assert np.allclose(obs.std(axis=0) / sigma[0], 1.0, atol=0.02)


def test_noise_is_white():
    tr = sim.make_track(SimConfig(steps=5000), np.random.SeedSequence(9), "t")
    noise = (tr.obs - tr.truth) / tr.sigma
    for c in range(6):
        e = noise[:, c] - noise[:, c].mean()
        assert abs(np.dot(e[1:], e[:-1]) / np.dot(e, e)) < 0.05


@pytest.mark.parametrize("n, sizes", [(10, (7, 2, 1)), (3, (1, 1, 1)), (4, (2, 1, 1)), (20, (14, 4, 2))])
def test_split_sizes(n, sizes):
    assert sim.split_sizes(n) == sizes


@pytest.mark.parametrize("n", [0, 1, 2])
def test_split_needs_three_tracks(n):
    with pytest.raises(ValueError, match="at least 3"):
        sim.split_sizes(n)


def test_dataset_split_is_partition():
    ds = sim.build_dataset(10, SimConfig(steps=30), 0)
    ids = sorted(ds.split["train"] + ds.split["val"] + ds.split["test"])
    assert ids == list(range(10))
    assert tuple(len(ds.split[k]) for k in ("train", "val", "test")) == (7, 2, 1)


def test_dataset_bytes_reproducible(tmp_path):
    cfg = SimConfig(steps=40)
    for name in ("a", "b"):
        ds = sim.build_dataset(4, cfg, 7)
        io.write_dataset(tmp_path / name, ds, cfg.projection, "digest")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    other = sim.build_dataset(4, cfg, 8)
    assert not np.array_equal(other.tracks[0].obs, sim.build_dataset(4, cfg, 7).tracks[0].obs)


def test_tracks_independent_of_dataset_size():
    cfg = SimConfig(steps=30)
    a = sim.build_dataset(3, cfg, 11)
    b = sim.build_dataset(5, cfg, 11)
    assert np.array_equal(a.tracks[0].obs, b.tracks[0].obs)


def test_geodetic_records_round_trip():
    cfg = SimConfig(steps=20)
    tr = sim.make_track(cfg, np.random.SeedSequence(2), "t")
    from adsbtrack import geo
    back = geo.records_to_array(sim.geodetic_records(tr, cfg.projection), cfg.projection)
    assert np.allclose(back[:, :3], tr.obs[:, :3], atol=1e-6)
    assert np.allclose(back[:, 3:], tr.obs[:, 3:], atol=1e-9)
