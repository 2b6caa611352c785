import dataclasses

import numpy as np
import pytest

from adsbtrack import imm, noisenet, sim, train
from adsbtrack.kalman import FilterDivergence
from adsbtrack.models import NoiseParams

Q0 = NoiseParams.isotropic(1.0, 0.5, 15.0, 1.5)
SMALL = train.TrainConfig(window=3, hidden=4, trunk=5, epochs=2, update_every=10, initial=Q0)


@pytest.fixture(scope="module")
def tracks():
    return sim.build_dataset(3, sim.SimConfig(steps=60), 5)


def _net(cfg, seed=0):
    return noisenet.init_params(cfg.hidden, cfg.trunk, np.random.default_rng(seed), cfg.bounds, cfg.initial,
                                cfg.input_scale)


def test_window_loss_examples():
    truth = np.zeros((4, 6))
    assert train.window_loss(truth, truth, None, 0.1).mae == 0.0
    est = truth.copy()
    est[:, 0] = 3.0
    loss = train.window_loss(est, truth, noisenet.NetworkParams(2, 2), 0.1)
    assert loss.mae == pytest.approx(1.0) and loss.l1 == 0.0 and loss.total == pytest.approx(1.0)
    p = noisenet.NetworkParams(2, 2, np.ones(noisenet.NetworkParams(2, 2).size))
    assert train.window_loss(est, truth, p, 0.5).total == pytest.approx(1.0 + 0.5 * p.size)


def test_track_of_one_window_uses_initial(tracks):
    tr = tracks.tracks[0]
    n = SMALL.window
    runner = train.TrackRunner(tr.obs[:n], tr.truth[:n], SMALL, tr.T)
    net = _net(SMALL)
    runner.step(net)
    assert runner.done and runner.windows == 1
    assert np.all(runner.thetas == Q0.as_vector())
    fixed, _ = imm.run_fixed(tr.obs[:n], Q0, tr.T, SMALL.imm)
    assert np.array_equal(runner.global_estimates(), fixed)


def test_second_window_uses_emitted_params(tracks):
    tr = tracks.tracks[0]
    tau = SMALL.window
    net = _net(SMALL, seed=3)
    net.flat += np.random.default_rng(3).normal(scale=0.3, size=net.size)
    res = train.run_track(tr.obs[:2 * tau + 1], tr.truth[:2 * tau + 1], net, SMALL, tr.T)
    first, _ = imm.run_fixed(tr.obs[:tau], Q0, tr.T, SMALL.imm)
    deltas = tr.obs[:tau] - first
    out, _, _ = noisenet.forward(noisenet.LstmCarry.zeros(SMALL.hidden), deltas, net)
    emitted = out.mapped.as_vector()
    assert np.allclose(res.params[tau:2 * tau], emitted, rtol=1e-9)
    assert not np.allclose(emitted, Q0.as_vector())
    assert len(res.losses) == 3
    # the trailing one-step window runs under the emission of the window before it
    runner = train.TrackRunner(tr.obs[:2 * tau + 1], None, SMALL, tr.T)
    runner.step(net)
    runner.step(net)
    pending = runner.theta.copy()
    runner.step(net)
    assert runner.done
    assert np.array_equal(runner.thetas[2 * tau], pending)
    assert np.array_equal(res.params[2 * tau], pending)


def test_short_track_rejected(tracks):
    tr = tracks.tracks[0]
    with pytest.raises(ValueError, match="shorter than the window"):
        train.TrackRunner(tr.obs[:2], None, SMALL, tr.T)


def test_frozen_network_reproduces_fixed_filter(tracks):
    tr = tracks.tracks[1]
    cfg = dataclasses.replace(SMALL, hidden=8, trunk=4)
    net = noisenet.frozen_params(8, 4, Q0, cfg.bounds)
    res = train.run_track(tr.obs, None, net, cfg, tr.T)
    fixed, mus = imm.run_fixed(tr.obs, NoiseParams.from_vector(net.initial), tr.T, cfg.imm)
    assert np.array_equal(res.estimates, fixed)
    assert np.array_equal(res.mus, mus)


def _records(tr, net, cfg):
    runner = train.TrackRunner(tr.obs, tr.truth, cfg, tr.T, net.initial)
    recs = []
    while not runner.done:
        recs.append(runner.step(net, keep=True))
    return recs


def test_l1_only_gradient(tracks):
    cfg = dataclasses.replace(SMALL, l1_weight=0.01)
    net = _net(cfg)
    rec = _records(tracks.tracks[0], net, cfg)[4]
    g = train.backward(rec, net, cfg, mae_weight=0.0)
    assert np.array_equal(g, 0.01 * np.sign(net.flat))


def test_doubling_loss_doubles_gradient(tracks):
    cfg = dataclasses.replace(SMALL, l1_weight=1e-3)
    net = _net(cfg)
    rec = _records(tracks.tracks[0], net, cfg)[5]
    g = train.backward(rec, net, cfg)
    g2 = train.backward(rec, net, dataclasses.replace(cfg, l1_weight=2e-3), mae_weight=2.0)
    assert np.array_equal(g2, 2.0 * g)


def test_first_window_has_no_network_gradient(tracks):
    net = _net(SMALL)
    rec = _records(tracks.tracks[0], net, SMALL)[0]
    assert rec.cache is None
    assert np.array_equal(train.backward(rec, net, SMALL), SMALL.l1_weight * np.sign(net.flat))


def test_gradient_matches_finite_differences(tracks):
    cfg = train.TrainConfig(window=2, hidden=4, trunk=5, l1_weight=1e-3, initial=Q0)
    tr = tracks.tracks[2]
    rng = np.random.default_rng(0)
    net = _net(cfg, seed=1)
    net.flat += rng.normal(scale=0.3, size=net.size)
    rec = _records(tr, net, cfg)[7]
    g = train.backward(rec, net, cfg)
    for i in range(net.size):
        f = net.flat.copy()
        f[i] += 1e-5
        lp = train.replay_window_loss(rec, f, net, cfg)
        f[i] -= 2e-5
        lm = train.replay_window_loss(rec, f, net, cfg)
        fd = (lp - lm) / 2e-5
        assert abs(g[i] - fd) <= max(1e-4 * abs(fd), 1e-7)


def test_momentum_sgd_clips():
    opt = train.MomentumSGD(3, lr=1.0, momentum=0.5, clip_norm=1.0)
    flat = np.zeros(3)
    norm = opt.step(flat, np.array([3.0, 4.0, 0.0]))
    assert norm == pytest.approx(5.0)
    assert np.allclose(flat, [-0.6, -0.8, 0.0])
    opt.step(flat, np.zeros(3))
    assert np.allclose(flat, [-0.9, -1.2, 0.0])


def test_zero_learning_rate_leaves_params(tracks):
    cfg = dataclasses.replace(SMALL, lr=0.0, epochs=1)
    net = _net(cfg, seed=4)
    res = train.train(tracks.subset("train"), tracks.subset("val"), cfg, net=net)
    assert np.array_equal(res.net.flat, net.flat)


def test_epoch_count_and_log_fields(tracks):
    cfg = dataclasses.replace(SMALL, epochs=15)
    seen = []
    res = train.train(tracks.subset("train"), tracks.subset("val"), cfg, log_fn=seen.append)
    assert len(res.train_loss) == 15 and len(res.val_rmse) == 16
    assert seen == res.log
    assert set(seen[0]) == {"epoch", "track", "window", "mae", "l1", "grad_norm"}
    assert res.val_rmse[res.best_epoch] == min(res.val_rmse)


def test_training_is_reproducible(tracks):
    a = train.train(tracks.subset("train"), tracks.subset("val"), SMALL)
    b = train.train(tracks.subset("train"), tracks.subset("val"), SMALL)
    assert a.train_loss == b.train_loss
    assert np.array_equal(a.net.flat, b.net.flat)


def test_noiseless_training_improves():
    ds = sim.build_dataset(4, sim.SimConfig(steps=150, sigma0=(1e-6,) * 6), 2)
    cfg = train.TrainConfig(hidden=8, trunk=8, epochs=15, update_every=10, initial=Q0)
    res = train.train(ds.subset("train"), ds.subset("val"), cfg)
    assert res.train_loss[-1] <= res.train_loss[0]
    assert res.val_rmse[-1] <= res.val_rmse[0]


def test_empty_training_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        train.train([], [], SMALL)


def test_all_tracks_diverging_raises(tracks):
    bad = dataclasses.replace(tracks.tracks[0], obs=tracks.tracks[0].obs.copy())
    bad.obs[10] = np.nan
    with pytest.raises(FilterDivergence):
        train.train([bad], [], dataclasses.replace(SMALL, epochs=1))


def test_divergence_keeps_partial_output(tracks):
    tr = tracks.tracks[0]
    obs = tr.obs.copy()
    obs[10] = np.nan
    with pytest.raises(FilterDivergence) as info:
        train.run_track(obs, None, _net(SMALL), SMALL, tr.T)
    assert info.value.step == 10
    est, mus, params = info.value.partial
    assert est.shape == (10, 6) and mus.shape == (10, 2) and params.shape == (10, 12)


def test_config_validation():
    with pytest.raises(ValueError):
        train.TrainConfig(window=0)
    with pytest.raises(ValueError):
        train.TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        train.TrainConfig(initial=NoiseParams.isotropic(100.0, 0.5, 15.0, 1.5))


def test_grid_search_picks_table_minimum(tracks):
    grid = {"vw": (0.1, 1.0), "jw": (0.05, 0.5), "r_pos": (10.0, 40.0)}
    best, score, table = train.grid_search(tracks.subset("val"), imm.ImmConfig(), grid)
    assert len(table) == 8
    assert score == min(s for _, s in table)
    assert best.sigma_r[3] == pytest.approx(best.sigma_r[0] * train.VEL_TO_POS)


def test_validation_rmse_pools_tracks(tracks):
    from adsbtrack import evaluate
    net = noisenet.frozen_params(4, 5, Q0)
    val = tracks.subset("train")
    errs = [train.run_track(t.obs, None, net, SMALL, t.T).estimates[:, :3] - t.truth[:, :3] for t in val]
    pooled = np.sqrt(np.mean(np.concatenate(errs) ** 2))
    assert train.validation_rmse(val, net, SMALL) == pytest.approx(pooled, rel=1e-12)
    assert evaluate.rmse(np.vstack([e for e in errs]), np.zeros((sum(map(len, errs)), 3))).rmse_total \
        == pytest.approx(pooled, rel=1e-12)
