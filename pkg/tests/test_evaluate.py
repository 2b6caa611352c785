import math

import numpy as np
import pytest

from adsbtrack import evaluate, train


def _two_pass_rmse(est, truth):
    # plain loops: accumulate squares per axis, then take roots
    sums = [0.0, 0.0, 0.0]
    for e, t in zip(est, truth):
        for k in range(3):
            sums[k] += (float(e[k]) - float(t[k])) ** 2
    n = len(est)
    return [math.sqrt(s / n) for s in sums], math.sqrt(sum(sums) / (3 * n))


def test_zero_error():
    truth = np.random.default_rng(0).normal(size=(10, 6))
    rep = evaluate.rmse(truth, truth)
    assert rep.rmse_total == 0.0 and np.all(rep.mae_trace == 0.0)


def test_hand_example():
    truth = np.zeros((2, 6))
    est = np.array([[3.0, 0.0, 0.0, 9, 9, 9], [0.0, 4.0, 0.0, 9, 9, 9]])
    rep = evaluate.rmse(est, truth)
    assert rep.rmse_x == pytest.approx(math.sqrt(4.5))
    assert rep.rmse_y == pytest.approx(math.sqrt(8.0))
    assert rep.rmse_z == 0.0
    assert rep.rmse_total == pytest.approx(math.sqrt(25.0 / 6.0))
    assert np.allclose(rep.mae_trace, [1.0, 4.0 / 3.0])


def test_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(1, 200))
        est, truth = rng.normal(scale=50, size=(n, 6)), rng.normal(scale=50, size=(n, 6))
        rep = evaluate.rmse(est, truth)
        axes, total = _two_pass_rmse(est, truth)
        assert np.allclose([rep.rmse_x, rep.rmse_y, rep.rmse_z], axes, rtol=1e-12, atol=0)
        assert rep.rmse_total == pytest.approx(total, rel=1e-12)


def test_permutation_invariant():
    rng = np.random.default_rng(2)
    est, truth = rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
    perm = rng.permutation(50)
    a, b = evaluate.rmse(est, truth), evaluate.rmse(est[perm], truth[perm])
    assert a.rmse_total == pytest.approx(b.rmse_total, rel=1e-12)
    assert np.allclose(np.sort(a.mae_trace), np.sort(b.mae_trace))


def test_compare_reductions():
    truth = np.zeros((4, 6))
    est = np.ones((4, 6))
    reps = {"base": evaluate.rmse(est, truth), "half": evaluate.rmse(0.5 * est, truth)}
    red = evaluate.compare(reps, "base")
    assert red["base"] == 0.0
    assert red["half"] == pytest.approx(50.0)
    with pytest.raises(KeyError):
        evaluate.compare(reps, "missing")


def test_table_lists_every_method():
    truth = np.zeros((3, 6))
    reps = {m: evaluate.rmse(np.full((3, 6), s), truth) for m, s in (("raw", 4.0), ("fixed", 2.0), ("adaptive", 1.0))}
    text = evaluate.format_table(reps, "raw")
    lines = text.splitlines()
    assert len(lines) == 4
    assert [ln.split()[0] for ln in lines[1:]] == ["raw", "fixed", "adaptive"]
    assert "75.00%" in lines[3]


def test_mae_trace_mean_equals_window_loss():
    rng = np.random.default_rng(3)
    est, truth = rng.normal(size=(7, 6)), rng.normal(size=(7, 6))
    assert evaluate.mae_trace(est, truth).mean() == pytest.approx(train.window_loss(est, truth, None, 0.0).mae,
                                                                 rel=1e-12)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError, match="length mismatch"):
        evaluate.rmse(np.zeros((3, 6)), np.zeros((4, 6)))
    with pytest.raises(ValueError):
        evaluate.mae_trace(np.zeros((0, 6)), np.zeros((0, 6)))


def test_as_dict_fields():
    rep = evaluate.rmse(np.ones((2, 6)), np.zeros((2, 6)))
    evaluate.compare({"a": rep}, "a")
    assert set(rep.as_dict()) == {"rmse_x", "rmse_y", "rmse_z", "rmse_total", "mae_mean", "mae_peak",
                                  "reduction_pct"}
