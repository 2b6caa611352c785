import json
import os
import subprocess
import sys

import numpy as np
import pytest

from adsbtrack import kernels, sim
from adsbtrack.imm import ImmConfig, initial_state, local_origin, model_bank
from adsbtrack.models import NoiseParams

BACKEND_SCRIPT = r"""
import json, sys
import numpy as np
from adsbtrack import sim
from adsbtrack._jit import NUMBA_ENABLED
from adsbtrack.imm import ImmConfig, run_fixed
from adsbtrack.models import NoiseParams
tr = sim.make_track(sim.SimConfig(steps=200), np.random.SeedSequence(21), "k")
est, mu = run_fixed(tr.obs, NoiseParams.isotropic(0.3, 0.05, 30.0, 3.0), tr.T, ImmConfig())
print(json.dumps({"numba": NUMBA_ENABLED, "est": est.tolist(), "mu": mu.tolist()}))
"""


def _run_backend(disable):
    env = dict(os.environ, ADSBTRACK_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", BACKEND_SCRIPT], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_numba_and_numpy_backends_agree():
    fast = _run_backend(False)
    slow = _run_backend(True)
    assert slow["numba"] is False
    a, b = np.array(fast["est"]), np.array(slow["est"])
    assert np.allclose(a, b, rtol=1e-9, atol=1e-7)
    assert np.allclose(fast["mu"], slow["mu"], rtol=0, atol=1e-9)


def test_chol_inverse_matches_numpy():
    rng = np.random.default_rng(0)
    for n in (1, 3, 6):
        A = rng.normal(size=(n, n))
        S = A @ A.T + np.eye(n)
        Si, logdet, ok = kernels.chol_inverse(S)
        assert ok
        assert np.allclose(Si, np.linalg.inv(S), rtol=1e-10, atol=1e-12)
        assert logdet == pytest.approx(np.linalg.slogdet(S)[1], rel=1e-12)
    assert not kernels.chol_inverse(np.diag([1.0, -1.0]))[2]


def test_model_probabilities_log_space():
    mu = kernels.model_probabilities(np.array([-600.0, -601.0]), np.array([0.5, 0.5]))
    assert mu == pytest.approx([1 / (1 + np.exp(-1.0)), np.exp(-1.0) / (1 + np.exp(-1.0))], rel=1e-12)
    # both below the floor: the evidence is ignored rather than zeroing a model
    mu = kernels.model_probabilities(np.array([-1000.0, -5000.0]), np.array([0.25, 0.75]))
    assert mu == pytest.approx([0.25, 0.75], rel=1e-12)


@pytest.fixture(scope="module")
def window():
    tr = sim.make_track(sim.SimConfig(steps=12), np.random.SeedSequence(4), "w")
    cfg = ImmConfig()
    bank = model_bank(1.0, cfg.q_mode)
    theta = NoiseParams.isotropic(0.4, 0.2, 20.0, 2.0).as_vector()
    obs = np.ascontiguousarray(tr.obs - local_origin(tr.obs))
    s0 = initial_state(obs[0], theta[6:], cfg)
    # run a few steps first so the window starts from a mixed state
    Q1, Q2, R = bank.matrices(theta)
    out = kernels.filter_steps(obs[1:5], s0.cv.mean, s0.cv.cov, s0.cj.mean, s0.cj.cov, s0.mu,
                               bank.F1, Q1, bank.F2, Q2, bank.H1, bank.H2, R, cfg.lam_array, cfg.aug_array,
                               cfg.joseph)
    entry = (out[2][-1], out[3][-1], out[4][-1], out[5][-1], out[6][-1])
    rng = np.random.default_rng(1)
    return dict(obs=np.ascontiguousarray(obs[5:9]), entry=entry, bank=bank, theta=theta, cfg=cfg,
                g=rng.normal(size=(4, 6)))


def _objective(w, theta, joseph):
    bank, cfg = w["bank"], w["cfg"]
    Q1, Q2, R = bank.matrices(theta)
    xs = kernels.filter_steps(w["obs"], *w["entry"], bank.F1, Q1, bank.F2, Q2, bank.H1, bank.H2, R,
                              cfg.lam_array, cfg.aug_array, joseph)[0]
    return float(np.sum(w["g"] * xs))


@pytest.mark.parametrize("joseph", [False, True])
def test_window_vjp_matches_finite_differences(window, joseph):
    w = window
    bank, cfg, theta = w["bank"], w["cfg"], w["theta"]
    Q1, Q2, R = bank.matrices(theta)
    out = kernels.filter_steps(w["obs"], *w["entry"], bank.F1, Q1, bank.F2, Q2, bank.H1, bank.H2, R,
                               cfg.lam_array, cfg.aug_array, joseph)
    g_Q1, g_Q2, g_R = kernels.window_vjp(w["obs"], *out[2:7], bank.F1, Q1, bank.F2, Q2, bank.H1, bank.H2,
                                         R, cfg.lam_array, cfg.aug_array, joseph, w["g"])
    analytic = bank.sigma_grad(theta, g_Q1, g_Q2, g_R)
    for i in range(12):
        h = 1e-4 * theta[i]
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd = (_objective(w, tp, joseph) - _objective(w, tm, joseph)) / (2 * h)
        assert analytic[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)
