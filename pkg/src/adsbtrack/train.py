"""Sliding-window adaptive filtering and end-to-end training of the noise network.

A track is cut into windows of ``window`` steps.  Window 0 is filtered
with the configured initial noise scales.  After each window the
residuals o_k - x_k of that window are fed through the network (its
LSTM carry persists across windows) and the emitted scales are used for
the next window.  A trailing short window uses the last emitted scales.

Gradients are exact reverse accumulation through the filter steps of a
window and through the network forward that produced its scales.  The
filter state entering the window, the residual inputs and the incoming
LSTM carry are constants (truncation at the window boundary).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels, noisenet
from .evaluate import rmse
from .imm import ImmConfig, initial_state, local_origin, model_bank
from .kalman import FilterDivergence
from .models import NoiseBounds, NoiseParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    window: int = 3
    epochs: int = 15
    lr: float = 1e-3
    momentum: float = 0.9
    l1_weight: float = 1e-5
    clip_norm: float = 5.0
    seed: int = 0
    hidden: int = 128
    trunk: int = 64
    update_every: int = 50
    initial: NoiseParams = field(default_factory=lambda: NoiseParams.isotropic(1.0, 0.5, 15.0, 1.5))
    bounds: NoiseBounds = field(default_factory=NoiseBounds)
    input_scale: tuple = (10.0, 10.0, 10.0, 1.0, 1.0, 1.0)
    imm: ImmConfig = field(default_factory=ImmConfig)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.epochs < 0 or self.update_every < 1:
            raise ValueError("epochs must be >= 0 and update_every >= 1")
        if self.l1_weight < 0 or self.clip_norm <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("need l1_weight >= 0, clip_norm > 0 and 0 <= momentum < 1")
        if not self.initial.check_bounds(self.bounds):
            raise ValueError("initial noise scales lie outside the configured bounds")
        if len(self.input_scale) != noisenet.INPUT_DIM or min(self.input_scale) <= 0:
            raise ValueError("input_scale needs six positive entries")


@dataclass
class WindowLoss:
    mae: float
    l1: float
    total: float


def window_loss(estimates, truth, net: noisenet.NetworkParams | None, l1_weight: float) -> WindowLoss:
    err = np.asarray(estimates)[:, :3] - np.asarray(truth)[:, :3]
    mae = float(np.mean(np.abs(err).sum(axis=1) / 3.0))
    l1 = noisenet.l1_norm(net) if net is not None else 0.0
    return WindowLoss(mae, l1, mae + l1_weight * l1)


@dataclass
class WindowRecord:
    """Everything needed to differentiate one window's loss."""

    index: int
    start: int
    stop: int
    theta: np.ndarray
    estimates: np.ndarray
    obs: np.ndarray
    truth: np.ndarray | None
    stacks: tuple
    cache: noisenet.ForwardCache | None
    carry_in: noisenet.LstmCarry | None
    deltas_in: np.ndarray | None
    loss: WindowLoss | None = None


class TrackRunner:
    """Filters one track window by window.

    ``step(net)`` filters the next window, then runs the network on its
    residuals to produce the scales for the window after.  Passing a
    different ``net`` between calls is how online training updates are
    applied.  Internally everything is relative to the first observed
    position (see :func:`local_origin`).
    """

    def __init__(self, obs, truth, cfg: TrainConfig, T: float = 1.0, initial=None):
        self.origin = local_origin(obs)
        self.obs = np.ascontiguousarray(np.asarray(obs, dtype=np.float64) - self.origin)
        self.truth = None if truth is None else np.asarray(truth, dtype=np.float64) - self.origin
        n = self.obs.shape[0]
        if n < cfg.window:
            raise ValueError(f"track has {n} steps, shorter than the window ({cfg.window})")
        self.cfg = cfg
        self.bank = model_bank(float(T), cfg.imm.q_mode)
        self.theta = cfg.initial.as_vector() if initial is None else np.array(initial, dtype=float)
        s0 = initial_state(self.obs[0], self.theta[6:], cfg.imm)
        self.state = (s0.cv.mean, s0.cv.cov, s0.cj.mean, s0.cj.cov, s0.mu)
        self.estimates = np.zeros((n, 6))
        self.mus = np.zeros((n, 2))
        self.thetas = np.zeros((n, 12))
        self.carry = noisenet.LstmCarry.zeros(cfg.hidden)
        self.cache = None
        self.carry_in = None
        self.deltas_in = None
        self.pos = 0
        self.windows = 0

    def global_estimates(self) -> np.ndarray:
        return self.estimates + self.origin

    @property
    def done(self) -> bool:
        return self.pos >= self.obs.shape[0]

    def _filter(self, start: int, stop: int):
        Q1, Q2, R = self.bank.matrices(self.theta)
        imm = self.cfg.imm
        return kernels.filter_steps(self.obs[start:stop], *self.state, self.bank.F1, Q1, self.bank.F2, Q2,
                                    self.bank.H1, self.bank.H2, R, imm.lam_array, imm.aug_array,
                                    imm.joseph)

    def step(self, net: noisenet.NetworkParams, keep: bool = False) -> WindowRecord | None:
        if self.done:
            raise RuntimeError("track already finished")
        n = self.obs.shape[0]
        start = self.pos
        stop = min(start + self.cfg.window, n)
        first = 1 if start == 0 else 0
        if first:
            x1, _, x2, _, mu = self.state
            self.estimates[0] = mu[0] * x1 + mu[1] * x2[:6]
            self.mus[0] = mu
            self.thetas[0] = self.theta
        xs, mus, X1, PP1, X2, PP2, MU, fail = self._filter(start + first, stop)
        if fail >= 0:
            raise FilterDivergence("adaptive filter diverged", step=start + first + int(fail))
        self.estimates[start + first:stop] = xs
        self.mus[start + first:stop] = mus
        self.thetas[start + first:stop] = self.theta
        self.state = (X1[-1], PP1[-1], X2[-1], PP2[-1], MU[-1])
        record = None
        if keep:
            truth = None if self.truth is None else self.truth[start + first:stop]
            record = WindowRecord(self.windows, start + first, stop, self.theta.copy(), xs,
                                  self.obs[start + first:stop], truth, (X1, PP1, X2, PP2, MU),
                                  self.cache, self.carry_in, self.deltas_in)
        # emit the scales for the next window from this window's residuals
        deltas = self.obs[start:stop] - self.estimates[start:stop]
        self.carry_in = self.carry
        self.deltas_in = deltas
        out, self.carry, self.cache = noisenet.forward(self.carry, deltas, net)
        self.theta = out.mapped.as_vector()
        self.pos = stop
        self.windows += 1
        return record


@dataclass
class TrackResult:
    estimates: np.ndarray
    mus: np.ndarray
    params: np.ndarray
    losses: list


def run_track(obs, truth, net: noisenet.NetworkParams, cfg: TrainConfig, T: float = 1.0) -> TrackResult:
    """Adaptive filtering of a whole track with a fixed network.

    Window 0 runs under ``net.initial`` when the network carries one,
    otherwise under ``cfg.initial``.  ``params`` holds the noise scales in
    force at each step.  Window losses are returned when ``truth`` is given.
    """
    runner = TrackRunner(obs, truth, cfg, T, net.initial)
    losses = []
    while not runner.done:
        try:
            rec = runner.step(net, keep=truth is not None)
        except FilterDivergence as exc:
            k = exc.step
            exc.partial = (runner.global_estimates()[:k], runner.mus[:k], runner.thetas[:k])
            raise
        if rec is not None and rec.estimates.shape[0]:
            losses.append(window_loss(rec.estimates, rec.truth, net, cfg.l1_weight))
    return TrackResult(runner.global_estimates(), runner.mus, runner.thetas, losses)


def _filter_grad(rec: WindowRecord, bank, cfg: TrainConfig) -> np.ndarray:
    """d(window MAE)/d(theta) through the filter steps of the window."""
    err = rec.estimates[:, :3] - rec.truth[:, :3]
    g_xs = np.zeros_like(rec.estimates)
    g_xs[:, :3] = np.sign(err) / (3.0 * err.shape[0])
    Q1, Q2, R = bank.matrices(rec.theta)
    imm = cfg.imm
    g_Q1, g_Q2, g_R = kernels.window_vjp(rec.obs, *rec.stacks, bank.F1, Q1, bank.F2, Q2, bank.H1,
                                          bank.H2, R, imm.lam_array, imm.aug_array, imm.joseph, g_xs)
    return bank.sigma_grad(rec.theta, g_Q1, g_Q2, g_R)


def backward(rec: WindowRecord, net: noisenet.NetworkParams, cfg: TrainConfig, T: float = 1.0,
             mae_weight: float = 1.0) -> np.ndarray:
    """Gradient of ``mae_weight * mae + l1_weight * l1`` for one window w.r.t. ``net.flat``.

    Window 0 (filtered with the initial scales) contributes only the L1
    term.
    """
    grad = cfg.l1_weight * np.sign(net.flat)
    if rec.cache is None or mae_weight == 0.0 or rec.estimates.shape[0] == 0:
        return grad
    g_theta = mae_weight * _filter_grad(rec, model_bank(float(T), cfg.imm.q_mode), cfg)
    return grad + noisenet.backward(rec.cache, g_theta, net)


def replay_window_loss(rec: WindowRecord, flat, net: noisenet.NetworkParams, cfg: TrainConfig,
                       T: float = 1.0) -> float:
    """Window total loss recomputed from scratch for parameters ``flat``.

    Uses the recorded boundary constants (entering filter state, residual
    inputs and LSTM carry); this is the finite-difference oracle for
    :func:`backward`.
    """
    p = noisenet.NetworkParams(net.hidden, net.trunk, flat, net.bounds, net.input_scale)
    out, _, _ = noisenet.forward(rec.carry_in, rec.deltas_in, p)
    theta = out.mapped.as_vector()
    bank = model_bank(float(T), cfg.imm.q_mode)
    Q1, Q2, R = bank.matrices(theta)
    X1, PP1, X2, PP2, MU = rec.stacks
    imm = cfg.imm
    xs, *_, fail = kernels.filter_steps(rec.obs, X1[0], PP1[0], X2[0], PP2[0], MU[0], bank.F1, Q1,
                                        bank.F2, Q2, bank.H1, bank.H2, R, imm.lam_array,
                                        imm.aug_array, imm.joseph)
    if fail >= 0:
        return float("nan")
    return window_loss(xs, rec.truth, p, cfg.l1_weight).total


class MomentumSGD:
    """Heavy-ball gradient descent with global-norm clipping."""

    def __init__(self, size: int, lr: float, momentum: float, clip_norm: float):
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = np.zeros(size)

    def step(self, flat: np.ndarray, grad: np.ndarray) -> float:
        norm = float(np.linalg.norm(grad))
        if norm > self.clip_norm:
            grad = grad * (self.clip_norm / norm)
        self.velocity *= self.momentum
        self.velocity -= self.lr * grad
        flat += self.velocity
        return norm


@dataclass
class TrainResult:
    net: noisenet.NetworkParams
    train_loss: list
    val_rmse: list
    best_epoch: int
    log: list
    skipped: int = 0


def validation_rmse(tracks, net, cfg: TrainConfig) -> float:
    """Total RMSE pooled over ``tracks`` (divergent tracks count as inf)."""
    sq = 0.0
    count = 0
    for tr in tracks:
        try:
            res = run_track(tr.obs, None, net, cfg, tr.T)
        except FilterDivergence:
            return float("inf")
        r = rmse(res.estimates, tr.truth)
        sq += 3.0 * len(tr) * r.rmse_total**2
        count += 3 * len(tr)
    return float(np.sqrt(sq / count)) if count else float("nan")


def train(train_tracks, val_tracks, cfg: TrainConfig, net: noisenet.NetworkParams | None = None,
          log_fn=None) -> TrainResult:
    """Online training: one momentum update every ``update_every`` windows.

    Tracks are visited in a seeded shuffled order each epoch.  The
    returned network is the one with the lowest validation RMSE, the
    initial network included (epoch 0).
    """
    if not train_tracks:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(cfg.seed)
    if net is None:
        net = noisenet.init_params(cfg.hidden, cfg.trunk, rng, cfg.bounds, cfg.initial, cfg.input_scale)
    net = net.copy()
    if net.initial is None:
        net.initial = cfg.initial.as_vector()
    opt = MomentumSGD(net.size, cfg.lr, cfg.momentum, cfg.clip_norm)
    score_tracks = val_tracks or train_tracks
    best = net.copy()
    best_rmse = validation_rmse(score_tracks, net, cfg)
    best_epoch = 0
    train_loss = []
    val_curve = [best_rmse]
    records = []
    skipped = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_tracks))
        total = 0.0
        nwin = 0
        failed = 0
        for ti in order:
            tr = train_tracks[ti]
            runner = TrackRunner(tr.obs, tr.truth, cfg, tr.T, net.initial)
            acc = np.zeros(net.size)
            pending = 0
            try:
                while not runner.done:
                    rec = runner.step(net, keep=True)
                    if rec.cache is None or rec.estimates.shape[0] == 0:
                        continue
                    loss = window_loss(rec.estimates, rec.truth, net, cfg.l1_weight)
                    g = backward(rec, net, cfg, tr.T)
                    gnorm = float(np.linalg.norm(g))
                    entry = {"epoch": epoch, "track": tr.name, "window": rec.index,
                             "mae": loss.mae, "l1": loss.l1, "grad_norm": gnorm}
                    records.append(entry)
                    if log_fn is not None:
                        log_fn(entry)
                    if not np.isfinite(gnorm):
                        log.warning("non-finite gradient on %s window %d; update skipped", tr.name, rec.index)
                        continue
                    total += loss.total
                    nwin += 1
                    acc += g
                    pending += 1
                    if pending == cfg.update_every:
                        opt.step(net.flat, acc / pending)
                        acc[:] = 0.0
                        pending = 0
                if pending:
                    opt.step(net.flat, acc / pending)
            except FilterDivergence as exc:
                failed += 1
                log.warning("track %s diverged at step %s; skipped", tr.name, exc.step)
        skipped += failed
        if failed == len(train_tracks):
            raise FilterDivergence(f"every training track diverged in epoch {epoch}")
        train_loss.append(total / max(nwin, 1))
        v = validation_rmse(score_tracks, net, cfg)
        val_curve.append(v)
        log.info("epoch %d: train loss %.4f, validation rmse %.4f", epoch, train_loss[-1], v)
        if v < best_rmse:
            best_rmse, best, best_epoch = v, net.copy(), epoch
    return TrainResult(best, train_loss, val_curve, best_epoch, records, skipped)


DEFAULT_GRID = {
    "vw": (0.03, 0.1, 0.3, 1.0, 3.0),
    "jw": (0.02, 0.05, 0.1, 0.3, 1.0),
    "r_pos": (5.0, 10.0, 20.0, 40.0, 80.0, 160.0),
}
VEL_TO_POS = 0.1


def grid_search(tracks, imm_cfg: ImmConfig, grid: dict | None = None):
    """Best isotropic fixed noise scales by pooled total RMSE over ``tracks``.

    The velocity observation scale is tied to the position scale
    (``VEL_TO_POS``).  Returns (NoiseParams, pooled RMSE, table of all
    grid points); divergent points score inf.
    """
    from .imm import run_fixed

    grid = grid or DEFAULT_GRID
    table = []
    for vw in grid["vw"]:
        for jw in grid["jw"]:
            for rp in grid["r_pos"]:
                p = NoiseParams.isotropic(vw, jw, rp, rp * VEL_TO_POS)
                sq = 0.0
                count = 0
                for tr in tracks:
                    try:
                        xs, _ = run_fixed(tr.obs, p, tr.T, imm_cfg)
                    except FilterDivergence:
                        sq = float("inf")
                        break
                    sq += 3.0 * len(tr) * rmse(xs, tr.truth).rmse_total ** 2
                    count += 3 * len(tr)
                table.append(((vw, jw, rp), float(np.sqrt(sq / count)) if count else float("inf")))
    best, score = min(table, key=lambda item: item[1])
    return NoiseParams.isotropic(best[0], best[1], best[2], best[2] * VEL_TO_POS), score, table
