"""Hot numeric kernels: Kalman/IMM forward steps and their reverse passes.

Every function here is written in the numpy subset numba understands and
is compiled with ``@njit`` unless ``ADSBTRACK_DISABLE_NUMBA`` is set.  The
public modules (``kalman``, ``imm``, ``train``) call into these so both
execution paths share one definition of the arithmetic.

Array arguments must be C-contiguous float64.  Model 0 is the 6-state
constant-velocity filter, model 1 the 12-state constant-jerk filter.
"""

import numpy as np

from ._jit import NUMBA_ENABLED, jit

LOG_2PI = float(np.log(2.0 * np.pi))
LOGLIK_FLOOR = -700.0
R_INFLATION = 10.0

# status bits returned by imm_forward
ZERO_MIX_COLUMN = 1
R_INFLATED = 2
SINGULAR = 4


def _chol_inverse_loops(S):
    n = S.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = S[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not (d > 0.0 and d < np.inf):
            return np.zeros((n, n)), 0.0, False
        ljj = np.sqrt(d)
        L[j, j] = ljj
        for i in range(j + 1, n):
            v = S[i, j]
            for k in range(j):
                v -= L[i, k] * L[j, k]
            L[i, j] = v / ljj
    Li = np.zeros((n, n))
    logdet = 0.0
    for j in range(n):
        Li[j, j] = 1.0 / L[j, j]
        logdet += 2.0 * np.log(L[j, j])
        for i in range(j + 1, n):
            v = 0.0
            for k in range(j, i):
                v -= L[i, k] * Li[k, j]
            Li[i, j] = v / L[i, i]
    return np.ascontiguousarray(Li.T) @ Li, logdet, True


def _chol_inverse_numpy(S):
    n = S.shape[0]
    if not np.all(np.isfinite(S)):
        return np.zeros((n, n)), 0.0, False
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return np.zeros((n, n)), 0.0, False
    Li = np.linalg.solve(L, np.eye(n))
    return Li.T @ Li, 2.0 * float(np.sum(np.log(np.diag(L)))), True


if NUMBA_ENABLED:
    chol_inverse = jit(_chol_inverse_loops)
else:
    chol_inverse = _chol_inverse_numpy


@jit
def _tr(A):
    return np.ascontiguousarray(A.T)


@jit
def _sym(A):
    return 0.5 * (A + _tr(A))


@jit
def kf_predict(x, P, F, Q):
    xp = F @ x
    Pp = _sym(F @ P @ _tr(F) + Q)
    return xp, Pp


@jit
def _update_full(xp, Pp, o, H, R, joseph):
    n = Pp.shape[0]
    m = H.shape[0]
    Ht = _tr(H)
    A = Pp @ Ht
    S0 = H @ A
    infl = 1.0
    S = S0 + R
    Si, logdet, ok = chol_inverse(S)
    if not ok:
        infl = R_INFLATION
        S = S0 + infl * R
        Si, logdet, ok = chol_inverse(S)
    nu = o - H @ xp
    K = A @ Si
    x = xp + K @ nu
    C = H @ Pp
    if joseph:
        M = np.eye(n) - K @ H
        P = M @ Pp @ _tr(M) + K @ (infl * R) @ _tr(K)
    else:
        P = Pp - K @ C
    P = _sym(P)
    ll = -0.5 * (nu @ (Si @ nu) + logdet + m * LOG_2PI)
    return x, P, nu, S, Si, K, A, C, ll, infl, ok


@jit
def kf_update(xp, Pp, o, H, R, joseph):
    """Returns (x, P, innovation, S, loglik, inflation, ok)."""
    x, P, nu, S, Si, K, A, C, ll, infl, ok = _update_full(xp, Pp, o, H, R, joseph)
    return x, P, nu, S, ll, infl, ok


@jit
def mixing(mu, lam):
    """Predicted model probabilities and the mixing matrix (columns = target)."""
    r = mu.shape[0]
    cbar = np.zeros(r)
    for j in range(r):
        for i in range(r):
            cbar[j] += lam[i, j] * mu[i]
    mix = np.zeros((r, r))
    status = 0
    for j in range(r):
        if cbar[j] > 0.0:
            for i in range(r):
                mix[i, j] = mu[i] * lam[i, j] / cbar[j]
        else:
            status = ZERO_MIX_COLUMN
            for i in range(r):
                mix[i, j] = 1.0 / r
    return cbar, mix, status


@jit
def mix2(s1, Ps1, s2, Ps2, m1, m2):
    x0 = m1 * s1 + m2 * s2
    d1 = s1 - x0
    d2 = s2 - x0
    P0 = m1 * (Ps1 + np.outer(d1, d1)) + m2 * (Ps2 + np.outer(d2, d2))
    return x0, _sym(P0)


@jit
def lift(x, P, aug_var):
    xl = np.zeros(12)
    xl[:6] = x
    Pl = np.zeros((12, 12))
    Pl[:6, :6] = P
    for k in range(6):
        Pl[6 + k, 6 + k] = aug_var[k]
    return xl, Pl


@jit
def combine(y1, Py1, y2, Py2, mu):
    xc = mu[0] * y1 + mu[1] * y2
    d1 = y1 - xc
    d2 = y2 - xc
    Pc = mu[0] * (Py1 + np.outer(d1, d1)) + mu[1] * (Py2 + np.outer(d2, d2))
    return xc, _sym(Pc)


@jit
def model_probabilities(ll, cbar):
    """Normalised L_j * cbar_j, evaluated in log space after flooring."""
    r = ll.shape[0]
    a = np.empty(r)
    for j in range(r):
        a[j] = max(ll[j], LOGLIK_FLOOR) + np.log(cbar[j])
    amax = np.max(a)
    w = np.exp(a - amax)
    return w / np.sum(w)


@jit
def imm_forward(x1, P1, x2, P2, mu, o, F1, Q1, F2, Q2, H1, H2, R, lam, aug_var, joseph):
    """One interaction/filter/probability/combination cycle.

    Returns (x1, P1, x2, P2, mu, xc, Pc, loglik[2], status).
    """
    cbar, mix, status = mixing(mu, lam)
    x01, P01 = mix2(x1, P1, np.ascontiguousarray(x2[:6]), np.ascontiguousarray(P2[:6, :6]),
                    mix[0, 0], mix[1, 0])
    xl, Pl = lift(x1, P1, aug_var)
    x02, P02 = mix2(xl, Pl, x2, P2, mix[0, 1], mix[1, 1])
    xp1, Pp1 = kf_predict(x01, P01, F1, Q1)
    xp2, Pp2 = kf_predict(x02, P02, F2, Q2)
    x1n, P1n, nu1, S1, Si1, K1, A1, C1, ll1, inf1, ok1 = _update_full(xp1, Pp1, o, H1, R, joseph)
    x2n, P2n, nu2, S2, Si2, K2, A2, C2, ll2, inf2, ok2 = _update_full(xp2, Pp2, o, H2, R, joseph)
    if inf1 != 1.0 or inf2 != 1.0:
        status |= R_INFLATED
    if not (ok1 and ok2):
        status |= SINGULAR
    ll = np.array([ll1, ll2])
    mun = model_probabilities(ll, cbar)
    xc, Pc = combine(x1n, P1n, np.ascontiguousarray(x2n[:6]), np.ascontiguousarray(P2n[:6, :6]), mun)
    return x1n, P1n, x2n, P2n, mun, xc, Pc, ll, status


@jit
def _update_vjp(Pp, H, R, joseph, nu, Si, K, A, C, infl, g_x, g_P, g_ll):
    n = Pp.shape[0]
    m = H.shape[0]
    Ht = _tr(H)
    G = _sym(g_P)
    Reff = infl * R
    g_Reff = np.zeros((m, m))
    if joseph:
        M = np.eye(n) - K @ H
        g_Pp = _tr(M) @ G @ M
        g_M = G @ M @ _tr(Pp) + _tr(G) @ M @ Pp
        g_K = G @ K @ _tr(Reff) + _tr(G) @ K @ Reff - g_M @ Ht
        g_Reff += _tr(K) @ G @ K
    else:
        g_Pp = G.copy()
        g_K = -(G @ _tr(C))
        g_Pp += Ht @ (-(_tr(K) @ G))
    g_xp = g_x.copy()
    g_K += np.outer(g_x, nu)
    g_nu = _tr(K) @ g_x
    g_nu -= 0.5 * g_ll * ((Si + _tr(Si)) @ nu)
    g_Si = -0.5 * g_ll * np.outer(nu, nu) + _tr(A) @ g_K
    g_S = -0.5 * g_ll * _tr(Si) - _tr(Si) @ g_Si @ _tr(Si)
    g_A = g_K @ _tr(Si) + Ht @ g_S
    g_Pp += g_A @ H
    g_xp -= Ht @ g_nu
    g_Reff += g_S
    return g_xp, g_Pp, infl * g_Reff


@jit
def _predict_vjp(F, g_xp, g_Pp):
    Gp = _sym(g_Pp)
    Ft = _tr(F)
    return Ft @ g_xp, Ft @ Gp @ F, Gp


@jit
def _mix2_vjp(s1, Ps1, s2, Ps2, m1, m2, x0, g_x0, g_P0):
    G0 = _sym(g_P0)
    d1 = s1 - x0
    d2 = s2 - x0
    g_Ps1 = m1 * G0
    g_Ps2 = m2 * G0
    g_d1 = m1 * ((G0 + _tr(G0)) @ d1)
    g_d2 = m2 * ((G0 + _tr(G0)) @ d2)
    g_x0t = g_x0 - g_d1 - g_d2
    g_s1 = g_d1 + m1 * g_x0t
    g_s2 = g_d2 + m2 * g_x0t
    g_m1 = np.sum(G0 * (Ps1 + np.outer(d1, d1))) + s1 @ g_x0t
    g_m2 = np.sum(G0 * (Ps2 + np.outer(d2, d2))) + s2 @ g_x0t
    return g_s1, g_Ps1, g_s2, g_Ps2, g_m1, g_m2


@jit
def imm_vjp(x1, P1, x2, P2, mu, o, F1, Q1, F2, Q2, H1, H2, R, lam, aug_var, joseph,
            g_x1n, g_P1n, g_x2n, g_P2n, g_mun, g_xc):
    """Reverse pass of :func:`imm_forward`.

    Given adjoints of the step outputs (per-model posteriors, model
    probabilities and the combined mean), returns adjoints of the step
    inputs (x1, P1, x2, P2, mu) and of the noise matrices (Q1, Q2, R).
    The forward computation is replayed internally.
    """
    # ---- forward replay
    cbar, mix, status = mixing(mu, lam)
    s21 = np.ascontiguousarray(x2[:6])
    Ps21 = np.ascontiguousarray(P2[:6, :6])
    x01, P01 = mix2(x1, P1, s21, Ps21, mix[0, 0], mix[1, 0])
    xl, Pl = lift(x1, P1, aug_var)
    x02, P02 = mix2(xl, Pl, x2, P2, mix[0, 1], mix[1, 1])
    xp1, Pp1 = kf_predict(x01, P01, F1, Q1)
    xp2, Pp2 = kf_predict(x02, P02, F2, Q2)
    x1n, P1n, nu1, S1, Si1, K1, A1, C1, ll1, inf1, ok1 = _update_full(xp1, Pp1, o, H1, R, joseph)
    x2n, P2n, nu2, S2, Si2, K2, A2, C2, ll2, inf2, ok2 = _update_full(xp2, Pp2, o, H2, R, joseph)
    ll = np.array([ll1, ll2])
    mun = model_probabilities(ll, cbar)
    y2 = np.ascontiguousarray(x2n[:6])

    # ---- reverse
    g_x1n = g_x1n + mun[0] * g_xc
    g_x2n = g_x2n.copy()
    g_x2n[:6] += mun[1] * g_xc
    g_mun = g_mun.copy()
    g_mun[0] += x1n @ g_xc
    g_mun[1] += y2 @ g_xc

    g_a = mun * (g_mun - mun @ g_mun)
    g_ll = np.zeros(2)
    g_cbar = np.zeros(2)
    for j in range(2):
        if ll[j] > LOGLIK_FLOOR:
            g_ll[j] = g_a[j]
        if cbar[j] > 0.0:
            g_cbar[j] = g_a[j] / cbar[j]

    g_xp1, g_Pp1, g_R1 = _update_vjp(Pp1, H1, R, joseph, nu1, Si1, K1, A1, C1, inf1,
                                     g_x1n, g_P1n, g_ll[0])
    g_xp2, g_Pp2, g_R2 = _update_vjp(Pp2, H2, R, joseph, nu2, Si2, K2, A2, C2, inf2,
                                     g_x2n, g_P2n, g_ll[1])
    g_R = g_R1 + g_R2
    g_x01, g_P01, g_Q1 = _predict_vjp(F1, g_xp1, g_Pp1)
    g_x02, g_P02, g_Q2 = _predict_vjp(F2, g_xp2, g_Pp2)

    g_s11, g_Ps11, g_s21, g_Ps21, g_m00, g_m10 = _mix2_vjp(
        x1, P1, s21, Ps21, mix[0, 0], mix[1, 0], x01, g_x01, g_P01)
    g_s12, g_Ps12, g_s22, g_Ps22, g_m01, g_m11 = _mix2_vjp(
        xl, Pl, x2, P2, mix[0, 1], mix[1, 1], x02, g_x02, g_P02)
    g_mix = np.array([[g_m00, g_m01], [g_m10, g_m11]])

    g_x1 = g_s11 + g_s12[:6]
    g_P1 = g_Ps11 + g_Ps12[:6, :6]
    g_x2 = g_s22.copy()
    g_x2[:6] += g_s21
    g_P2 = g_Ps22.copy()
    g_P2[:6, :6] += g_Ps21

    g_mu = np.zeros(2)
    for j in range(2):
        if cbar[j] > 0.0:
            for i in range(2):
                g_mu[i] += g_mix[i, j] * lam[i, j] / cbar[j]
                g_cbar[j] -= g_mix[i, j] * mix[i, j] / cbar[j]
    for i in range(2):
        for j in range(2):
            g_mu[i] += lam[i, j] * g_cbar[j]
    return g_x1, g_P1, g_x2, g_P2, g_mu, g_Q1, g_Q2, g_R


@jit
def filter_track(obs, x1, P1, x2, P2, mu, F1, Q1, F2, Q2, H1, H2, R, lam, aug_var, joseph):
    """Run :func:`imm_forward` over rows of ``obs`` with fixed noise matrices.

    Returns (combined means (N, 6), model probabilities (N, 2), final
    state tuple, index of the first failing step or -1).  Row 0 of the
    outputs is the supplied initial state; filtering starts at row 1.
    """
    N = obs.shape[0]
    xs = np.zeros((N, 6))
    mus = np.zeros((N, 2))
    xs[0] = mu[0] * x1 + mu[1] * x2[:6]
    mus[0] = mu
    fail = -1
    for k in range(1, N):
        x1, P1, x2, P2, mu, xc, Pc, ll, status = imm_forward(
            x1, P1, x2, P2, mu, np.ascontiguousarray(obs[k]), F1, Q1, F2, Q2, H1, H2, R, lam,
            aug_var, joseph)
        if (status & SINGULAR) or not np.all(np.isfinite(xc)):
            fail = k
            break
        xs[k] = xc
        mus[k] = mu
    return xs, mus, x1, P1, x2, P2, mu, fail


@jit
def filter_steps(obs, x1, P1, x2, P2, mu, F1, Q1, F2, Q2, H1, H2, R, lam, aug_var, joseph):
    """Run :func:`imm_forward` on every row of ``obs`` and keep the step inputs.

    Returns (combined means (n, 6), model probabilities (n, 2), the
    per-step input states X1 (n+1, 6), P1 (n+1, 6, 6), X2 (n+1, 12),
    P2 (n+1, 12, 12), MU (n+1, 2), and the first failing row or -1).
    Row k of the input stacks is the state entering step k; row n is
    the state after the last step.
    """
    n = obs.shape[0]
    xs = np.zeros((n, 6))
    mus = np.zeros((n, 2))
    X1 = np.zeros((n + 1, 6))
    PP1 = np.zeros((n + 1, 6, 6))
    X2 = np.zeros((n + 1, 12))
    PP2 = np.zeros((n + 1, 12, 12))
    MU = np.zeros((n + 1, 2))
    X1[0] = x1
    PP1[0] = P1
    X2[0] = x2
    PP2[0] = P2
    MU[0] = mu
    fail = -1
    for k in range(n):
        x1, P1, x2, P2, mu, xc, Pc, ll, status = imm_forward(
            x1, P1, x2, P2, mu, np.ascontiguousarray(obs[k]), F1, Q1, F2, Q2, H1, H2, R, lam,
            aug_var, joseph)
        if (status & SINGULAR) or not np.all(np.isfinite(xc)):
            fail = k
            break
        xs[k] = xc
        mus[k] = mu
        X1[k + 1] = x1
        PP1[k + 1] = P1
        X2[k + 1] = x2
        PP2[k + 1] = P2
        MU[k + 1] = mu
    return xs, mus, X1, PP1, X2, PP2, MU, fail


@jit
def window_vjp(obs, X1, PP1, X2, PP2, MU, F1, Q1, F2, Q2, H1, H2, R, lam, aug_var, joseph, g_xs):
    """Adjoints of (Q1, Q2, R) for a run of :func:`filter_steps`.

    ``g_xs`` (n, 6) holds the loss adjoint of each combined mean.  The
    state entering the run is a constant.
    """
    n = obs.shape[0]
    g_x1 = np.zeros(6)
    g_P1 = np.zeros((6, 6))
    g_x2 = np.zeros(12)
    g_P2 = np.zeros((12, 12))
    g_mu = np.zeros(2)
    g_Q1 = np.zeros_like(Q1)
    g_Q2 = np.zeros_like(Q2)
    g_R = np.zeros_like(R)
    for k in range(n - 1, -1, -1):
        g_x1, g_P1, g_x2, g_P2, g_mu, gq1, gq2, gr = imm_vjp(
            X1[k], PP1[k], X2[k], PP2[k], MU[k], np.ascontiguousarray(obs[k]),
            F1, Q1, F2, Q2, H1, H2, R, lam, aug_var, joseph,
            g_x1, g_P1, g_x2, g_P2, g_mu, np.ascontiguousarray(g_xs[k]))
        g_Q1 += gq1
        g_Q2 += gq2
        g_R += gr
    return g_Q1, g_Q2, g_R
