"""Numba inner loops for the trajectory loss and its adjoint.

These mirror the pure-numpy reference path in :mod:`lumpfit.gradients` for
the one-hidden-layer closure network, with the batch and hidden-unit loops
written out explicitly. Semantics are identical up to floating-point
summation order; the test suite cross-checks the two paths. Set
``LUMPFIT_PURE_NUMPY=1`` to disable this module.

All kernels take the network as (W1 (H,2), b1 (H,), W2 (1,H), b2 (1,)) and
the flat gradient layout is the canonical ordering: W1 row-major [0, 2H),
W2 [2H, 3H), b1 [3H, 4H), b2 [4H], log-capacitance [4H+1].
"""

import os

import numpy as np

AVAILABLE = False
if not os.environ.get("LUMPFIT_PURE_NUMPY"):
    try:
        from numba import njit

        AVAILABLE = True
    except ImportError:
        pass

if not AVAILABLE:
    def njit(*args, **kwargs):   # pragma: no cover - import-time fallback
        def deco(fn):
            return fn
        return deco


@njit(cache=True, inline="always")
def _slope_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0, T, P):
    x0 = T / T0
    x1 = P / P0
    acc = 0.0
    for j in range(W1.shape[0]):
        z = W1[j, 0] * x0 + W1[j, 1] * x1 + b1[j]
        s = 1.0 / (1.0 + np.exp(-z))
        acc += W2[0, j] * (z * s)
    z2 = acc + b2[0]
    q = Q0 * (1.0 / (1.0 + np.exp(-z2)))
    return (q - h_coef * (T - t_sink)) / C


@njit(cache=True)
def rollout(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
            T_init, P_half, n_points, m, dt):
    """Fixed-step RK4 over the batch; returns (colloc, states, slopes).

    Blow-ups propagate as NaN/inf in the collocation states; the caller
    checks finiteness.
    """
    nb = T_init.shape[0]
    S = (n_points - 1) * m
    h = dt / m
    colloc = np.empty((n_points, nb))
    states = np.empty((S, nb))
    slopes = np.empty((S, 4, nb))
    T = T_init.copy()
    for i in range(nb):
        colloc[0, i] = T[i]
    s = 0
    for jn in range(n_points - 1):
        for _ in range(m):
            li = 2 * s
            for i in range(nb):
                Ti = T[i]
                k1 = _slope_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
                                Ti, P_half[i, li])
                k2 = _slope_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
                                Ti + 0.5 * h * k1, P_half[i, li + 1])
                k3 = _slope_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
                                Ti + 0.5 * h * k2, P_half[i, li + 1])
                k4 = _slope_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
                                Ti + h * k3, P_half[i, li + 2])
                states[s, i] = Ti
                slopes[s, 0, i] = k1
                slopes[s, 1, i] = k2
                slopes[s, 2, i] = k3
                slopes[s, 3, i] = k4
                T[i] = Ti + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            s += 1
        for i in range(nb):
            colloc[jn + 1, i] = T[i]
    return colloc, states, slopes


@njit(cache=True, inline="always")
def _vjp_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
             T, P, w, grad, track_log_c, zbuf, sbuf):
    """Accumulate w * df/dparams into grad; return (w * df/dT, w * df/d(x1))."""
    H = W1.shape[0]
    x0 = T / T0
    x1 = P / P0
    acc = 0.0
    for j in range(H):
        z = W1[j, 0] * x0 + W1[j, 1] * x1 + b1[j]
        s = 1.0 / (1.0 + np.exp(-z))
        zbuf[j] = z
        sbuf[j] = s
        acc += W2[0, j] * (z * s)
    z2 = acc + b2[0]
    s2 = 1.0 / (1.0 + np.exp(-z2))
    q = Q0 * s2
    f = (q - h_coef * (T - t_sink)) / C
    if track_log_c:
        grad[4 * H + 1] -= w * f          # df/dlogC = -f
    dz2 = (w / C) * Q0 * s2 * (1.0 - s2)
    gT_net = 0.0
    gP_net = 0.0
    for j in range(H):
        z = zbuf[j]
        s = sbuf[j]
        grad[2 * H + j] += dz2 * (z * s)  # W2
        dz1 = dz2 * W2[0, j] * (s * (1.0 + z * (1.0 - s)))
        grad[2 * j] += dz1 * x0           # W1[:, 0]
        grad[2 * j + 1] += dz1 * x1       # W1[:, 1]
        grad[3 * H + j] += dz1            # b1
        gT_net += W1[j, 0] * dz1
        gP_net += W1[j, 1] * dz1
    grad[4 * H] += dz2                    # b2
    return gT_net / T0 - w * (h_coef / C), gP_net


@njit(cache=True)
def sysid_adjoint(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
                  states, slopes, P_half, res_grad, m, dt, grad):
    """Reverse sweep over the recorded steps; grad gains d(loss)/d(theta, logC)."""
    S, nb = states.shape
    H = W1.shape[0]
    h = dt / m
    n_points = res_grad.shape[0]
    zbuf = np.empty(H)
    sbuf = np.empty(H)
    lam = res_grad[n_points - 1].copy()
    for s in range(S - 1, -1, -1):
        li = 2 * s
        for i in range(nb):
            Ti = states[s, i]
            k1 = slopes[s, 0, i]
            k2 = slopes[s, 1, i]
            k3 = slopes[s, 2, i]
            u2 = Ti + 0.5 * h * k1
            u3 = Ti + 0.5 * h * k2
            u4 = Ti + h * k3
            g = lam[i]
            w4 = (h / 6.0) * g
            d4, _ = _vjp_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
                             u4, P_half[i, li + 2], w4, grad, True, zbuf, sbuf)
            w3 = (h / 3.0) * g + h * d4
            d3, _ = _vjp_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
                             u3, P_half[i, li + 1], w3, grad, True, zbuf, sbuf)
            w2 = (h / 3.0) * g + 0.5 * h * d3
            d2, _ = _vjp_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
                             u2, P_half[i, li + 1], w2, grad, True, zbuf, sbuf)
            w1 = (h / 6.0) * g + 0.5 * h * d2
            d1, _ = _vjp_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, P0, Q0,
                             Ti, P_half[i, li], w1, grad, True, zbuf, sbuf)
            lam[i] = g + d1 + d2 + d3 + d4
        if s % m == 0 and s > 0:
            jn = s // m
            for i in range(nb):
                lam[i] += res_grad[jn, i]
    for i in range(nb):
        lam[i] += res_grad[0, i]
    return lam


@njit(cache=True)
def control_adjoint(W1, b1, W2, b2, C, h_coef, t_sink, T0, Q0,
                    states, slopes, p_unit, res_grad, m, dt, lat_up):
    """As sysid_adjoint with the model frozen: per-lattice upstreams on the
    unit power input accumulate into lat_up for the profile-network chain."""
    S, nb = states.shape
    H = W1.shape[0]
    h = dt / m
    n_points = res_grad.shape[0]
    scratch = np.zeros(4 * H + 2)
    zbuf = np.empty(H)
    sbuf = np.empty(H)
    lam = res_grad[n_points - 1].copy()
    for s in range(S - 1, -1, -1):
        li = 2 * s
        for i in range(nb):
            Ti = states[s, i]
            k1 = slopes[s, 0, i]
            k2 = slopes[s, 1, i]
            k3 = slopes[s, 2, i]
            u2 = Ti + 0.5 * h * k1
            u3 = Ti + 0.5 * h * k2
            u4 = Ti + h * k3
            g = lam[i]
            w4 = (h / 6.0) * g
            d4, gp = _vjp_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, 1.0, Q0,
                              u4, p_unit[li + 2], w4, scratch, False, zbuf, sbuf)
            lat_up[li + 2] += gp
            w3 = (h / 3.0) * g + h * d4
            d3, gp = _vjp_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, 1.0, Q0,
                              u3, p_unit[li + 1], w3, scratch, False, zbuf, sbuf)
            lat_up[li + 1] += gp
            w2 = (h / 3.0) * g + 0.5 * h * d3
            d2, gp = _vjp_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, 1.0, Q0,
                              u2, p_unit[li + 1], w2, scratch, False, zbuf, sbuf)
            lat_up[li + 1] += gp
            w1 = (h / 6.0) * g + 0.5 * h * d2
            d1, gp = _vjp_one(W1, b1, W2, b2, C, h_coef, t_sink, T0, 1.0, Q0,
                              Ti, p_unit[li], w1, scratch, False, zbuf, sbuf)
            lat_up[li] += gp
            lam[i] = g + d1 + d2 + d3 + d4
        if s % m == 0 and s > 0:
            jn = s // m
            for i in range(nb):
                lam[i] += res_grad[jn, i]
    for i in range(nb):
        lam[i] += res_grad[0, i]
    return lam
