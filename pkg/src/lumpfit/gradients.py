"""Exact gradients through the fixed-step RK4 solve (discrete adjoint).

The forward rollout records every RK4 stage; the adjoint sweep walks the
recorded steps in reverse, applying hand-derived stage reverse rules. The
result is the exact derivative of the *discretized* loss (the RK4 map
composed with the loss), not an approximation of a continuous adjoint.

The sweep is generic over "batched rhs" objects exposing

    slope(T, li)              -> dT/dt for the state batch T at lattice index li
    vjp(T, li, w, grad_out)   -> accumulate w * df/dparams into grad_out,
                                 return w * df/dT

where ``li`` indexes a half-substep time lattice (stage times t, t+h/2, t+h
of substep s live at lattice indices 2s, 2s+1, 2s+2). Two instances live
here: the system-identification rhs (gradients w.r.t. network weights and
log-capacitance) and a power-profile rhs used by the control module
(gradients w.r.t. the profile network, model frozen).

A central finite-difference oracle over the same loss provides the
independent verification path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .errors import NonFiniteGradient, NonFiniteState
from .model import LumpedModelParams

try:
    from . import _kernels
except ImportError:   # pragma: no cover - numba import failure
    _kernels = None

__all__ = [
    "LossSpec",
    "AdjointWorkspace",
    "SysIdRhs",
    "PowerNetRhs",
    "rollout",
    "adjoint_sweep",
    "pack_params",
    "unpack_params",
    "sysid_loss_terms",
    "sysid_loss",
    "loss_and_gradient",
    "finite_difference_gradient",
    "central_difference",
]


@dataclass(frozen=True)
class LossSpec:
    """Discretization of the trajectory loss: internal RK4 substeps per
    collocation interval."""

    substeps: int = 2

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass
class AdjointWorkspace:
    """Recorded forward pass: substep start states and the four stage slopes.

    Consumed in reverse step order exactly once per adjoint sweep; the
    intermediate stage states are rebuilt with the forward pass's arithmetic.
    """

    dt: float
    substeps: int
    states: np.ndarray   # (S, nb)
    slopes: np.ndarray   # (S, 4, nb)


def _net_value(net: nn.MLPParams, X: np.ndarray) -> np.ndarray:
    # same arithmetic as nn.forward, without cache bookkeeping
    a = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = w @ a + b[:, None]
        s = nn.sigmoid(z)
        a = net.output_scale * s if i == last else z * s
    return a[0]


class SysIdRhs:
    """Batched lumped-model rhs; gradient slots are the canonical ordering
    [net weights layer-by-layer, net biases, log_capacitance]."""

    def __init__(self, params: LumpedModelParams, P_half: np.ndarray):
        self.net = params.heat_net
        self.P_half = P_half            # (nb, L) power on the half-substep lattice
        self.T0 = params.T0
        self.P0 = params.P0
        self.h = params.h
        self.T_sink = params.T_sink
        self.C = params.capacitance
        self.n_theta = nn.n_params(self.net.layer_dims)
        self.n_grad = self.n_theta + 1
        self._X = np.empty((2, P_half.shape[0]))

    def slope(self, T, li):
        X = self._X
        X[0] = T / self.T0
        X[1] = self.P_half[:, li] / self.P0
        q_in = _net_value(self.net, X)
        return (q_in - self.h * (T - self.T_sink)) / self.C

    def vjp(self, T, li, w, grad_out):
        X = self._X
        X[0] = T / self.T0
        X[1] = self.P_half[:, li] / self.P0
        q_in, cache = nn.forward_cached(self.net, X)
        f = (q_in - self.h * (T - self.T_sink)) / self.C
        grad_out[self.n_theta] -= float(w @ f)          # df/dlogC = -f
        _, gX = nn.backward(self.net, X, upstream=w / self.C, cache=cache, grad_out=grad_out)
        return gX[0] / self.T0 - w * (self.h / self.C)

    def finalize(self, grad_out):
        pass


class PowerNetRhs:
    """Lumped-model rhs with P(t) from a time->power network; gradient slots
    are the profile network's canonical ordering (the model stays frozen)."""

    def __init__(self, model: LumpedModelParams, profile_net: nn.MLPParams,
                 time_scale: float, lattice_times: np.ndarray):
        self.net = model.heat_net
        self.T0 = model.T0
        self.h = model.h
        self.T_sink = model.T_sink
        self.C = model.capacitance
        self.power_scale = model.P0
        self._tt = (lattice_times / time_scale)[None, :]
        out, self._profile_cache = nn.forward_cached(profile_net, self._tt)
        self.p_unit = out / model.P0                     # the model's P/P0 input
        self.profile_net = profile_net
        self.n_grad = nn.n_params(profile_net.layer_dims)
        self._lattice_upstream = np.zeros(lattice_times.size)
        self._model_scratch = np.zeros(nn.n_params(self.net.layer_dims))
        self._X = np.empty((2, 1))

    def slope(self, T, li):
        X = self._X
        X[0] = T / self.T0
        X[1] = self.p_unit[li]
        q_in = _net_value(self.net, X)
        return (q_in - self.h * (T - self.T_sink)) / self.C

    def vjp(self, T, li, w, grad_out):
        X = self._X
        X[0] = T / self.T0
        X[1] = self.p_unit[li]
        _, cache = nn.forward_cached(self.net, X)
        self._model_scratch[:] = 0.0
        _, gX = nn.backward(self.net, X, upstream=w / self.C,
                            cache=cache, grad_out=self._model_scratch)
        self._lattice_upstream[li] += float(np.sum(gX[1]))
        return gX[0] / self.T0 - w * (self.h / self.C)

    def finalize(self, grad_out):
        """Route the collected per-stage power upstreams through the profile net."""
        upstream = self._lattice_upstream / self.power_scale
        nn.backward(self.profile_net, self._tt, upstream=upstream,
                    cache=self._profile_cache, grad_out=grad_out)


def rollout(rhs, T_init, n_points: int, substeps: int, dt: float):
    """Fixed-step RK4 over the collocation grid, recording every stage.

    Returns (collocation states (n_points, nb), AdjointWorkspace).
    """
    T = np.asarray(T_init, dtype=float).copy()
    nb = T.size
    S = (n_points - 1) * substeps
    h = dt / substeps
    colloc = np.empty((n_points, nb))
    states = np.empty((S, nb))
    slopes = np.empty((S, 4, nb))
    colloc[0] = T
    s = 0
    for j in range(n_points - 1):
        for _ in range(substeps):
            li = 2 * s
            k1 = rhs.slope(T, li)
            k2 = rhs.slope(T + 0.5 * h * k1, li + 1)
            k3 = rhs.slope(T + 0.5 * h * k2, li + 1)
            k4 = rhs.slope(T + h * k3, li + 2)
            states[s] = T
            slopes[s, 0] = k1
            slopes[s, 1] = k2
            slopes[s, 2] = k3
            slopes[s, 3] = k4
            T = T + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            s += 1
        if not np.all(np.isfinite(T)):
            raise NonFiniteState(f"trajectory non-finite near collocation point {j + 1}")
        colloc[j + 1] = T
    return colloc, AdjointWorkspace(dt=dt, substeps=substeps, states=states, slopes=slopes)


def adjoint_sweep(rhs, ws: AdjointWorkspace, res_grad: np.ndarray, grad_out: np.ndarray):
    """Reverse accumulation over the recorded steps.

    ``res_grad`` is dL/d(state) at each collocation node, shape (n_points, nb).
    Parameter partials accumulate into ``grad_out``; the return value is
    dL/d(initial state).
    """
    S = ws.states.shape[0]
    m = ws.substeps
    h = ws.dt / m
    lam = res_grad[-1].astype(float).copy()
    for s in range(S - 1, -1, -1):
        T = ws.states[s]
        k1, k2, k3 = ws.slopes[s, 0], ws.slopes[s, 1], ws.slopes[s, 2]
        u2 = T + 0.5 * h * k1
        u3 = T + 0.5 * h * k2
        u4 = T + h * k3
        li = 2 * s
        g = lam
        w4 = (h / 6.0) * g
        d4 = rhs.vjp(u4, li + 2, w4, grad_out)
        w3 = (h / 3.0) * g + h * d4
        d3 = rhs.vjp(u3, li + 1, w3, grad_out)
        w2 = (h / 3.0) * g + 0.5 * h * d3
        d2 = rhs.vjp(u2, li + 1, w2, grad_out)
        w1 = (h / 6.0) * g + 0.5 * h * d2
        d1 = rhs.vjp(T, li, w1, grad_out)
        lam = g + d1 + d2 + d3 + d4
        if s % m == 0 and s > 0:
            lam = lam + res_grad[s // m]
    rhs.finalize(grad_out)
    return lam + res_grad[0]


def pack_params(params: LumpedModelParams) -> np.ndarray:
    """Canonical flat vector: network weights, network biases, log C."""
    return np.concatenate([nn.flatten_params(params.heat_net), [params.log_capacitance]])


def unpack_params(vector: np.ndarray, template: LumpedModelParams) -> LumpedModelParams:
    vector = np.asarray(vector, dtype=float)
    net = nn.unflatten_params(vector[:-1], template.heat_net)
    return replace(template, heat_net=net, log_capacitance=float(vector[-1]))


def _prepare_ensemble(runs, substeps: int):
    if not runs:
        raise ValueError("need at least one run")
    dt = runs[0].grid.dt
    for run in runs:
        if abs(run.grid.dt - dt) > 1e-12 * dt:
            raise ValueError("all runs in one loss evaluation must share the same dt")
    nb = len(runs)
    counts = np.array([run.n_points for run in runs])
    n_max = int(counts.max())
    T_data = np.empty((nb, n_max))
    mask = np.zeros((nb, n_max), dtype=bool)
    L = 2 * (n_max - 1) * substeps + 1
    P_half = np.empty((nb, L))
    half = dt / (2.0 * substeps)
    for i, run in enumerate(runs):
        n = run.n_points
        T_data[i, :n] = run.temperatures
        T_data[i, n:] = run.temperatures[-1]
        mask[i, :n] = True
        lattice_times = run.grid.t_start + half * np.arange(L)
        P_half[i] = np.interp(lattice_times, run.times(), run.powers)
    return dt, counts, n_max, T_data, mask, P_half


def use_fast_path(net: nn.MLPParams) -> bool:
    """The compiled kernels cover one-hidden-layer nets with 2 inputs."""
    return (_kernels is not None and _kernels.AVAILABLE
            and len(net.layer_dims) == 3
            and net.layer_dims[0] == 2 and net.layer_dims[2] == 1)


def _net_arrays(net: nn.MLPParams):
    return net.weights[0], net.biases[0], net.weights[1], net.biases[1]


def _sysid_forward(params: LumpedModelParams, runs, spec: LossSpec):
    """Shared forward pass; returns the pieces the adjoint consumes.

    The recorded workspace is either the numpy (rhs, AdjointWorkspace) pair
    or the kernel (states, slopes) arrays; the two backends implement the
    same arithmetic (cross-checked in the test suite).
    """
    dt, counts, n_max, T_data, mask, P_half = _prepare_ensemble(runs, spec.substeps)
    if use_fast_path(params.heat_net):
        W1, b1, W2, b2 = _net_arrays(params.heat_net)
        colloc, states, slopes = _kernels.rollout(
            W1, b1, W2, b2, params.capacitance, params.h, params.T_sink,
            params.T0, params.P0, params.Q0,
            T_data[:, 0].copy(), P_half, n_max, spec.substeps, dt)
        if not np.all(np.isfinite(colloc)):
            raise NonFiniteState("trajectory non-finite during the batched solve")
        backend = ("kernel", states, slopes, P_half, dt)
    else:
        rhs = SysIdRhs(params, P_half)
        colloc, ws = rollout(rhs, T_data[:, 0], n_max, spec.substeps, dt)
        backend = ("numpy", rhs, ws)
    res = np.where(mask, colloc.T - T_data, 0.0)
    total_sq = float(np.sum(res * res))
    loss = total_sq / len(runs)
    return loss, total_sq, int(counts.sum()), res, backend


def sysid_loss_terms(params: LumpedModelParams, runs, spec: LossSpec | None = None):
    """(loss, total squared residual, total collocation point count).

    loss divides the double residual sum by the run count only, so the
    per-point RMSE ``sqrt(total_sq / n_points)`` is reported separately.
    """
    spec = spec or LossSpec()
    loss, total_sq, n_pts, _, _ = _sysid_forward(params, runs, spec)
    return loss, total_sq, n_pts


def sysid_loss(params: LumpedModelParams, runs, spec: LossSpec | None = None) -> float:
    return sysid_loss_terms(params, runs, spec)[0]


def loss_and_gradient(params: LumpedModelParams, runs, spec: LossSpec | None = None):
    """Loss plus its exact gradient in the canonical parameter ordering."""
    spec = spec or LossSpec()
    loss, _, _, res, backend = _sysid_forward(params, runs, spec)
    res_grad = (2.0 / len(runs)) * res.T
    if backend[0] == "kernel":
        _, states, slopes, P_half, dt = backend
        W1, b1, W2, b2 = _net_arrays(params.heat_net)
        grad = np.zeros(nn.n_params(params.heat_net.layer_dims) + 1)
        _kernels.sysid_adjoint(
            W1, b1, W2, b2, params.capacitance, params.h, params.T_sink,
            params.T0, params.P0, params.Q0,
            states, slopes, P_half, res_grad, spec.substeps, dt, grad)
    else:
        _, rhs, ws = backend
        grad = np.zeros(rhs.n_grad)
        adjoint_sweep(rhs, ws, res_grad, grad)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("non-finite partial in the adjoint gradient")
    return loss, grad


def central_difference(f, x: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.empty(x.size)
    for k in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[k] += eps
        lo[k] -= eps
        grad[k] = (f(hi) - f(lo)) / (2.0 * eps)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("non-finite partial in the finite-difference gradient")
    return grad


def finite_difference_gradient(params: LumpedModelParams, runs,
                               spec: LossSpec | None = None, eps: float = 1e-4) -> np.ndarray:
    """Central-difference oracle over the same discretized loss."""
    spec = spec or LossSpec()

    def f(vec):
        return sysid_loss(unpack_params(vec, params), runs, spec)

    return central_difference(f, pack_params(params), eps)
