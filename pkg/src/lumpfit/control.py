"""Open-loop power-profile synthesis against a frozen fitted model.

The recorded power signal is replaced by a time->power network (two swish
hidden layers of 5, sigmoid-bounded output in (0, p_max)); its weights are
tuned to minimize the squared deviation of the simulated temperature from a
constant set point over the collocation grid. The fitted model parameters
stay untouched: gradients flow only into the profile network.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import gradients, nn, optim
from .errors import NonFiniteState
from .gradients import PowerNetRhs, adjoint_sweep, rollout
from .model import LumpedModelParams
from .training import QuasiNewtonConfig

__all__ = [
    "ControlProblem",
    "SynthesisConfig",
    "SynthesisResult",
    "init_profile_net",
    "power_profile",
    "control_loss",
    "control_loss_and_gradient",
    "synthesize_control",
    "write_profile_csv",
    "write_trajectory_csv",
]

PROFILE_DIMS = (1, 5, 5, 1)


@dataclass(frozen=True)
class ControlProblem:
    t_set: float = 700.0       # degC
    p_max: float = 4000.0      # W
    horizon: float = 300.0     # seconds
    t_init: float = 23.0       # degC
    dt: float = 1.0            # collocation spacing, seconds

    def __post_init__(self):
        if self.horizon <= 0 or self.dt <= 0 or self.p_max <= 0:
            raise ValueError("horizon, dt, p_max must be positive")

    @property
    def n_points(self) -> int:
        return int(np.floor(self.horizon / self.dt + 1e-9)) + 1

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_points)


@dataclass(frozen=True)
class SynthesisConfig:
    adam_epochs: int = 200
    adam_lr: float = 0.001
    quasi_newton: QuasiNewtonConfig = field(default_factory=QuasiNewtonConfig)
    seed: int = 0
    substeps: int = 2


@dataclass
class SynthesisResult:
    profile_net: nn.MLPParams
    times: np.ndarray
    powers: np.ndarray          # sampled optimized profile
    temperatures: np.ndarray    # predicted trajectory under the profile
    loss: float
    history: list               # (phase, iteration, loss)


def init_profile_net(seed: int, p_max: float) -> nn.MLPParams:
    return nn.init_glorot(PROFILE_DIMS, seed=seed, output_scale=p_max)


def power_profile(phi: nn.MLPParams, t, horizon: float):
    """Profile power at time(s) t; the network input is t/horizon."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return nn.forward(phi, np.array([t / horizon]))
    return nn.forward(phi, (t / horizon)[None, :])


def _check(model: LumpedModelParams, problem: ControlProblem, phi: nn.MLPParams) -> None:
    if problem.t_set <= model.T_sink:
        raise ValueError("t_set must exceed the model sink temperature")
    if phi.layer_dims[0] != 1 or phi.layer_dims[-1] != 1:
        raise ValueError("profile network must map 1 input to 1 output")


def _forward(phi, model, problem, substeps):
    n = problem.n_points
    half = problem.dt / (2.0 * substeps)
    lattice_times = half * np.arange(2 * (n - 1) * substeps + 1)
    if gradients.use_fast_path(model.heat_net):
        tt = (lattice_times / problem.horizon)[None, :]
        out, cache = nn.forward_cached(phi, tt)
        p_unit = out / model.P0
        W1, b1, W2, b2 = gradients._net_arrays(model.heat_net)
        colloc, states, slopes = gradients._kernels.rollout(
            W1, b1, W2, b2, model.capacitance, model.h, model.T_sink,
            model.T0, 1.0, model.Q0,
            np.array([problem.t_init]), p_unit[None, :], n, substeps, problem.dt)
        if not np.all(np.isfinite(colloc)):
            raise NonFiniteState("control trajectory non-finite")
        backend = ("kernel", states, slopes, p_unit, tt, cache)
    else:
        rhs = PowerNetRhs(model, phi, time_scale=problem.horizon, lattice_times=lattice_times)
        colloc, ws = rollout(rhs, np.array([problem.t_init]), n, substeps, problem.dt)
        backend = ("numpy", rhs, ws)
    temps = colloc[:, 0]
    res = temps - problem.t_set
    loss = float(res @ res)
    return loss, res, temps, backend


def control_loss(phi: nn.MLPParams, model: LumpedModelParams,
                 problem: ControlProblem, substeps: int = 2) -> float:
    """Sum over collocation points of (t_set - T)^2 under the profile."""
    _check(model, problem, phi)
    return _forward(phi, model, problem, substeps)[0]


def control_loss_and_gradient(phi: nn.MLPParams, model: LumpedModelParams,
                              problem: ControlProblem, substeps: int = 2):
    """Loss and its exact gradient w.r.t. the profile network parameters."""
    _check(model, problem, phi)
    loss, res, _, backend = _forward(phi, model, problem, substeps)
    res_grad = (2.0 * res)[:, None]
    grad = np.zeros(nn.n_params(phi.layer_dims))
    if backend[0] == "kernel":
        _, states, slopes, p_unit, tt, cache = backend
        W1, b1, W2, b2 = gradients._net_arrays(model.heat_net)
        lat_up = np.zeros(p_unit.size)
        gradients._kernels.control_adjoint(
            W1, b1, W2, b2, model.capacitance, model.h, model.T_sink,
            model.T0, model.Q0, states, slopes, p_unit, res_grad,
            substeps, problem.dt, lat_up)
        nn.backward(phi, tt, upstream=lat_up / model.P0, cache=cache, grad_out=grad)
    else:
        _, rhs, ws = backend
        adjoint_sweep(rhs, ws, res_grad, grad)
    return loss, grad


def synthesize_control(model: LumpedModelParams, problem: ControlProblem,
                       config: SynthesisConfig | None = None) -> SynthesisResult:
    """Optimize the profile network (Adam then quasi-Newton); model frozen."""
    config = config or SynthesisConfig()
    phi0 = init_profile_net(config.seed, problem.p_max)
    _check(model, problem, phi0)

    def objective(x):
        phi = nn.unflatten_params(x, phi0)
        return control_loss_and_gradient(phi, model, problem, config.substeps)

    history = []
    adam_res = optim.adam(objective, nn.flatten_params(phi0),
                          n_steps=config.adam_epochs, lr=config.adam_lr)
    history.extend(("adam", it, loss) for it, loss in adam_res.history)
    qn = config.quasi_newton
    lbfgs_res = optim.lbfgs(objective, adam_res.x, memory=qn.memory,
                            rel_loss_tol=qn.rel_loss_tol, max_iters=qn.max_iters)
    history.extend(("lbfgs", it, loss) for it, loss in lbfgs_res.history)

    best = lbfgs_res.x if lbfgs_res.loss <= adam_res.loss else adam_res.x
    phi = nn.unflatten_params(best, phi0)
    loss, _, temps, _ = _forward(phi, model, problem, config.substeps)
    times = problem.times()
    powers = power_profile(phi, times, problem.horizon)
    return SynthesisResult(profile_net=phi, times=times, powers=powers,
                           temperatures=temps, loss=loss, history=history)


def write_profile_csv(path, times, powers) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "power_W"])
        for t, p in zip(times, powers):
            writer.writerow([repr(float(t)), repr(float(p))])


def write_trajectory_csv(path, times, temperatures) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "temperature_C"])
        for t, temp in zip(times, temperatures):
            writer.writerow([repr(float(t)), repr(float(temp))])
