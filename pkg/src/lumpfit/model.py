"""Neural lumped-parameter thermal model.

State equation for the lumped volume temperature T under exogenous power P(t):

    dT/dt = (Q0 * net(T/T0, P/P0) - h*(T - T_sink)) / C,    C = exp(log_capacitance)

The network supplies the internal heat-generation closure, bounded to
(0, Q0); the loss term is linear in the sink temperature difference. h and
T_sink are fixed constants of the model; the learnable parameters are the
network weights plus log C (positivity of C by construction).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .ode import SolverConfig, TimeGrid, Trajectory, integrate_adaptive, integrate_fixed, sample_at

__all__ = [
    "LumpedModelParams",
    "PowerSignal",
    "heat_input",
    "heat_loss",
    "rhs",
    "make_rhs",
    "simulate",
    "heat_surface",
    "write_surface_csv",
    "save_model",
    "load_model",
]


@dataclass
class LumpedModelParams:
    """Learnable closure network plus the fixed energy-balance constants."""

    heat_net: nn.MLPParams          # inputs (T/T0, P/P0), output in (0, Q0)
    log_capacitance: float
    h: float = 1.0                  # W/degC
    T_sink: float = 23.0            # degC
    T0: float = 1000.0              # temperature scale, degC
    P0: float = 4000.0              # power scale, W
    Q0: float = 4000.0              # heat-generation bound, W

    def __post_init__(self):
        for name in ("h", "T0", "P0", "Q0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.heat_net.layer_dims[0] != 2 or self.heat_net.layer_dims[-1] != 1:
            raise ValueError("heat_net must map 2 inputs to 1 output")
        if abs(self.heat_net.output_scale - self.Q0) > 1e-9 * self.Q0:
            raise ValueError("heat_net.output_scale must equal Q0")

    @property
    def capacitance(self) -> float:
        return float(np.exp(self.log_capacitance))

    def with_log_capacitance(self, log_c: float) -> "LumpedModelParams":
        return replace(self, log_capacitance=float(log_c))


@dataclass
class PowerSignal:
    """Piecewise-linear power trace; queries outside the span hold the boundary value."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.size == 0:
            raise ValueError("power signal needs at least one sample")
        if self.times.size != self.values.size:
            raise ValueError("times/values length mismatch")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("power signal times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite power value")

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    @classmethod
    def from_run(cls, run) -> "PowerSignal":
        return cls(times=run.times(), values=run.powers)


def heat_input(params: LumpedModelParams, T, P):
    """Closure-network heat generation Q0*net(T/T0, P/P0), in (0, Q0). Vectorized."""
    T = np.asarray(T, dtype=float)
    P = np.asarray(P, dtype=float)
    if T.ndim == 0 and P.ndim == 0:
        x = np.array([T / params.T0, P / params.P0])
        return nn.forward(params.heat_net, x)
    T, P = np.broadcast_arrays(T, P)
    x = np.stack([T.ravel() / params.T0, P.ravel() / params.P0])
    out = nn.forward(params.heat_net, x)
    return out.reshape(T.shape)


def heat_loss(params: LumpedModelParams, T):
    """Linear sink loss h*(T - T_sink); negative below the sink temperature."""
    T = np.asarray(T, dtype=float)
    out = params.h * (T - params.T_sink)
    return float(out) if out.ndim == 0 else out


def rhs(params: LumpedModelParams, T, t, power: PowerSignal):
    """Temperature rate (heat_input - heat_loss)/C at (T, t)."""
    q_in = heat_input(params, T, power(t))
    q_out = heat_loss(params, T)
    return (q_in - q_out) / params.capacitance


def make_rhs(params: LumpedModelParams, power: PowerSignal):
    """Solver-ready rhs over the vector state convention of :mod:`lumpfit.ode`."""
    net = params.heat_net
    T0, P0, h, T_sink = params.T0, params.P0, params.h, params.T_sink
    C = params.capacitance

    def f(x, t):
        p = power(t)
        inputs = np.stack([x / T0, np.full_like(x, p / P0)])
        q_in = nn.forward(net, inputs)
        return (q_in - h * (x - T_sink)) / C

    return f


def simulate(params: LumpedModelParams, power: PowerSignal, T_init: float,
             grid: TimeGrid, config: SolverConfig | None = None) -> Trajectory:
    """Temperature trajectory of the IVP, sampled on the grid."""
    config = config or SolverConfig()
    f = make_rhs(params, power)
    if config.method == "fixed_rk4":
        return integrate_fixed(f, [T_init], grid, config)
    dense = integrate_adaptive(f, [T_init], grid.t_start, grid.t_end, config)
    times = grid.times()
    states = sample_at(dense, times)
    derivs = np.stack([f(states[j], times[j]) for j in range(times.size)])
    return Trajectory(times=times, states=states, derivs=derivs, grid=grid,
                      stage_record=None, n_accepted=dense.n_accepted,
                      n_rejected=dense.n_rejected)


def heat_surface(params: LumpedModelParams, T_range, P_range, resolution):
    """Row-major (temperature outer) grid of heat_input evaluations.

    ``resolution`` is a count or (nT, nP) pair; a count of 1 pins the value
    at the low end of the range. Returns (T_values, P_values, Q) with Q of
    shape (nT, nP).
    """
    if np.isscalar(resolution):
        n_t = n_p = int(resolution)
    else:
        n_t, n_p = (int(r) for r in resolution)
    if n_t < 1 or n_p < 1:
        raise ValueError("resolution must be >= 1")
    t_lo, t_hi = (float(v) for v in T_range)
    p_lo, p_hi = (float(v) for v in P_range)
    if t_hi < t_lo or p_hi < p_lo:
        raise ValueError("empty range")
    t_vals = np.array([t_lo]) if n_t == 1 else np.linspace(t_lo, t_hi, n_t)
    p_vals = np.array([p_lo]) if n_p == 1 else np.linspace(p_lo, p_hi, n_p)
    TT, PP = np.meshgrid(t_vals, p_vals, indexing="ij")
    Q = heat_input(params, TT, PP)
    return t_vals, p_vals, Q


def write_surface_csv(path, t_vals, p_vals, Q) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["temperature_C", "power_W", "heat_W"])
        for i, tv in enumerate(t_vals):
            for j, pv in enumerate(p_vals):
                writer.writerow([repr(float(tv)), repr(float(pv)), repr(float(Q[i, j]))])


def save_model(params: LumpedModelParams, path) -> None:
    """Network serialization followed by key=value lines for the scalars."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(nn.mlp_header_line(params.heat_net) + "\n")
        for v in nn.flatten_params(params.heat_net):
            fh.write(f"{float(v)!r}\n")
        for name in ("log_capacitance", "h", "T_sink", "T0", "P0", "Q0"):
            fh.write(f"{name}={float(getattr(params, name))!r}\n")


def load_model(path) -> LumpedModelParams:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    dims, scale, seed = nn.parse_header_line(lines[0])
    count = nn.n_params(dims)
    values = np.array([float(s) for s in lines[1:1 + count]])
    template = nn.init_glorot(dims, seed=0, output_scale=scale)
    net = nn.unflatten_params(values, template)
    net.seed = seed
    scalars = {}
    for line in lines[1 + count:]:
        if not line.strip():
            continue
        key, _, val = line.partition("=")
        scalars[key.strip()] = float(val)
    return LumpedModelParams(heat_net=net, **scalars)
