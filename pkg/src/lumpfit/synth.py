"""Synthetic ground-truth oracle: plunge/dwell-like ensembles from a known model.

The generator's heat law is

    Q_true(T, P) = eta * P * (1 - beta * T / T_ref)

which is monotone in power with a mild temperature attenuation, stays inside
[0, P] for T < T_ref/beta, and (being bounded well inside (0, Q0)) is
realizable by the sigmoid-bounded closure network. Power profiles are linear
ramps from zero to a hold level, held until the release point, then cut to
zero for the tail of the record (the spindle-stop cooldown). Hold levels are
capped so the implied steady state stays below ``max_steady_temp``:

    T_ss(P) = (eta*P + h*T_sink) / (h + eta*P*beta/T_ref)

The release tail is what makes the capacitance identifiable: while cooling
at zero power the data demands heat_input = (1 - C_model/C_true) * h * dT,
which a positive-bounded network can only satisfy for C_model <= C_true.
Without such segments an exact affine family (alpha*C, alpha*Q_true +
(1-alpha)*h*dT) reproduces every ramp-and-hold trajectory and C floats.

Gaussian noise is added to the sampled temperatures only; the commanded
power is recorded noise-free.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .dataio import ExperimentRun
from .model import PowerSignal
from .ode import SolverConfig, TimeGrid, integrate_adaptive, sample_at

__all__ = [
    "GroundTruthSpec",
    "q_true",
    "steady_state_temperature",
    "max_hold_power",
    "closed_form_linear",
    "truth_rhs",
    "generate_run",
    "generate_ensemble",
    "save_spec",
    "load_spec",
]


@dataclass(frozen=True)
class GroundTruthSpec:
    c_true: float = 4.0
    h: float = 1.0
    t_sink: float = 23.0
    eta: float = 0.8                 # power-to-heat efficiency
    beta: float = 0.3                # temperature attenuation strength
    t_ref: float = 1000.0
    noise_sigma: float = 2.0         # degC, temperatures only
    ramp_time_min: float = 10.0
    ramp_time_max: float = 40.0
    hold_min: float = 800.0
    hold_max: float = 1500.0
    duration_min: float = 200.0
    duration_max: float = 400.0
    release_fraction: float = 0.25   # final fraction of the record at zero power
    release_ramp_s: float = 5.0      # power cut-off ramp length
    max_steady_temp: float = 900.0
    seed: int = 1

    def __post_init__(self):
        if self.c_true <= 0 or self.h <= 0:
            raise ValueError("c_true and h must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")


def q_true(spec: GroundTruthSpec, T, P):
    """Ground-truth internal heat generation (vectorized)."""
    return spec.eta * np.asarray(P, dtype=float) * (1.0 - spec.beta * np.asarray(T, dtype=float) / spec.t_ref)


def steady_state_temperature(spec: GroundTruthSpec, p_hold: float) -> float:
    """Solve q_true(T, P) = h*(T - T_sink) for constant power."""
    num = spec.eta * p_hold + spec.h * spec.t_sink
    den = spec.h + spec.eta * p_hold * spec.beta / spec.t_ref
    return num / den


def max_hold_power(spec: GroundTruthSpec) -> float:
    """Largest constant power whose steady state stays at max_steady_temp."""
    ts = spec.max_steady_temp
    return spec.h * (ts - spec.t_sink) / (spec.eta * (1.0 - spec.beta * ts / spec.t_ref))


def closed_form_linear(T_init: float, Q_const: float, C: float, h: float,
                       T_sink: float, t):
    """Exact first-order response under constant heat input:
    T_ss + (T_init - T_ss) * exp(-(h/C) t), with T_ss = T_sink + Q/h."""
    if C <= 0 or h <= 0:
        raise ValueError("C and h must be positive")
    t = np.asarray(t, dtype=float)
    t_ss = T_sink + Q_const / h
    out = t_ss + (T_init - t_ss) * np.exp(-(h / C) * t)
    return float(out) if out.ndim == 0 else out


def truth_rhs(spec: GroundTruthSpec, power: PowerSignal):
    """Solver-ready ground-truth rhs (vector-state convention)."""

    def f(x, t):
        q = q_true(spec, x, power(t))
        return (q - spec.h * (x - spec.t_sink)) / spec.c_true

    return f


def ramp_hold_power(hold: float, ramp_time: float, duration: float,
                    release_at: float | None = None,
                    release_ramp: float = 5.0) -> PowerSignal:
    """Linear ramp 0 -> hold over ramp_time, held, then optionally cut to zero
    at release_at (over release_ramp seconds) for the rest of the record."""
    if release_at is None or release_at >= duration:
        return PowerSignal(times=np.array([0.0, ramp_time, duration]),
                           values=np.array([0.0, hold, hold]))
    t_off = min(release_at + release_ramp, duration)
    return PowerSignal(times=np.array([0.0, ramp_time, release_at, t_off, duration]),
                       values=np.array([0.0, hold, hold, 0.0, 0.0]))


def generate_run(spec: GroundTruthSpec, run_index: int, dt: float = 0.1,
                 seed: int | None = None, hold_range=None) -> ExperimentRun:
    """One noisy plunge/dwell/release run; deterministic per (spec, seed, run_index).

    ``hold_range`` narrows the hold-level draw (used by generate_ensemble to
    stratify hold levels across a run set).
    """
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng([seed, run_index])
    # profile knots land on whole seconds so coarser resampling grids keep
    # the commanded signal exactly (no corner-cutting bias at the knees)
    ramp = float(np.round(rng.uniform(spec.ramp_time_min, spec.ramp_time_max)))
    lo, hi = hold_range if hold_range is not None else (spec.hold_min, spec.hold_max)
    hold = rng.uniform(lo, hi)
    hold = min(hold, max_hold_power(spec))
    duration = rng.uniform(spec.duration_min, spec.duration_max)
    duration = np.floor(duration)
    release_at = None
    if spec.release_fraction > 0.0:
        release_at = float(np.floor((1.0 - spec.release_fraction) * duration))
    power = ramp_hold_power(hold, ramp, duration, release_at=release_at,
                            release_ramp=float(np.round(spec.release_ramp_s)))

    grid = TimeGrid(t_start=0.0, t_end=float(duration), dt=dt)
    config = SolverConfig(method="adaptive_rk45", abs_tol=1e-9, rel_tol=1e-9)
    dense = integrate_adaptive(truth_rhs(spec, power), [spec.t_sink], 0.0, grid.t_end, config)
    times = grid.times()
    temps = sample_at(dense, times)[:, 0]
    temps = temps + rng.normal(0.0, spec.noise_sigma, size=temps.size)
    return ExperimentRun(id=f"synth-{run_index:02d}", grid=grid,
                         temperatures=temps, powers=power(times))


def generate_ensemble(spec: GroundTruthSpec, n_runs: int = 7, dt: float = 0.1,
                      seed: int | None = None) -> list[ExperimentRun]:
    """Runs with per-run derived seeds; same spec+seed -> same data.

    Hold levels are stratified: run i draws from the i-th slot of the hold
    range, so every few-run subset still spans the power envelope (draws
    crowding one end would leave held-out dwell levels unconstrained).
    """
    width = (spec.hold_max - spec.hold_min) / max(n_runs, 1)
    runs = []
    for i in range(n_runs):
        slot = (spec.hold_min + i * width, spec.hold_min + (i + 1) * width)
        runs.append(generate_run(spec, i, dt=dt, seed=seed, hold_range=slot))
    return runs


def save_spec(spec: GroundTruthSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in fields(spec):
            value = getattr(spec, f.name)
            value = int(value) if f.name == "seed" else float(value)
            fh.write(f"{f.name}={value!r}\n")


def load_spec(path) -> GroundTruthSpec:
    values = {}
    names = {f.name: f.type for f in fields(GroundTruthSpec)}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in names:
                raise ValueError(f"unknown ground-truth field {key!r}")
            values[key] = int(val) if key == "seed" else float(val)
    return GroundTruthSpec(**values)
