"""Initial-value-problem integration.

Two integrators over a shared right-hand-side convention ``rhs(x, t) -> dx/dt``
with ``x`` a small 1-D state vector:

* ``integrate_fixed``   -- classical RK4 on a uniform output grid, optionally
  subdivided into internal substeps. Every stage value is recorded so that a
  reverse (discrete-adjoint) sweep can replay the exact step sequence.
* ``integrate_adaptive`` -- embedded Dormand-Prince 4(5) pair with PI step-size
  control and cubic-Hermite dense output on accepted steps.

Both return a :class:`Trajectory`, which interpolates between its nodes with
cubic Hermite polynomials (matching the solver's local order without extra
rhs evaluations).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteState, OutOfRange, StepLimitExceeded

__all__ = [
    "TimeGrid",
    "SolverConfig",
    "StageRecord",
    "Trajectory",
    "integrate_fixed",
    "integrate_adaptive",
    "sample_at",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform output grid: t_start + j*dt for j = 0..n_points-1."""

    t_start: float
    t_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end > self.t_start:
            raise ValueError(f"t_end must exceed t_start ({self.t_start} .. {self.t_end})")

    @property
    def n_points(self) -> int:
        # 1e-9 fuzz keeps e.g. (0, 10, 0.1) at 101 points despite float division
        return int(np.floor((self.t_end - self.t_start) / self.dt + 1e-9)) + 1

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_points)


@dataclass(frozen=True)
class SolverConfig:
    """Integrator selection and tuning knobs.

    ``fixed_rk4`` uses ``substeps_per_interval`` internal RK4 steps per grid
    interval; ``adaptive_rk45`` uses the tolerances and ``max_steps``.
    """

    method: str = "fixed_rk4"
    substeps_per_interval: int = 5
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    max_steps: int = 100_000

    def __post_init__(self):
        if self.method not in ("fixed_rk4", "adaptive_rk45"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.substeps_per_interval < 1:
            raise ValueError("substeps_per_interval must be >= 1")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class StageRecord:
    """Per-substep RK4 stage values, in forward step order.

    Stage states u2..u4 are not stored; the adjoint reconstructs them from
    (x, k1..k3) with the same arithmetic the forward pass used, so the replay
    is bit-identical.
    """

    t: np.ndarray       # (S,) substep start times
    h: np.ndarray       # (S,) substep sizes
    x: np.ndarray       # (S, dim) state at substep start
    k: np.ndarray       # (S, 4, dim) the four stage slopes
    substeps_per_interval: int = 1


@dataclass
class Trajectory:
    """Dense ODE solution: node states plus node derivatives for interpolation.

    ``grid`` is set when the nodes form a uniform output grid (fixed-step
    integration and grid-sampled simulations); adaptive integration returns
    the accepted-step nodes, which are generally non-uniform. ``dense_c5``
    holds the per-interval quartic correction of the Dormand-Prince dense
    output; without it, interpolation falls back to cubic Hermite (adequate
    for the short fixed-mode substeps, too coarse for long accepted steps).
    """

    times: np.ndarray                     # (n,) strictly increasing node times
    states: np.ndarray                    # (n, dim)
    derivs: np.ndarray                    # (n, dim) rhs at the nodes
    grid: TimeGrid | None = None
    stage_record: StageRecord | None = None
    dense_c5: np.ndarray | None = None    # (n-1, dim)
    n_accepted: int = field(default=0, repr=False)
    n_rejected: int = field(default=0, repr=False)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def values(self) -> np.ndarray:
        """Scalar-state view of the states, shape (n,)."""
        if self.states.shape[1] != 1:
            raise ValueError("values() requires a scalar state")
        return self.states[:, 0]


def _as_state(x0) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if x.ndim != 1:
        raise ValueError("state must be a scalar or 1-D vector")
    return x


def _check_finite(x: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite state/stage near t={t:.6g}")


def _rk4_step(rhs, x, t, h):
    """One classical RK4 step; returns (x_next, (k1, k2, k3, k4))."""
    k1 = np.asarray(rhs(x, t), dtype=float)
    k2 = np.asarray(rhs(x + 0.5 * h * k1, t + 0.5 * h), dtype=float)
    k3 = np.asarray(rhs(x + 0.5 * h * k2, t + 0.5 * h), dtype=float)
    k4 = np.asarray(rhs(x + h * k3, t + h), dtype=float)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x_next, (k1, k2, k3, k4)


def integrate_fixed(rhs, x0, grid: TimeGrid, config: SolverConfig | None = None) -> Trajectory:
    """Classical RK4 over a uniform grid with recorded stages.

    Each grid interval is integrated with ``config.substeps_per_interval``
    equal internal steps. States are reported at the grid nodes; the full
    substep stage sequence is kept on the returned trajectory for adjoint
    replay.
    """
    config = config or SolverConfig()
    x = _as_state(x0)
    dim = x.size
    n = grid.n_points
    m = config.substeps_per_interval
    h = grid.dt / m
    n_sub = (n - 1) * m

    states = np.empty((n, dim))
    derivs = np.empty((n, dim))
    rec_t = np.empty(n_sub)
    rec_x = np.empty((n_sub, dim))
    rec_k = np.empty((n_sub, 4, dim))

    states[0] = x
    t = grid.t_start
    s = 0
    for j in range(n - 1):
        for _ in range(m):
            x_next, ks = _rk4_step(rhs, x, t, h)
            _check_finite(x_next, t)
            rec_t[s] = t
            rec_x[s] = x
            rec_k[s, 0], rec_k[s, 1], rec_k[s, 2], rec_k[s, 3] = ks
            if s % m == 0:
                derivs[s // m] = ks[0]  # k1 at a grid node is rhs there
            x = x_next
            t = rec_t[s] + h  # keeps substep times exactly reproducible
            s += 1
        states[j + 1] = x
    derivs[n - 1] = np.asarray(rhs(x, t), dtype=float)
    _check_finite(derivs[n - 1], t)

    record = StageRecord(
        t=rec_t,
        h=np.full(n_sub, h),
        x=rec_x,
        k=rec_k,
        substeps_per_interval=m,
    )
    return Trajectory(times=grid.times(), states=states, derivs=derivs, grid=grid, stage_record=record)


# Dormand-Prince 4(5): 5th-order propagating solution, 4th-order embedded
# error estimate, FSAL (seventh stage equals the next step's first stage).
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# b5 - b4: error-estimate weights
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# quartic dense-output correction weights (Hairer's DOPRI5 CONTD5)
_DP_D = np.array([
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
# PI exponents for a 5th-order propagating pair (Gustafsson-style control)
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0


def _error_norm(err, y_old, y_new, abs_tol, rel_tol) -> float:
    scale = abs_tol + rel_tol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(rhs, x0, f0, t0, span, abs_tol, rel_tol) -> float:
    """Hairer-style starting step; the whole span when the rhs starts at zero."""
    if not np.any(f0):
        return span
    scale = abs_tol + rel_tol * np.abs(x0)
    d0 = float(np.sqrt(np.mean((x0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 * span if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    x1 = x0 + h0 * f0
    f1 = np.asarray(rhs(x1, t0 + h0), dtype=float)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6 * span, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, span)


def integrate_adaptive(rhs, x0, t_start: float, t_end: float,
                       config: SolverConfig | None = None) -> Trajectory:
    """Dormand-Prince 4(5) with PI step-size control.

    Accepted steps satisfy ``error_norm <= 1`` against the mixed tolerance
    ``abs_tol + rel_tol*|x|``. The returned trajectory carries the accepted
    nodes and their derivatives (FSAL stage), so intermediate values come
    from cubic Hermite interpolation via :func:`sample_at`.
    """
    config = config or SolverConfig(method="adaptive_rk45")
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    x = _as_state(x0)
    dim = x.size
    span = t_end - t_start

    f = np.asarray(rhs(x, t_start), dtype=float)
    _check_finite(f, t_start)
    h = _initial_step(rhs, x, f, t_start, span, config.abs_tol, config.rel_tol)

    ts = [t_start]
    xs = [x.copy()]
    fs = [f.copy()]
    c5s = []
    t = t_start
    err_prev = 1.0
    n_accepted = 0
    n_rejected = 0
    k = np.empty((7, dim))

    n_attempts = 0
    while t < t_end:
        if n_attempts >= config.max_steps:
            raise StepLimitExceeded(f"max_steps={config.max_steps} reached at t={t:.6g}")
        n_attempts += 1
        h = min(h, t_end - t)
        k[0] = f
        for i in range(1, 7):
            xi = x + h * (_DP_A[i] @ k[:i])
            k[i] = rhs(xi, t + _DP_C[i] * h)
        x_new = x + h * (_DP_B5 @ k)
        _check_finite(x_new, t)
        err_vec = h * (_DP_E @ k)
        err = _error_norm(err_vec, x, x_new, config.abs_tol, config.rel_tol)

        if err <= 1.0:
            c5s.append(h * (_DP_D @ k))
            t = t + h
            x = x_new
            f = k[6].copy()  # FSAL: rhs at the accepted point
            _check_finite(f, t)
            ts.append(t)
            xs.append(x.copy())
            fs.append(f.copy())
            n_accepted += 1
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * err ** (-_PI_ALPHA) * err_prev ** _PI_BETA
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            h *= factor
            err_prev = max(err, 1e-10)
        else:
            n_rejected += 1
            h *= min(1.0, max(0.1, _SAFETY * err ** -0.2))

    return Trajectory(
        times=np.array(ts),
        states=np.array(xs),
        derivs=np.array(fs),
        grid=None,
        stage_record=None,
        dense_c5=np.array(c5s),
        n_accepted=n_accepted,
        n_rejected=n_rejected,
    )


def _hermite(t, t0, t1, y0, y1, f0, f1):
    """Cubic Hermite value at t on [t0, t1] (vectorized over the state)."""
    dt = t1 - t0
    s = (t - t0) / dt
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * y0 + h10 * dt * f0 + h01 * y1 + h11 * dt * f1


def _dense_quartic(t, t0, t1, y0, y1, f0, f1, c5):
    """Dormand-Prince dense output: the endpoint Hermite cubic plus the
    stage-built quartic correction, matching the 5th-order solution locally."""
    dt = t1 - t0
    s = (t - t0) / dt
    rc2 = y1 - y0
    rc3 = dt * f0 - rc2
    rc4 = rc2 - dt * f1 - rc3
    return y0 + s * (rc2 + (1.0 - s) * (rc3 + s * (rc4 + (1.0 - s) * c5)))


def sample_at(traj: Trajectory, times) -> np.ndarray:
    """States at the requested times, shape (len(times), dim).

    Node times are returned exactly as stored; off-node times use cubic
    Hermite interpolation on the containing interval. Raises OutOfRange for
    times outside the trajectory span (with a tiny rounding allowance).
    """
    query = np.atleast_1d(np.asarray(times, dtype=float))
    nodes = traj.times
    span = traj.t_end - traj.t_start
    fuzz = 1e-9 * max(span, 1.0)
    if np.any(query < traj.t_start - fuzz) or np.any(query > traj.t_end + fuzz):
        bad = query[(query < traj.t_start - fuzz) | (query > traj.t_end + fuzz)][0]
        raise OutOfRange(f"t={bad:.6g} outside [{traj.t_start:.6g}, {traj.t_end:.6g}]")

    out = np.empty((query.size, traj.states.shape[1]))
    idx = np.clip(np.searchsorted(nodes, query, side="right") - 1, 0, nodes.size - 2)
    for m, (tq, i) in enumerate(zip(query, idx)):
        if abs(tq - nodes[i]) <= fuzz:
            out[m] = traj.states[i]
        elif abs(tq - nodes[i + 1]) <= fuzz:
            out[m] = traj.states[i + 1]
        elif traj.dense_c5 is not None:
            out[m] = _dense_quartic(
                tq, nodes[i], nodes[i + 1],
                traj.states[i], traj.states[i + 1],
                traj.derivs[i], traj.derivs[i + 1],
                traj.dense_c5[i],
            )
        else:
            out[m] = _hermite(
                tq, nodes[i], nodes[i + 1],
                traj.states[i], traj.states[i + 1],
                traj.derivs[i], traj.derivs[i + 1],
            )
    return out
