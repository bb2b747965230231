"""Lumped-model arithmetic, simulation against closed forms, bounds, and I/O."""

import numpy as np
import pytest

from lumpfit import nn
from lumpfit.model import (
    LumpedModelParams,
    PowerSignal,
    heat_input,
    heat_loss,
    heat_surface,
    load_model,
    rhs,
    save_model,
    simulate,
    write_surface_csv,
)
from lumpfit.ode import SolverConfig, TimeGrid


def zero_net(scale):
    dims = (2, 10, 1)
    return nn.MLPParams(
        layer_dims=dims,
        weights=[np.zeros((do, di)) for di, do in zip(dims[:-1], dims[1:])],
        biases=[np.zeros(do) for do in dims[1:]],
        output_scale=scale,
    )


def zero_net_model(q0=4000.0, log_c=np.log(4.0), **kw):
    return LumpedModelParams(heat_net=zero_net(q0), log_capacitance=log_c, Q0=q0, **kw)


def constant_power(level, t_end=1000.0):
    return PowerSignal(times=np.array([0.0, t_end]), values=np.array([level, level]))


def test_heat_input_zero_net_is_half_q0():
    m = zero_net_model()
    assert heat_input(m, 100.0, 500.0) == pytest.approx(2000.0, abs=0)
    out = heat_input(m, np.array([0.0, 400.0]), np.array([0.0, 3000.0]))
    assert np.all(out == 2000.0)


def test_heat_input_strict_bound():
    rng = np.random.default_rng(3)
    for _ in range(50):
        net = nn.init_glorot((2, 10, 1), seed=int(rng.integers(1 << 31)), output_scale=4000.0)
        m = LumpedModelParams(heat_net=net, log_capacitance=1.0)
        T = rng.uniform(0.0, 1000.0, 40)
        P = rng.uniform(0.0, 4000.0, 40)
        q = heat_input(m, T, P)
        assert np.all(q > 0.0) and np.all(q < 4000.0)


def test_heat_loss_arithmetic():
    m = zero_net_model()
    assert heat_loss(m, 23.0) == 0.0
    assert heat_loss(m, 700.0) == 677.0
    m2 = zero_net_model(h=2.0)
    assert heat_loss(m2, 100.0) == 154.0
    assert heat_loss(m, 20.0) < 0.0


def test_rhs_zero_net_arithmetic():
    m = zero_net_model(q0=4000.0, log_c=np.log(4.0))
    power = constant_power(1000.0)
    assert rhs(m, 23.0, 0.0, power) == pytest.approx(500.0, rel=1e-12)


def test_rhs_equilibrium_is_zero():
    m = zero_net_model()
    power = constant_power(1000.0)
    # zero-weight net supplies 2000 W; the loss matches it at T = 2023
    assert rhs(m, 2023.0, 5.0, power) == 0.0


def test_rhs_sign_property():
    rng = np.random.default_rng(11)
    power = constant_power(1500.0)
    for _ in range(30):
        net = nn.init_glorot((2, 10, 1), seed=int(rng.integers(1 << 31)), output_scale=4000.0)
        m = LumpedModelParams(heat_net=net, log_capacitance=rng.uniform(0.5, 2.5))
        T = float(rng.uniform(0.0, 4500.0))
        gain = heat_input(m, T, 1500.0)
        lose = heat_loss(m, T)
        value = rhs(m, T, 0.0, power)
        assert (value < 0.0) == (gain < lose)


def test_simulate_equilibrium_constant():
    m = zero_net_model()
    traj = simulate(m, constant_power(800.0), T_init=2023.0, grid=TimeGrid(0.0, 20.0, 1.0))
    assert np.array_equal(traj.values(), np.full(21, 2023.0))


def test_simulate_linear_closed_form():
    # zero-weight net with Q0 = 1354 gives exactly 677 W of heat input
    m = zero_net_model(q0=1354.0, log_c=np.log(4.0))
    grid = TimeGrid(0.0, 4.0, 0.1)
    traj = simulate(m, constant_power(2000.0), T_init=23.0, grid=grid)
    expected = 700.0 - 677.0 * np.exp(-grid.times() / 4.0)
    assert np.max(np.abs(traj.values() - expected)) < 1e-6
    assert traj.values()[-1] == pytest.approx(700.0 - 677.0 * np.exp(-1.0), abs=1e-6)
    assert round(traj.values()[-1], 2) == 450.95


def test_simulate_adaptive_matches_fixed():
    m = zero_net_model(q0=1354.0, log_c=np.log(4.0))
    grid = TimeGrid(0.0, 4.0, 0.1)
    fixed = simulate(m, constant_power(2000.0), T_init=23.0, grid=grid)
    adaptive = simulate(m, constant_power(2000.0), T_init=23.0, grid=grid,
                        config=SolverConfig(method="adaptive_rk45", abs_tol=1e-10, rel_tol=1e-10))
    assert np.max(np.abs(fixed.values() - adaptive.values())) < 1e-6


def test_trajectory_ceiling():
    # ceiling T_sink + Q0/h = 4023; start just below and stay strictly below
    rng = np.random.default_rng(5)
    power = constant_power(4000.0)
    for seed in rng.integers(1 << 31, size=5):
        net = nn.init_glorot((2, 10, 1), seed=int(seed), output_scale=4000.0)
        m = LumpedModelParams(heat_net=net, log_capacitance=np.log(4.0))
        traj = simulate(m, power, T_init=4000.0, grid=TimeGrid(0.0, 50.0, 0.5))
        assert np.all(traj.values() < 4023.0)


def test_rhs_scale_invariance():
    net = nn.init_glorot((2, 10, 1), seed=8, output_scale=4000.0)
    m1 = LumpedModelParams(heat_net=net, log_capacitance=np.log(4.0), h=1.0, Q0=4000.0)
    alpha = 2.5
    net2 = nn.MLPParams(layer_dims=net.layer_dims, weights=net.weights,
                        biases=net.biases, output_scale=4000.0 * alpha)
    m2 = LumpedModelParams(heat_net=net2, log_capacitance=np.log(4.0 * alpha),
                           h=alpha, Q0=4000.0 * alpha)
    power = constant_power(2500.0)
    for T in (23.0, 150.0, 700.0, 950.0):
        assert rhs(m2, T, 1.0, power) == pytest.approx(rhs(m1, T, 1.0, power), rel=1e-12)


def test_heat_surface_shapes_and_values():
    m = zero_net_model()
    t_vals, p_vals, Q = heat_surface(m, (0.0, 1000.0), (0.0, 4000.0), (5, 7))
    assert Q.shape == (5, 7)
    assert np.all(Q == 2000.0)
    t1, p1, q1 = heat_surface(m, (300.0, 300.0), (1200.0, 1200.0), 1)
    assert q1.shape == (1, 1)
    assert q1[0, 0] == heat_input(m, 300.0, 1200.0)


def test_surface_csv_row_major(tmp_path):
    m = zero_net_model()
    t_vals, p_vals, Q = heat_surface(m, (0.0, 10.0), (0.0, 100.0), 2)
    path = tmp_path / "surface.csv"
    write_surface_csv(path, t_vals, p_vals, Q)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "temperature_C,power_W,heat_W"
    first = [float(v) for v in lines[1].split(",")]
    second = [float(v) for v in lines[2].split(",")]
    assert first[:2] == [0.0, 0.0]
    assert second[:2] == [0.0, 100.0]   # power varies fastest


def test_model_save_load_round_trip(tmp_path):
    net = nn.init_glorot((2, 10, 1), seed=13, output_scale=4000.0)
    m = LumpedModelParams(heat_net=net, log_capacitance=1.3862943611198906)
    path = tmp_path / "model.txt"
    save_model(m, path)
    loaded = load_model(path)
    assert np.array_equal(nn.flatten_params(loaded.heat_net), nn.flatten_params(net))
    assert loaded.log_capacitance == m.log_capacitance
    assert (loaded.h, loaded.T_sink, loaded.T0, loaded.P0, loaded.Q0) == (1.0, 23.0, 1000.0, 4000.0, 4000.0)


def test_power_signal_interpolation_and_hold():
    sig = PowerSignal(times=np.array([0.0, 10.0, 20.0]), values=np.array([0.0, 1000.0, 1000.0]))
    assert sig(5.0) == 500.0
    assert sig(-3.0) == 0.0      # hold left boundary
    assert sig(50.0) == 1000.0   # hold right boundary
    with pytest.raises(ValueError):
        PowerSignal(times=np.array([0.0, 0.0]), values=np.array([1.0, 2.0]))
