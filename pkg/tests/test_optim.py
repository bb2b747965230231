"""Optimizer behavior on analytic objectives."""

import numpy as np
import pytest

from lumpfit import optim
from lumpfit.errors import DivergedFit


def quadratic(scales):
    scales = np.asarray(scales, dtype=float)

    def fun(x):
        return float(0.5 * np.sum(scales * x * x)), scales * x

    return fun


def rosenbrock(x):
    a, b = 1.0, 100.0
    f = (a - x[0]) ** 2 + b * (x[1] - x[0] ** 2) ** 2
    g = np.array([
        -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] ** 2),
        2.0 * b * (x[1] - x[0] ** 2),
    ])
    return float(f), g


def test_adam_descends_quadratic():
    fun = quadratic([1.0, 4.0])
    res = optim.adam(fun, np.array([2.0, -1.5]), n_steps=300, lr=0.05)
    assert res.loss < 1e-2
    assert res.history[0][1] > res.loss


def test_adam_minibatch_cycles_batches():
    funs = [quadratic([1.0, 0.0]), quadratic([0.0, 1.0])]
    res = optim.adam_minibatch(funs, np.array([1.0, 1.0]), n_epochs=200, lr=0.05)
    assert np.all(np.abs(res.x) < 0.05)
    assert len(res.history) == 200


def test_adam_raises_on_divergence():
    def bad(x):
        return np.inf, np.zeros_like(x)

    with pytest.raises(DivergedFit):
        optim.adam(bad, np.array([1.0]), n_steps=5)


def test_lbfgs_solves_rosenbrock():
    res = optim.lbfgs(rosenbrock, np.array([-1.2, 1.0]), max_iters=200)
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)
    assert res.loss < 1e-12


def test_lbfgs_accepted_losses_non_increasing():
    res = optim.lbfgs(rosenbrock, np.array([-1.2, 1.0]), max_iters=200)
    losses = [loss for _, loss in res.history]
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


def test_lbfgs_quadratic_convergence():
    fun = quadratic([1.0, 10.0, 100.0])
    res = optim.lbfgs(fun, np.array([1.0, 1.0, 1.0]), rel_loss_tol=1e-14, max_iters=100)
    assert res.loss < 1e-16


def test_lbfgs_handles_inf_wall():
    # objective is infinite for x < 0; line search must back off
    def fun(x):
        if x[0] < 0.0:
            return np.inf, np.array([np.nan])
        return float((x[0] - 0.5) ** 2), np.array([2.0 * (x[0] - 0.5)])

    res = optim.lbfgs(fun, np.array([4.0]), max_iters=100)
    assert abs(res.x[0] - 0.5) < 1e-6


def test_diagonal_curvature_on_quadratic():
    scales = np.array([2.0, 50.0, 0.5])
    fun = quadratic(scales)
    diag = optim.diagonal_curvature(fun, np.array([0.3, -0.2, 1.0]))
    assert np.allclose(diag, scales, rtol=1e-6)


def test_preconditioned_lbfgs_on_ill_conditioned_quadratic():
    scales = np.logspace(-4, 4, 12)
    fun = quadratic(scales)
    x0 = np.ones(12)
    plain = optim.lbfgs(fun, x0, memory=5, rel_loss_tol=0.0, max_iters=40)
    pre = optim.lbfgs_preconditioned(fun, x0, memory=5, rel_loss_tol=0.0, max_iters=40)
    assert pre.loss < plain.loss * 1e-3
