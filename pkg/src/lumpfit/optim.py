"""Full-batch optimizers used by both training phases.

``adam`` takes a fixed number of steps; ``lbfgs`` is a limited-memory
quasi-Newton loop with a strong-Wolfe line search that runs until the
relative loss change drops below tolerance. Both operate on a flat parameter
vector through a single objective callable ``fun(x) -> (loss, grad)``.

The line search treats a non-finite trial loss as "step too long" and
shrinks, so transiently divergent trajectories do not abort the fit; only a
non-finite loss at an accepted iterate raises DivergedFit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedFit, NonFiniteState

__all__ = ["adam", "adam_minibatch", "lbfgs", "lbfgs_preconditioned",
           "diagonal_curvature", "OptimizeResult"]


@dataclass
class OptimizeResult:
    x: np.ndarray
    loss: float
    n_iters: int
    history: list = field(default_factory=list)   # (iteration, loss) pairs
    converged: bool = False


def _safe_eval(fun, x):
    """Evaluate the objective, mapping trajectory blow-ups to an inf loss."""
    try:
        loss, grad = fun(x)
    except NonFiniteState:
        return np.inf, None
    if not np.isfinite(loss):
        return np.inf, None
    return float(loss), grad


def adam(fun, x0, n_steps: int = 200, lr: float = 0.001,
         beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizeResult:
    """Fixed-step-count Adam on the full-batch objective."""
    x = np.asarray(x0, dtype=float).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    history = []
    best_x = x.copy()
    best_loss = np.inf
    loss, grad = fun(x)
    for step in range(1, n_steps + 1):
        if not np.isfinite(loss):
            raise DivergedFit(f"non-finite loss at Adam step {step}")
        history.append((step - 1, loss))
        if loss < best_loss:
            best_loss = loss
            best_x = x.copy()
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
        loss, grad = fun(x)
    if not np.isfinite(loss):
        raise DivergedFit("non-finite loss after final Adam step")
    history.append((n_steps, loss))
    if loss < best_loss:
        best_loss = loss
        best_x = x.copy()
    return OptimizeResult(x=best_x, loss=best_loss, n_iters=n_steps, history=history)


def adam_minibatch(funs, x0, n_epochs: int = 200, lr: float = 0.001,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizeResult:
    """Adam cycling through per-batch objectives in a fixed order.

    One epoch applies one update per objective in ``funs``. The recorded
    per-epoch loss is the sum of the batch losses seen during that epoch
    (an as-you-go estimate; batches are evaluated at slightly different
    parameter vectors).
    """
    x = np.asarray(x0, dtype=float).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    history = []
    step = 0
    epoch_loss = np.inf
    for epoch in range(n_epochs):
        epoch_loss = 0.0
        for fun in funs:
            loss, grad = fun(x)
            if not np.isfinite(loss):
                raise DivergedFit(f"non-finite batch loss in Adam epoch {epoch}")
            epoch_loss += loss
            step += 1
            m = beta1 * m + (1.0 - beta1) * grad
            v = beta2 * v + (1.0 - beta2) * grad * grad
            m_hat = m / (1.0 - beta1 ** step)
            v_hat = v / (1.0 - beta2 ** step)
            x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
        history.append((epoch, epoch_loss))
    return OptimizeResult(x=x, loss=epoch_loss, n_iters=n_epochs, history=history)


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic through (a, fa, ga) and (b, fb, gb); NaN if degenerate."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0.0:
        return np.nan
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = gb - ga + 2.0 * d2
    if denom == 0.0:
        return np.nan
    return b - (b - a) * (gb + d2 - d1) / denom


def _zoom(phi, a_lo, a_hi, f_lo, g_lo, f_hi, f0, g0, c1, c2, max_iter=25):
    """Nocedal-Wright zoom: shrink [a_lo, a_hi] to a strong-Wolfe point."""
    g_hi = np.nan
    for _ in range(max_iter):
        a = _cubic_min(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi) if np.isfinite(f_hi) and np.isfinite(g_hi) else np.nan
        width = abs(a_hi - a_lo)
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        if not (np.isfinite(a) and lo + 0.1 * width < a < hi - 0.1 * width):
            a = 0.5 * (a_lo + a_hi)
        f_a, g_a = phi(a)
        if f_a > f0 + c1 * a * g0 or f_a >= f_lo:
            a_hi, f_hi, g_hi = a, f_a, g_a
        else:
            if abs(g_a) <= -c2 * g0:
                return a, f_a, g_a
            if g_a * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi, g_hi = a_lo, f_lo, g_lo
            a_lo, f_lo, g_lo = a, f_a, g_a
        if abs(a_hi - a_lo) < 1e-14:
            break
    return a_lo, f_lo, g_lo


def _strong_wolfe(phi, f0, g0, a_init=1.0, c1=1e-4, c2=0.9, a_max=1e3, max_iter=25):
    """Strong-Wolfe line search (sufficient decrease + curvature).

    ``phi(a)`` returns (value, directional derivative) at step a. Returns
    (a, f, g) at an acceptable point, or (None, f0, g0) on failure.
    """
    if g0 >= 0.0:
        return None, f0, g0
    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = a_init
    for i in range(max_iter):
        f_a, g_a = phi(a)
        if not np.isfinite(f_a):
            # treat blow-ups as hitting a wall: bracket towards the good side
            a_lo, f_lo, g_lo = _zoom(phi, a_prev, a, f_prev, g_prev, np.inf, f0, g0, c1, c2)
            if f_lo < f0:
                return a_lo, f_lo, g_lo
            return None, f0, g0
        if f_a > f0 + c1 * a * g0 or (i > 0 and f_a >= f_prev):
            return _zoom(phi, a_prev, a, f_prev, g_prev, f_a, f0, g0, c1, c2)
        if abs(g_a) <= -c2 * g0:
            return a, f_a, g_a
        if g_a >= 0.0:
            return _zoom(phi, a, a_prev, f_a, g_a, f_prev, f0, g0, c1, c2)
        a_prev, f_prev, g_prev = a, f_a, g_a
        a = min(2.0 * a, a_max)
        if a_prev >= a_max:
            break
    return None, f0, g0


def lbfgs(fun, x0, memory: int = 10, rel_loss_tol: float = 1e-8,
          max_iters: int = 500, grad_tol: float = 0.0, c1: float = 1e-4,
          c2: float = 0.9) -> OptimizeResult:
    """Limited-memory quasi-Newton with strong-Wolfe line search.

    Stops when the relative loss change between accepted iterates falls
    below ``rel_loss_tol``, the line search cannot make progress, or
    ``max_iters`` is reached. The accepted-loss sequence is non-increasing
    (Wolfe sufficient decrease).
    """
    x = np.asarray(x0, dtype=float).copy()
    loss, grad = fun(x)
    if not np.isfinite(loss):
        raise DivergedFit("non-finite loss at the quasi-Newton start")
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    history = [(0, loss)]
    converged = False
    n_done = 0

    for it in range(1, max_iters + 1):
        if grad_tol > 0.0 and float(np.max(np.abs(grad))) <= grad_tol:
            converged = True
            break
        # two-loop recursion for the search direction
        q = grad.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            yy = float(y_hist[-1] @ y_hist[-1])
            if yy > 0.0:
                gamma = float(s_hist[-1] @ y_hist[-1]) / yy
                if np.isfinite(gamma) and gamma > 0.0:
                    q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        g0 = float(grad @ d)
        if g0 >= 0.0:   # direction lost descent property; restart from steepest descent
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            d = -grad
            g0 = float(grad @ d)
            if g0 >= 0.0:
                converged = True
                break

        cache = {}

        def phi(a):
            xa = x + a * d
            fa, ga = _safe_eval(fun, xa)
            cache[a] = (xa, ga)
            return fa, (np.inf if ga is None else float(ga @ d))

        a_init = 1.0 if y_hist else min(1.0, 2.0 * abs(loss) / max(-g0, 1e-300))
        a, f_new, _ = _strong_wolfe(phi, loss, g0, a_init=a_init, c1=c1, c2=c2)
        if a is None or not np.isfinite(f_new) or f_new > loss:
            break   # no acceptable step: treat as converged at x
        x_new, grad_new = cache[a]
        if grad_new is None:
            _, grad_new = fun(x_new)
        s = x_new - x
        y = grad_new - grad
        sy = float(s @ y)
        sy_floor = 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y))
        if np.isfinite(sy) and sy > max(sy_floor, 1e-300):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        rel_change = abs(loss - f_new) / max(abs(loss), 1e-300)
        x, loss, grad = x_new, f_new, grad_new
        history.append((it, loss))
        n_done = it
        if rel_change < rel_loss_tol:
            converged = True
            break

    return OptimizeResult(x=x, loss=loss, n_iters=n_done, history=history, converged=converged)


def diagonal_curvature(fun, x, step: float = 1e-4) -> np.ndarray:
    """Per-coordinate second derivative of the objective, by central
    differences of the gradient. Coordinates where the probe blows up or
    the curvature vanishes fall back to the largest magnitude seen."""
    x = np.asarray(x, dtype=float)
    diag = np.full(x.size, np.nan)
    for k in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[k] += step
        lo[k] -= step
        f_hi, g_hi = _safe_eval(fun, hi)
        f_lo, g_lo = _safe_eval(fun, lo)
        if g_hi is not None and g_lo is not None:
            diag[k] = (g_hi[k] - g_lo[k]) / (2.0 * step)
    mag = np.abs(diag)
    top = np.nanmax(mag) if np.any(np.isfinite(mag)) else 1.0
    mag[~np.isfinite(mag)] = top
    return np.maximum(mag, 1e-6 * top)


def lbfgs_preconditioned(fun, x0, memory: int = 10, rel_loss_tol: float = 1e-8,
                         max_iters: int = 500, curvature_step: float = 1e-4) -> OptimizeResult:
    """L-BFGS in diagonally rescaled coordinates.

    The objective's diagonal curvature at x0 sets a fixed change of
    variables y = x / d, d_k = |H_kk|^(-1/2), which evens out the vastly
    different parameter sensitivities (output-layer weights vs. log C) and
    lets the limited memory capture the remaining coupling.
    """
    x0 = np.asarray(x0, dtype=float)
    d = 1.0 / np.sqrt(diagonal_curvature(fun, x0, step=curvature_step))

    def fun_scaled(y):
        loss, grad = fun(d * y)
        return loss, d * grad

    res = lbfgs(fun_scaled, x0 / d, memory=memory, rel_loss_tol=rel_loss_tol,
                max_iters=max_iters)
    res.x = d * res.x
    return res
