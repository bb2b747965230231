"""Minimal feed-forward network with swish hidden layers and a scaled sigmoid output.

The output is bounded to the open interval (0, output_scale) by construction;
the bound belongs to the network, not to callers. Parameters flatten to a
single vector in a fixed canonical ordering: all weight matrices
layer-by-layer in row-major order, then all bias vectors layer-by-layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .errors import DimensionMismatch

__all__ = [
    "MLPParams",
    "swish",
    "sigmoid",
    "init_glorot",
    "forward",
    "forward_cached",
    "backward",
    "flatten_params",
    "unflatten_params",
    "n_params",
    "save_mlp",
    "load_mlp",
    "mlp_header_line",
    "parse_header_line",
]


@dataclass
class MLPParams:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]       # per layer, shape (fan_out, fan_in)
    biases: list[np.ndarray]        # per layer, shape (fan_out,)
    output_scale: float
    seed: int | None = None

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("need at least an input and an output layer")
        if self.output_scale <= 0:
            raise ValueError("output_scale must be positive")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != expect or b.shape != (expect[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} vs dims {expect}")


def swish(x):
    """x * sigmoid(x); smooth, non-monotone near zero."""
    x = np.asarray(x, dtype=float)
    out = x * sigmoid(x)
    return float(out) if out.ndim == 0 else out


def _swish_deriv(z, sz):
    # d/dz [z*sigmoid(z)] given sz = sigmoid(z)
    return sz * (1.0 + z * (1.0 - sz))


def init_glorot(layer_dims, seed: int, output_scale: float = 1.0) -> MLPParams:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(layer_dims=dims, weights=weights, biases=biases,
                     output_scale=float(output_scale), seed=int(seed))


def _check_input(params: MLPParams, x: np.ndarray) -> None:
    if x.shape[0] != params.layer_dims[0]:
        raise DimensionMismatch(
            f"input dim {x.shape[0]} != network input dim {params.layer_dims[0]}")


def forward(params: MLPParams, x):
    """Network output in (0, output_scale).

    ``x`` may be a single input vector (d,) -> float, or a batch (d, n) -> (n,).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[:, None] if single else x
    _check_input(params, a)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = w @ a + b[:, None]
        a = params.output_scale * sigmoid(z) if i == last else swish(z)
    out = a[0]
    return float(out[0]) if single else out


def forward_cached(params: MLPParams, x: np.ndarray):
    """Batched forward keeping pre-activations and activations for backward.

    Returns (output (n,), cache). ``x`` must be (d, n).
    """
    _check_input(params, x)
    activations = [x]
    zs = []
    sigmas = []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = w @ a + b[:, None]
        sz = sigmoid(z)
        zs.append(z)
        sigmas.append(sz)
        a = params.output_scale * sz if i == last else z * sz
        activations.append(a)
    return activations[-1][0], (activations, zs, sigmas)


def backward(params: MLPParams, x, upstream=1.0, cache=None, grad_out=None):
    """Reverse-mode partials of ``forward`` w.r.t. parameters and input.

    ``x`` is a single input (d,) or a batch (d, n); ``upstream`` a scalar or
    (n,) vector of output-gradient weights. Returns (flat parameter gradient
    in canonical ordering, input gradient matching the shape of ``x``). Batch
    contributions are summed into the parameter gradient. ``grad_out`` may
    supply a preallocated vector to accumulate into.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[:, None] if single else x
    if cache is None:
        _, cache = forward_cached(params, xb)
    activations, zs, sigmas = cache
    up = np.asarray(upstream, dtype=float)
    ns = xb.shape[1]
    delta = np.broadcast_to(up, (ns,)).reshape(1, ns).astype(float)

    last = len(params.weights) - 1
    # output layer: d(scale*sigmoid(z))/dz = scale * s * (1 - s)
    s_out = sigmas[last]
    delta = delta * params.output_scale * s_out * (1.0 - s_out)

    n_w = sum(w.size for w in params.weights)
    grads = grad_out if grad_out is not None else np.zeros(n_w + sum(b.size for b in params.biases))
    w_off = 0
    b_off = n_w
    offsets = []
    for w in params.weights:
        offsets.append((w_off, b_off))
        w_off += w.size
        b_off += w.shape[0]

    for i in range(last, -1, -1):
        w = params.weights[i]
        wo, bo = offsets[i]
        a_prev = activations[i]
        gw = delta @ a_prev.T
        grads[wo:wo + w.size] += gw.ravel()
        grads[bo:bo + w.shape[0]] += delta.sum(axis=1)
        delta = w.T @ delta
        if i > 0:
            delta = delta * _swish_deriv(zs[i - 1], sigmas[i - 1])

    input_grad = delta[:, 0] if single else delta
    return grads, input_grad


def n_params(layer_dims) -> int:
    dims = tuple(layer_dims)
    return sum(di * do + do for di, do in zip(dims[:-1], dims[1:]))


def flatten_params(params: MLPParams) -> np.ndarray:
    """Canonical flat vector: weights layer-by-layer row-major, then biases."""
    parts = [w.ravel() for w in params.weights] + list(params.biases)
    return np.concatenate(parts)


def unflatten_params(vector: np.ndarray, template: MLPParams) -> MLPParams:
    """Rebuild an MLPParams with ``template``'s shape from a canonical vector."""
    vector = np.asarray(vector, dtype=float)
    if vector.size != n_params(template.layer_dims):
        raise ValueError(f"expected {n_params(template.layer_dims)} values, got {vector.size}")
    weights, biases = [], []
    off = 0
    for w in template.weights:
        weights.append(vector[off:off + w.size].reshape(w.shape).copy())
        off += w.size
    for b in template.biases:
        biases.append(vector[off:off + b.size].copy())
        off += b.size
    return MLPParams(layer_dims=template.layer_dims, weights=weights, biases=biases,
                     output_scale=template.output_scale, seed=template.seed)


def mlp_header_line(params: MLPParams) -> str:
    dims = ",".join(str(d) for d in params.layer_dims)
    seed = "none" if params.seed is None else str(params.seed)
    return f"layer_dims={dims} output_scale={float(params.output_scale)!r} seed={seed}"


def parse_header_line(line: str):
    fields = dict(item.split("=", 1) for item in line.strip().split())
    dims = tuple(int(d) for d in fields["layer_dims"].split(","))
    scale = float(fields["output_scale"])
    seed = None if fields.get("seed", "none") == "none" else int(fields["seed"])
    return dims, scale, seed


def save_mlp(params: MLPParams, path) -> None:
    """Plain text: one header line, then one parameter value per line."""
    flat = flatten_params(params)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(mlp_header_line(params) + "\n")
        for v in flat:
            fh.write(f"{float(v)!r}\n")


def load_mlp(path) -> MLPParams:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    dims, scale, seed = parse_header_line(lines[0])
    count = n_params(dims)
    values = np.array([float(s) for s in lines[1:1 + count]])
    zero = MLPParams(
        layer_dims=dims,
        weights=[np.zeros((do, di)) for di, do in zip(dims[:-1], dims[1:])],
        biases=[np.zeros(do) for do in dims[1:]],
        output_scale=scale,
        seed=seed,
    )
    return unflatten_params(values, zero)
