"""Small fully-connected networks with hand-written backprop and Adam.

Everything operates on float64 numpy arrays. Inputs may be a single vector
of shape ``(in_dim,)`` or a batch of row vectors ``(batch, in_dim)``; layer
weights are stored ``(out_dim, in_dim)`` so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

DEFAULT_LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class Activation:
    """Elementwise nonlinearity: ``"relu"``, ``"leaky_relu"`` or ``"identity"``."""

    kind: str
    slope: float = DEFAULT_LEAKY_SLOPE

    def __post_init__(self):
        if self.kind not in ("relu", "leaky_relu", "identity"):
            raise ContractError(f"unknown activation kind {self.kind!r}")


RELU = Activation("relu")
IDENTITY = Activation("identity")


def leaky_relu(slope: float = DEFAULT_LEAKY_SLOPE) -> Activation:
    return Activation("leaky_relu", slope)


def activation_apply(act: Activation, x):
    x = np.asarray(x, dtype=np.float64)
    if act.kind == "relu":
        return np.maximum(x, 0.0)
    if act.kind == "leaky_relu":
        return np.where(x >= 0, x, act.slope * x)
    return x.copy()


def activation_grad(act: Activation, x):
    """Derivative of the activation w.r.t. its input, evaluated at ``x``.

    At the kink the derivative of the branch that ``activation_apply`` uses
    for ``x == 0`` is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    if act.kind == "relu":
        return (x > 0).astype(np.float64)
    if act.kind == "leaky_relu":
        return np.where(x >= 0, 1.0, act.slope)
    return np.ones_like(x)


@dataclass
class LinearLayer:
    """Affine map ``y = x @ weights.T + bias``.

    Also used as the container for per-layer gradients and Adam moments, since
    those share the exact same shapes.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"inconsistent layer: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int) -> "LinearLayer":
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim))

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearLayer":
        # fan-in uniform weights, zero bias
        bound = 1.0 / np.sqrt(in_dim)
        return cls(rng.uniform(-bound, bound, size=(out_dim, in_dim)), np.zeros(out_dim))

    def zeros_like(self) -> "LinearLayer":
        return LinearLayer(np.zeros_like(self.weights), np.zeros_like(self.bias))

    def copy(self) -> "LinearLayer":
        return LinearLayer(self.weights.copy(), self.bias.copy())


# Gradients w.r.t. a list of layers, one LinearLayer-shaped entry per layer.
GradBundle = list


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple
    hidden_activation: Activation = field(default_factory=leaky_relu)
    output_activation: Activation = IDENTITY

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ContractError(f"layer_dims must have >= 2 positive entries, got {dims}")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    def activation(self, layer: int) -> Activation:
        if layer == self.num_layers - 1:
            return self.output_activation
        return self.hidden_activation

    def init_params(self, rng: np.random.Generator) -> list[LinearLayer]:
        return [
            LinearLayer.init(d_in, d_out, rng)
            for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:])
        ]

    def param_count(self) -> int:
        return sum((d_in + 1) * d_out for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:]))


def _check_params(spec: MlpSpec, params: Sequence[LinearLayer]):
    if len(params) != spec.num_layers:
        raise ShapeError(f"spec has {spec.num_layers} layers but {len(params)} were given")
    for i, (layer, d_in, d_out) in enumerate(zip(params, spec.layer_dims[:-1], spec.layer_dims[1:])):
        if layer.weights.shape != (d_out, d_in) or layer.bias.shape != (d_out,):
            raise ShapeError(
                f"layer {i}: expected weights {(d_out, d_in)}, got {layer.weights.shape}"
            )


def mlp_forward(spec: MlpSpec, params: Sequence[LinearLayer], x):
    """Run the network.

    Returns ``(output, cache)`` where ``cache`` holds, per layer, the layer
    input and the pre-activation. Pass the cache unchanged to
    :func:`mlp_backward`.
    """
    _check_params(spec, params)
    h = np.asarray(x, dtype=np.float64)
    cache = []
    for i, layer in enumerate(params):
        if h.shape[-1] != layer.in_dim:
            raise ShapeError(f"layer {i}: input width {h.shape[-1]} != in_dim {layer.in_dim}")
        pre = h @ layer.weights.T + layer.bias
        cache.append((h, pre))
        h = activation_apply(spec.activation(i), pre)
    return h, cache


def mlp_backward(spec: MlpSpec, params: Sequence[LinearLayer], cache, upstream_grad):
    """Backpropagate ``upstream_grad`` (dL/d output) through the network.

    For batched inputs the parameter gradients are summed over the batch, i.e.
    ``upstream_grad`` must already carry any 1/batch averaging.

    Returns ``(grads, input_grad)``.
    """
    _check_params(spec, params)
    if len(cache) != len(params):
        raise ShapeError(f"cache has {len(cache)} entries for {len(params)} layers")
    g = np.asarray(upstream_grad, dtype=np.float64)
    grads: GradBundle = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        layer = params[i]
        h_in, pre = cache[i]
        if pre.shape != g.shape:
            raise ShapeError(f"layer {i}: gradient shape {g.shape} != output shape {pre.shape}")
        g = g * activation_grad(spec.activation(i), pre)
        if g.ndim == 1:
            gw = np.outer(g, h_in)
            gb = g.copy()
        else:
            gw = g.T @ h_in
            gb = g.sum(axis=0)
        grads[i] = LinearLayer(gw, gb)
        g = g @ layer.weights
    return grads, g


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[LinearLayer], **kw) -> "AdamState":
        return cls([p.zeros_like() for p in params], [p.zeros_like() for p in params], **kw)


def adam_step(params: list, grads: GradBundle, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied to ``params`` and ``state`` in place.

    Returns ``(params, state)`` for convenience.
    """
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    if len(grads) != len(params) or len(state.first_moment) != len(params):
        raise ShapeError("params, grads and optimizer state have different layer counts")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.weights.shape != p.weights.shape or g.bias.shape != p.bias.shape:
            raise ShapeError(f"layer {i}: gradient shape does not match parameters")
        if not (np.isfinite(g.weights).all() and np.isfinite(g.bias).all()):
            raise NumericError(f"non-finite gradient in layer {i}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        for name in ("weights", "bias"):
            gi = getattr(g, name)
            mi = getattr(m, name)
            vi = getattr(v, name)
            mi *= b1
            mi += (1.0 - b1) * gi
            vi *= b2
            vi += (1.0 - b2) * gi * gi
            getattr(p, name)[...] -= lr * (mi / c1) / (np.sqrt(vi / c2) + state.epsilon)
    return params, state


def layer_arrays(layers: Sequence[LinearLayer]) -> list:
    """Flatten layers into ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
    out = []
    for layer in layers:
        out.extend((layer.weights, layer.bias))
    return out


def grad_check(loss_fn: Callable, params: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """Compare analytic gradients with central finite differences.

    ``loss_fn()`` takes no arguments, reads the current contents of the
    ``params`` arrays and returns ``(loss, grads)`` with one gradient array
    per entry of ``params``. Each entry is perturbed in place and restored.

    Returns ``max |g - fd| / max(1e-12, |g| + |fd|)`` over all entries.
    """
    if h <= 0:
        raise ContractError("step h must be positive")

    def scalar():
        value = float(loss_fn()[0])
        if not np.isfinite(value):
            raise NumericError("loss is not finite")
        return value

    loss, grads = loss_fn()
    if not np.isfinite(loss):
        raise NumericError("loss is not finite")
    grads = [np.array(g, dtype=np.float64, copy=True) for g in grads]

    worst = 0.0
    for arr, g in zip(params, grads):
        if g.shape != arr.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {arr.shape}")
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ContractError("grad_check needs contiguous parameter arrays")
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = scalar()
            flat[j] = orig - h
            down = scalar()
            flat[j] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(gflat[j] - fd) / max(1e-12, abs(gflat[j]) + abs(fd))
            worst = max(worst, err)
    return worst
