"""Small ReLU networks with hand-written reverse mode.

Parameters live in one flat float64 vector (``theta``) laid out layer by
layer, weights first and then bias.  Hidden layers use ReLU (subgradient 0 at
0); the last layer is linear.  Dense layers store ``W`` as ``(fan_out,
fan_in)``; 1-D convolutions store ``W`` as ``(out_channels, in_channels,
width)`` and use circular padding with stride 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .linalg import DimensionError, spectral_norm
from .rng import as_rng

LOSS_KINDS = ("squared", "cross_entropy")


@dataclass(frozen=True)
class Dense:
    fan_in: int
    fan_out: int

    kind = "dense"

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.fan_out, self.fan_in)

    @property
    def bias_size(self) -> int:
        return self.fan_out

    @property
    def init_fan_in(self) -> int:
        return self.fan_in

    def apply(self, w, a):
        return a @ w.T

    def input_vjp(self, w, g):
        return g @ w

    def weight_vjp(self, a, g, per_sample=False):
        if per_sample:
            return np.einsum("bo,bi->boi", g, a)
        return g.T @ a

    def bias_vjp(self, g, per_sample=False):
        return g if per_sample else g.sum(axis=0)

    def to_dict(self) -> dict:
        return {"kind": "dense", "fan_in": self.fan_in, "fan_out": self.fan_out}


@dataclass(frozen=True)
class Conv1d:
    """Circular 1-D convolution; activations are flattened channel-major."""

    in_channels: int
    out_channels: int
    width: int
    length: int

    kind = "conv1d"

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.length

    @property
    def fan_out(self) -> int:
        return self.out_channels * self.length

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels, self.width)

    @property
    def bias_size(self) -> int:
        return self.out_channels

    @property
    def init_fan_in(self) -> int:
        # receptive field size, the usual He fan-in for convolutions
        return self.in_channels * self.width

    @property
    def _offset(self) -> int:
        return self.width // 2

    def _patches(self, a):
        # u[b, i, k, p] = a[b, i, (p + k - offset) mod length]
        x = a.reshape(a.shape[0], self.in_channels, self.length)
        off = self._offset
        return np.stack([np.roll(x, off - k, axis=2) for k in range(self.width)], axis=2)

    def apply(self, w, a):
        z = np.einsum("oik,bikp->bop", w, self._patches(a))
        return z.reshape(a.shape[0], self.fan_out)

    def input_vjp(self, w, g):
        g3 = g.reshape(g.shape[0], self.out_channels, self.length)
        gu = np.einsum("oik,bop->bikp", w, g3)
        off = self._offset
        out = np.zeros((g.shape[0], self.in_channels, self.length))
        for k in range(self.width):
            out += np.roll(gu[:, :, k, :], k - off, axis=2)
        return out.reshape(g.shape[0], self.fan_in)

    def weight_vjp(self, a, g, per_sample=False):
        g3 = g.reshape(g.shape[0], self.out_channels, self.length)
        u = self._patches(a)
        if per_sample:
            return np.einsum("bop,bikp->boik", g3, u)
        return np.einsum("bop,bikp->oik", g3, u)

    def bias_vjp(self, g, per_sample=False):
        g3 = g.reshape(g.shape[0], self.out_channels, self.length)
        return g3.sum(axis=2) if per_sample else g3.sum(axis=(0, 2))

    def expand_bias(self, b):
        return np.repeat(b, self.length)

    def to_dict(self) -> dict:
        return {
            "kind": "conv1d",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "width": self.width,
            "length": self.length,
        }


Layer = Union[Dense, Conv1d]


def layer_from_dict(d: dict) -> Layer:
    kind = d["kind"]
    if kind == "dense":
        return Dense(int(d["fan_in"]), int(d["fan_out"]))
    if kind == "conv1d":
        return Conv1d(int(d["in_channels"]), int(d["out_channels"]), int(d["width"]), int(d["length"]))
    raise ValueError(f"unknown layer kind {kind!r}")


def _bias_full(layer: Layer, b):
    return layer.expand_bias(b) if isinstance(layer, Conv1d) else b


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture: a stack of layers, ReLU between them, linear head."""

    input_dim: int
    layers: tuple[Layer, ...]
    allow_linear: bool = False
    _offsets: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers or (len(layers) < 2 and not self.allow_linear):
            raise ValueError("need at least one hidden layer (two or more layers)")
        if layers[0].fan_in != self.input_dim:
            raise ValueError(f"first layer fan_in {layers[0].fan_in} != input_dim {self.input_dim}")
        seen_dense = False
        for i, layer in enumerate(layers):
            if i and layers[i - 1].fan_out != layer.fan_in:
                raise ValueError(
                    f"layer {i}: fan_in {layer.fan_in} does not match previous fan_out "
                    f"{layers[i - 1].fan_out}"
                )
            if isinstance(layer, Dense):
                seen_dense = True
            elif seen_dense:
                raise ValueError("convolutional layers must precede all dense layers")
            if isinstance(layer, Conv1d) and layer.width > layer.length:
                raise ValueError(f"layer {i}: kernel width exceeds signal length")
        offsets = []
        pos = 0
        for layer in layers:
            nw = int(np.prod(layer.weight_shape))
            offsets.append((pos, pos + nw, pos + nw + layer.bias_size))
            pos += nw + layer.bias_size
        object.__setattr__(self, "_offsets", tuple(offsets))

    @classmethod
    def mlp(cls, input_dim: int, hidden: list[int] | tuple[int, ...], output_dim: int) -> "NetworkSpec":
        dims = [input_dim, *hidden, output_dim]
        return cls(input_dim, tuple(Dense(a, b) for a, b in zip(dims[:-1], dims[1:])))

    @classmethod
    def linear(cls, input_dim: int, output_dim: int = 1) -> "NetworkSpec":
        """Affine model ``f(x) = W x + b``; only for closed-form checks."""
        return cls(input_dim, (Dense(input_dim, output_dim),), allow_linear=True)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def n_params(self) -> int:
        return self._offsets[-1][2]

    @property
    def n_hidden(self) -> int:
        return len(self.layers) - 1

    def to_dict(self) -> dict:
        d = {"input_dim": self.input_dim, "layers": [layer.to_dict() for layer in self.layers]}
        if self.allow_linear:
            d["allow_linear"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            int(d["input_dim"]),
            tuple(layer_from_dict(x) for x in d["layers"]),
            bool(d.get("allow_linear", False)),
        )


def unflatten(spec: NetworkSpec, theta) -> list[tuple[np.ndarray, np.ndarray]]:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise DimensionError(f"theta has shape {theta.shape}, expected ({spec.n_params},)")
    out = []
    for layer, (s, m, e) in zip(spec.layers, spec._offsets):
        out.append((theta[s:m].reshape(layer.weight_shape), theta[m:e]))
    return out


def flatten(params) -> np.ndarray:
    return np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in params])


def init_params(spec: NetworkSpec, seed, bias_std: float = 0.0) -> np.ndarray:
    """He initialization: weights ~ N(0, 2/fan_in), biases zero.

    ``bias_std > 0`` draws the biases from N(0, bias_std^2) instead; zero
    biases make the kernel of a 1-D input net rank-deficient.
    """
    rng = as_rng(seed)
    params = []
    for layer in spec.layers:
        std = np.sqrt(2.0 / layer.init_fan_in)
        w = rng.normal(0.0, std, size=layer.weight_shape)
        b = rng.normal(0.0, bias_std, size=layer.bias_size) if bias_std > 0 else np.zeros(layer.bias_size)
        params.append((w, b))
    return flatten(params)


@dataclass(frozen=True)
class ForwardTrace:
    """Inputs to every layer and the pre-activations it produced."""

    inputs: tuple[np.ndarray, ...]
    pre: tuple[np.ndarray, ...]

    @property
    def masks(self):
        return tuple(z > 0 for z in self.pre[:-1])


def _as_batch(spec: NetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"input has shape {x.shape}, expected (batch, {spec.input_dim})")
    return x


def forward(spec: NetworkSpec, theta, x) -> tuple[np.ndarray, ForwardTrace]:
    x = _as_batch(spec, x)
    params = unflatten(spec, theta)
    inputs, pre = [], []
    a = x
    last = len(spec.layers) - 1
    for h, (layer, (w, b)) in enumerate(zip(spec.layers, params)):
        inputs.append(a)
        z = layer.apply(w, a) + _bias_full(layer, b)
        pre.append(z)
        a = z if h == last else np.maximum(z, 0.0)
    return a, ForwardTrace(tuple(inputs), tuple(pre))


def predict(spec: NetworkSpec, theta, x) -> np.ndarray:
    return forward(spec, theta, x)[0]


def backward(spec: NetworkSpec, theta, trace: ForwardTrace, cotangent, per_sample: bool = False,
             wrt_input: bool = False):
    """Pull an output cotangent back to parameters (and optionally inputs).

    Returns the flat parameter gradient of ``sum(cotangent * outputs)``, with a
    leading batch axis when ``per_sample`` is set.  With ``wrt_input`` the
    input gradient is returned as a second value.
    """
    params = unflatten(spec, theta)
    g = np.asarray(cotangent, dtype=np.float64)
    grads = [None] * len(params)
    for h in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[h]
        w, _ = params[h]
        a = trace.inputs[h]
        gw = layer.weight_vjp(a, g, per_sample)
        gb = layer.bias_vjp(g, per_sample)
        if per_sample:
            grads[h] = np.concatenate([gw.reshape(g.shape[0], -1), gb.reshape(g.shape[0], -1)], axis=1)
        else:
            grads[h] = np.concatenate([gw.ravel(), gb.ravel()])
        if h > 0 or wrt_input:
            g = layer.input_vjp(w, g)
            if h > 0:
                g = g * (trace.pre[h - 1] > 0)
    flat = np.concatenate(grads, axis=-1)
    if wrt_input:
        return flat, g
    return flat


def vjp(spec: NetworkSpec, theta, x, cotangent) -> np.ndarray:
    _, trace = forward(spec, theta, x)
    return backward(spec, theta, trace, cotangent)


def loss_terms(outputs, y, loss_kind: str):
    """Mean loss and per-sample derivative ``dC(f(x_i), y_i)/df(x_i)``.

    Squared loss is ``1/(2n) sum ||f - y||^2``; cross-entropy takes integer
    class labels and averages the negative log-softmax likelihood.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    n = outputs.shape[0]
    if loss_kind == "squared":
        y = np.asarray(y, dtype=np.float64).reshape(outputs.shape)
        r = outputs - y
        return 0.5 * float(np.sum(r * r)) / n, r
    if loss_kind == "cross_entropy":
        if outputs.shape[1] < 2:
            raise ValueError("cross_entropy needs output_dim >= 2")
        labels = np.asarray(y).astype(np.int64).reshape(n)
        z = outputs - outputs.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        c = np.exp(logp)
        c[np.arange(n), labels] -= 1.0
        return -float(logp[np.arange(n), labels].mean()), c
    raise ValueError(f"unknown loss kind {loss_kind!r}; expected one of {LOSS_KINDS}")


def loss(spec: NetworkSpec, theta, x, y, loss_kind: str = "squared") -> float:
    return loss_terms(predict(spec, theta, x), y, loss_kind)[0]


def loss_and_grad(spec: NetworkSpec, theta, x, y, loss_kind: str = "squared") -> tuple[float, np.ndarray]:
    out, trace = forward(spec, theta, x)
    if out.shape[0] == 0:
        raise ValueError("empty batch")
    value, c = loss_terms(out, y, loss_kind)
    return value, backward(spec, theta, trace, c / out.shape[0])


def grad_loss(spec: NetworkSpec, theta, x, y, loss_kind: str = "squared") -> np.ndarray:
    return loss_and_grad(spec, theta, x, y, loss_kind)[1]


def jacobians(spec: NetworkSpec, theta, x) -> np.ndarray:
    """Per-sample parameter Jacobians, shape ``(batch, output_dim, n_params)``."""
    out, trace = forward(spec, theta, x)
    n, dy = out.shape
    jac = np.empty((n, dy, spec.n_params))
    for j in range(dy):
        cot = np.zeros((n, dy))
        cot[:, j] = 1.0
        jac[:, j, :] = backward(spec, theta, trace, cot, per_sample=True)
    return jac


def jacobian(spec: NetworkSpec, theta, x) -> np.ndarray:
    """Jacobian of a single input's outputs, shape ``(output_dim, n_params)``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return jacobians(spec, theta, x[None, :])[0]


def input_grad(spec: NetworkSpec, theta, x, cotangent) -> np.ndarray:
    """Gradient of ``sum(cotangent * f(x))`` with respect to the inputs."""
    _, trace = forward(spec, theta, x)
    return backward(spec, theta, trace, cotangent, wrt_input=True)[1]


def tangent_forward(spec: NetworkSpec, theta, direction, x):
    """Outputs and their directional derivative along ``direction`` in parameter space.

    The tangent of a sample's outputs equals ``jacobian(x) @ direction``.
    """
    x = _as_batch(spec, x)
    params = unflatten(spec, theta)
    dparams = unflatten(spec, direction)
    a, da = x, np.zeros_like(x)
    last = len(spec.layers) - 1
    state = []
    for h, (layer, (w, b), (dw, db)) in enumerate(zip(spec.layers, params, dparams)):
        z = layer.apply(w, a) + _bias_full(layer, b)
        dz = layer.apply(dw, a) + layer.apply(w, da) + _bias_full(layer, db)
        state.append((a, da))
        if h == last:
            a, da = z, dz
        else:
            m = z > 0
            a, da = z * m, dz * m
            state[-1] = state[-1] + (m,)
    return a, da, state


def tangent_input_grad(spec: NetworkSpec, theta, direction, x, cot_out, cot_tangent) -> np.ndarray:
    """Input gradient of ``sum(cot_out * f(x)) + sum(cot_tangent * (J(x) @ direction))``.

    Reverse pass through the tangent computation with ReLU masks held fixed,
    which is exact away from activation boundaries.
    """
    _, _, state = tangent_forward(spec, theta, direction, x)
    params = unflatten(spec, theta)
    dparams = unflatten(spec, direction)
    g = np.asarray(cot_out, dtype=np.float64)
    gd = np.asarray(cot_tangent, dtype=np.float64)
    for h in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[h]
        w, _ = params[h]
        dw, _ = dparams[h]
        # z = W a + b ; dz = dW a + W da + db
        g_a = layer.input_vjp(w, g) + layer.input_vjp(dw, gd)
        g_da = layer.input_vjp(w, gd)
        if h > 0:
            m = state[h - 1][2]
            g, gd = g_a * m, g_da * m
        else:
            g = g_a
    return g


def spectral_norms(spec: NetworkSpec, theta, iters: int = 50, tol: float = 1e-8) -> list[float]:
    """Per-layer spectral norms; conv layers report sqrt(input_dim) * ||kernel||_2."""
    out = []
    for layer, (w, _) in zip(spec.layers, unflatten(spec, theta)):
        if isinstance(layer, Conv1d):
            out.append(float(np.sqrt(spec.input_dim) * np.linalg.norm(w.ravel())))
        else:
            out.append(spectral_norm(w, iters=iters, tol=tol))
    return out
