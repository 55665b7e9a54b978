"""Dense-network core: layers, reverse-mode gradients, losses and Adam.

Everything runs on float64 numpy arrays.  A network is an ordered list of
layers sharing one :class:`ParamSet`; ``forward_pass`` records a tape that
``backward_pass`` consumes to accumulate parameter gradients and return the
gradient with respect to the network input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

BCE_EPS = 1e-7
BN_EPS = 1e-7
BN_MOMENTUM = 0.9
LEAKY_SLOPE = 0.2

ACTIVATIONS = ("relu", "leaky-relu", "sigmoid", "linear")


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class MissingGradientError(RuntimeError):
    pass


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Convert to a float64 array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray | None = None
    trainable: bool = True

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise DimensionError(f"gradient for {self.name} has shape {g.shape}, expected {self.value.shape}")
        self.grad = g.copy() if self.grad is None else self.grad + g


class ParamSet:
    """Ordered, uniquely named parameters and buffers."""

    def __init__(self) -> None:
        self._params: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Param:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Param(name, np.array(value, dtype=np.float64), None, trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def trainable(self) -> list[Param]:
        return [p for p in self if p.trainable]

    def zero_grad(self) -> None:
        for p in self:
            p.grad = None

    def n_trainable(self) -> int:
        return sum(p.value.size for p in self.trainable())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"missing tensors: {sorted(missing)}")
        for name, p in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise DimensionError(f"{name}: shape {value.shape} != {p.value.shape}")
            p.value = value.copy()


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | batch-norm | activation
    fan_in: int
    fan_out: int
    activation: str = "linear"
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if self.kind not in ("dense", "batch-norm", "activation"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.fan_in < 1 or self.fan_out < 1:
            raise ValueError("fan-in and fan-out must be >= 1")
        if self.kind != "dense" and self.fan_in != self.fan_out:
            raise ValueError(f"{self.kind} layer must preserve width")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky-relu" and not 0.0 < self.slope < 1.0:
            raise ValueError("leaky slope must lie in (0, 1)")


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dense:
    def __init__(self, spec: LayerSpec, params: ParamSet, name: str, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        self.spec = spec
        self.name = name
        limit = np.sqrt(6.0 / (spec.fan_in + spec.fan_out))
        w = np.zeros((spec.fan_in, spec.fan_out)) if zero_init else \
            rng.uniform(-limit, limit, size=(spec.fan_in, spec.fan_out))
        self.w = params.add(f"{name}.weight", w)
        self.b = params.add(f"{name}.bias", np.zeros(spec.fan_out)) if bias else None

    def forward(self, x, train):
        y = x @ self.w.value
        if self.b is not None:
            y = y + self.b.value
        return y, x

    def backward(self, x, gy):
        self.w.accumulate(x.T @ gy)
        if self.b is not None:
            self.b.accumulate(gy.sum(axis=0))
        return gy @ self.w.value.T


class BatchNorm:
    def __init__(self, spec: LayerSpec, params: ParamSet, name: str,
                 momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.spec = spec
        self.name = name
        self.momentum = momentum
        self.eps = eps
        n = spec.fan_in
        self.gamma = params.add(f"{name}.scale", np.ones(n))
        self.beta = params.add(f"{name}.shift", np.zeros(n))
        self.running_mean = params.add(f"{name}.running_mean", np.zeros(n), trainable=False)
        self.running_var = params.add(f"{name}.running_var", np.ones(n), trainable=False)

    def forward(self, x, train):
        if train:
            if x.shape[0] < 2:
                raise DimensionError(f"{self.name}: batch norm needs a batch of at least 2 in train mode")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.running_mean.value = m * self.running_mean.value + (1 - m) * mean
            self.running_var.value = m * self.running_var.value + (1 - m) * var
        else:
            mean = self.running_mean.value
            var = self.running_var.value
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        return self.gamma.value * xhat + self.beta.value, (xhat, inv_std, train)

    def backward(self, cache, gy):
        xhat, inv_std, train = cache
        self.gamma.accumulate((gy * xhat).sum(axis=0))
        self.beta.accumulate(gy.sum(axis=0))
        gxhat = gy * self.gamma.value
        if not train:
            return gxhat * inv_std
        n = gy.shape[0]
        return inv_std / n * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))


class Activation:
    def __init__(self, spec: LayerSpec, name: str):
        self.spec = spec
        self.name = name

    def forward(self, x, train):
        kind = self.spec.activation
        if kind == "relu":
            return np.maximum(x, 0.0), x
        if kind == "leaky-relu":
            return np.where(x > 0, x, self.spec.slope * x), x
        if kind == "sigmoid":
            y = _sigmoid(x)
            return y, y
        return x, None

    def backward(self, cache, gy):
        kind = self.spec.activation
        if kind == "relu":
            return gy * (cache > 0)
        if kind == "leaky-relu":
            return gy * np.where(cache > 0, 1.0, self.spec.slope)
        if kind == "sigmoid":
            return gy * cache * (1.0 - cache)
        return gy


def relu_block(specs: list[LayerSpec], fan_in: int, width: int, bn: bool, activation: str) -> None:
    specs.append(LayerSpec("dense", fan_in, width))
    if bn:
        specs.append(LayerSpec("batch-norm", width, width))
    if activation != "linear":
        specs.append(LayerSpec("activation", width, width, activation))


class Network:
    """Sequential stack of dense, batch-norm and activation layers.

    Dense layers directly followed by batch norm carry no bias (it would be
    cancelled by the mean subtraction and its gradient is identically zero).
    """

    def __init__(self, specs: Sequence[LayerSpec], rng: np.random.Generator, name: str = "net",
                 params: ParamSet | None = None, zero_init_last: bool = False):
        if not specs:
            raise ValueError("network needs at least one layer")
        for a, b in zip(specs, specs[1:]):
            if a.fan_out != b.fan_in:
                raise DimensionError(f"layer widths do not chain: {a.fan_out} -> {b.fan_in}")
        self.specs = list(specs)
        self.name = name
        self.params = params if params is not None else ParamSet()
        last_dense = max(i for i, s in enumerate(specs) if s.kind == "dense") if any(
            s.kind == "dense" for s in specs) else -1
        self.layers = []
        for i, spec in enumerate(self.specs):
            lname = f"{name}.{i}"
            if spec.kind == "dense":
                followed_by_bn = i + 1 < len(specs) and specs[i + 1].kind == "batch-norm"
                self.layers.append(Dense(spec, self.params, lname, rng, bias=not followed_by_bn,
                                         zero_init=zero_init_last and i == last_dense))
            elif spec.kind == "batch-norm":
                self.layers.append(BatchNorm(spec, self.params, lname))
            else:
                self.layers.append(Activation(spec, lname))

    @property
    def in_width(self) -> int:
        return self.specs[0].fan_in

    @property
    def out_width(self) -> int:
        return self.specs[-1].fan_out

    def forward(self, x, mode: str = "eval"):
        return forward_pass(self, x, mode)

    def __call__(self, x, mode: str = "eval") -> np.ndarray:
        return forward_pass(self, x, mode)[0]


@dataclass
class Tape:
    net: Network
    mode: str
    entries: list
    out_shape: tuple


def forward_pass(net: Network, x, mode: str = "eval") -> tuple[np.ndarray, Tape]:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != net.in_width:
        raise DimensionError(f"{net.name}: expected input (batch, {net.in_width}), got {x.shape}")
    train = mode == "train"
    entries = []
    h = x
    for layer in net.layers:
        h, cache = layer.forward(h, train)
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite output in layer {layer.name}")
        entries.append((layer, cache))
    return h, Tape(net, mode, entries, h.shape)


def backward_pass(tape: Tape, grad_out) -> np.ndarray:
    """Accumulate parameter gradients; return d(loss)/d(input)."""
    if tape.mode != "train":
        raise ValueError("backward_pass needs a tape from a train-mode forward_pass")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != tape.out_shape:
        raise DimensionError(f"output gradient shape {g.shape} does not match tape output {tape.out_shape}")
    for layer, cache in reversed(tape.entries):
        g = layer.backward(cache, g)
    return g


def binary_cross_entropy(p, target, eps: float = BCE_EPS):
    """Elementwise BCE with predictions clamped to [eps, 1-eps]."""
    target = np.asarray(target, dtype=np.float64)
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("BCE target must be 0 or 1")
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    out = -(target * np.log(p) + (1 - target) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def bce_with_logits(logits: np.ndarray, target: float, eps: float = BCE_EPS):
    """Mean BCE of sigmoid(logits) against a constant target, plus d/dlogits.

    The gradient is zero where the clamp is active, matching the clamped value.
    """
    p = _sigmoid(logits)
    loss = binary_cross_entropy(p, np.full_like(p, target), eps)
    n = logits.shape[0]
    inside = (p > eps) & (p < 1 - eps)
    grad = np.where(inside, p - target, 0.0) / n
    return float(np.mean(loss)), grad


class Adam:
    """Bias-corrected Adam over the trainable entries of one ParamSet."""

    def __init__(self, params: ParamSet, lr: float = 1e-5, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params.trainable()}
        self.v = {p.name: np.zeros_like(p.value) for p in params.trainable()}

    def step(self) -> None:
        trainable = self.params.trainable()
        missing = [p.name for p in trainable if p.grad is None]
        if missing:
            raise MissingGradientError(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p in trainable:
            m = self.m[p.name] = b1 * self.m[p.name] + (1 - b1) * p.grad
            v = self.v[p.name] = b2 * self.v[p.name] + (1 - b2) * p.grad ** 2
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def gradient_check(net: Network, x, loss_fn: LossFn, h: float = 1e-5, floor: float = 1e-8) -> float:
    """Max relative error between backprop and central finite differences.

    ``loss_fn(output)`` returns ``(loss, dloss/doutput)``.  Forward passes run
    in train mode; batch-norm running statistics are restored afterwards.
    ``floor`` bounds the denominator so roundoff-sized gradients do not count.
    """
    buffers = {p.name: p.value.copy() for p in net.params if not p.trainable}

    def loss_at():
        out, _ = forward_pass(net, x, "train")
        return loss_fn(out)[0]

    net.params.zero_grad()
    out, tape = forward_pass(net, x, "train")
    backward_pass(tape, loss_fn(out)[1])
    worst = 0.0
    for p in net.params.trainable():
        analytic = p.grad
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at()
            flat[i] = orig - h
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    for name, value in buffers.items():
        net.params[name].value = value
    return worst
