"""Dense networks with GELU hidden layers and hand-written backprop."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_C = math.sqrt(2.0 / math.pi)
_A = 0.044715

HEADS = ("linear", "tanh")


class StaleCacheError(RuntimeError):
    """Backward was called with a cache from before the last parameter change."""


def gelu(x):
    """GELU, tanh approximation."""
    return 0.5 * x * (1.0 + np.tanh(_C * x * (1.0 + _A * x * x)))


def gelu_grad(x, t=None):
    """Derivative of :func:`gelu`; ``t`` may pass in the tanh term from the forward pass."""
    if t is None:
        t = np.tanh(_C * x * (1.0 + _A * x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _C * (1.0 + 3.0 * _A * x * x)


@dataclass(frozen=True)
class MlpSpec:
    sizes: tuple  # input, hidden..., output
    head: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"layer sizes must be >= 1 and at least two, got {self.sizes}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")

    @property
    def layers(self):
        return list(zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layers)


@dataclass
class Cache:
    inputs: list  # input to every affine layer
    pre: list  # pre-activation of every layer
    tanh: list  # inner tanh of every GELU
    output: np.ndarray
    version: int
    owner: int


class Mlp:
    """Parameters are kept as a flat list ``[W0, b0, W1, b1, ...]``, ``W`` shaped (in, out)."""

    def __init__(self, spec: MlpSpec, params=None, rng=None, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        if params is None:
            rng = np.random.default_rng(rng)
            params = []
            for i, o in spec.layers:
                bound = 1.0 / math.sqrt(i)
                params += [rng.uniform(-bound, bound, (i, o)), rng.uniform(-bound, bound, o)]
        self.params = [np.array(p, dtype=self.dtype) for p in params]
        self._check_shapes()
        self.version = 0

    def _check_shapes(self):
        want = [s for i, o in self.spec.layers for s in ((i, o), (o,))]
        got = [p.shape for p in self.params]
        if want != got:
            raise ValueError(f"parameter shapes {got} do not match spec {want}")

    def touch(self):
        """Mark parameters as changed; earlier caches become stale."""
        self.version += 1

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [p.copy() for p in self.params], dtype=self.dtype)

    def forward(self, x):
        """Return ``(output, cache)`` for a batch ``x`` of shape (n, in)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.spec.sizes[0]:
            raise ValueError(f"expected input (n, {self.spec.sizes[0]}), got {x.shape}")
        inputs, pre, tanh = [], [], []
        h = x
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            inputs.append(h)
            z = h @ self.params[2 * k] + self.params[2 * k + 1]
            pre.append(z)
            if k < n_layers - 1:
                t = np.tanh(_C * z * (1.0 + _A * z * z))
                tanh.append(t)
                h = 0.5 * z * (1.0 + t)
            else:
                h = np.tanh(z) if self.spec.head == "tanh" else z
        return h, Cache(inputs, pre, tanh, h, self.version, id(self))

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: Cache, grad_out):
        """Return ``(param_grads, input_grad)`` for upstream gradient ``grad_out``."""
        if cache.owner != id(self) or cache.version != self.version:
            raise StaleCacheError("forward cache does not belong to the current parameters")
        g = np.asarray(grad_out, dtype=self.dtype)
        if g.shape != cache.output.shape:
            raise ValueError(f"gradient shape {g.shape} does not match output {cache.output.shape}")
        n_layers = len(self.params) // 2
        grads = [None] * len(self.params)
        if self.spec.head == "tanh":
            g = g * (1.0 - cache.output**2)
        for k in reversed(range(n_layers)):
            if k < n_layers - 1:
                g = g * gelu_grad(cache.pre[k], cache.tanh[k])
            grads[2 * k] = cache.inputs[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.params[2 * k].T
        return grads, g


def soft_update(online, target, tau: float):
    """In place ``target <- tau * online + (1 - tau) * target`` over matching parameter lists."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    online_p = online.params if isinstance(online, Mlp) else online
    target_p = target.params if isinstance(target, Mlp) else target
    if [p.shape for p in online_p] != [p.shape for p in target_p]:
        raise ValueError("online and target parameter shapes differ")
    for o, t in zip(online_p, target_p):
        if tau == 1.0:
            t[...] = o
        elif tau != 0.0:
            t *= 1.0 - tau
            t += tau * o
    if isinstance(target, Mlp):
        target.touch()
    return target
