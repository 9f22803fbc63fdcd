"""Dense numerics for the rest of the package.

Everything runs on plain float64 numpy arrays.  Gradients are derived by
hand inside each block's ``backward``; :func:`finite_diff_check` is the
safety net that keeps those derivations honest.  Random draws go through
counter-based Philox streams so that independent components of a run never
share generator state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import copy

import numpy as np

Array = np.ndarray

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for a (seed, stream...) coordinate.

    Built on Philox, a counter-based generator: equal arguments always
    reproduce the same sequence, distinct stream ids give statistically
    independent streams.  Components of an experiment (sampler, noise,
    replay, ...) each get their own stream id so adding draws to one never
    shifts another.
    """
    entropy = [int(seed) & _MASK64] + [int(s) & _MASK64 for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def assert_finite(name: str, value: Array) -> Array:
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{name} contains non-finite entries")
    return value


def softmax(v: Array) -> Array:
    """Stable softmax over the last axis (max is subtracted before exp)."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("softmax needs at least one element")
    z = np.exp(v - np.max(v, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def tanh(v: Array) -> Array:
    return np.tanh(np.asarray(v, dtype=float))


def sigmoid(v: Array) -> Array:
    """Logistic function, stable for large |v| in either direction."""
    v = np.asarray(v, dtype=float)
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Array:
    """Uniform draw in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


class DifferentiableBlock:
    """Base class for manually differentiated components.

    Subclasses register arrays in ``self.params`` and call
    :meth:`_finish_setup` to allocate the mirror-shaped ``self.grads``.
    ``backward`` implementations accumulate (+=) into ``grads`` and must
    only run after a forward pass has populated ``self._cache``.
    """

    def __init__(self) -> None:
        self.params: dict[str, Array] = {}
        self.grads: dict[str, Array] = {}
        self._cache = None

    def _finish_setup(self) -> None:
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def clone(self) -> "DifferentiableBlock":
        return copy.deepcopy(self)

    def param_bytes(self) -> bytes:
        """Stable byte serialization of all parameters, name-sorted."""
        chunks = []
        for name in sorted(self.params):
            chunks.append(name.encode())
            chunks.append(np.ascontiguousarray(self.params[name]).tobytes())
        return b"".join(chunks)


class Sgd:
    """Plain gradient descent; ``step`` applies and then clears gradients."""

    kind = "sgd"

    def __init__(self, lr: float) -> None:
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.steps = 0

    def reset(self) -> None:
        self.steps = 0

    def step(self, block: DifferentiableBlock) -> None:
        self.steps += 1
        for name, p in block.params.items():
            g = block.grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
            p -= self.lr * g
        block.zero_grads()


class Adam:
    """Adam with bias correction.  Moment buffers are keyed per parameter
    name, so one instance serves exactly one block."""

    kind = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m: dict[str, Array] = {}
        self._v: dict[str, Array] = {}

    def reset(self) -> None:
        self.steps = 0
        self._m.clear()
        self._v.clear()

    def step(self, block: DifferentiableBlock) -> None:
        self.steps += 1
        t = self.steps
        for name, p in block.params.items():
            g = block.grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            if m.shape != p.shape:
                raise ValueError(f"moment shape {m.shape} does not match {name} {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        block.zero_grads()


def make_optimizer(kind: str, lr: float):
    if kind == "sgd":
        return Sgd(lr)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")


class Mlp(DifferentiableBlock):
    """Fully connected stack: tanh on hidden layers, linear output head.

    Weights are stored (fan_in, fan_out) and applied as ``x @ W + b``.  A
    single-layer instance is just an affine map, which doubles as the
    logistic-regression body elsewhere in the package.  ``out_activation``
    can bound the head with a tanh scaled by ``out_scale``, which keeps
    downstream softmaxes away from their saturated corners.
    """

    def __init__(
        self,
        layer_dims: Sequence[int],
        rng: np.random.Generator,
        out_activation: str = "linear",
        out_scale: float = 1.0,
    ) -> None:
        super().__init__()
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ValueError(f"bad layer dims {dims}")
        if out_activation not in ("linear", "tanh"):
            raise ValueError(f"unknown output activation {out_activation!r}")
        if out_scale <= 0:
            raise ValueError("out_scale must be positive")
        self.layer_dims = dims
        self.out_activation = out_activation
        self.out_scale = float(out_scale)
        for layer, (din, dout) in enumerate(zip(dims, dims[1:])):
            self.params[f"W{layer}"] = uniform_init(rng, (din, dout), fan_in=din)
            self.params[f"b{layer}"] = np.zeros(dout)
        self._finish_setup()

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    def reinitialize(self, rng: np.random.Generator) -> None:
        for layer in range(self.num_layers):
            din = self.layer_dims[layer]
            self.params[f"W{layer}"][...] = uniform_init(
                rng, self.params[f"W{layer}"].shape, fan_in=din
            )
            self.params[f"b{layer}"].fill(0.0)
        self.zero_grads()
        self._cache = None

    def forward(self, x: Array) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.layer_dims[0]:
            raise ValueError(f"input width {x.shape[1]} != expected {self.layer_dims[0]}")
        acts = [x]
        for layer in range(self.num_layers):
            z = acts[-1] @ self.params[f"W{layer}"] + self.params[f"b{layer}"]
            if layer < self.num_layers - 1:
                acts.append(np.tanh(z))
            elif self.out_activation == "tanh":
                acts.append(self.out_scale * np.tanh(z))
            else:
                acts.append(z)
        self._cache = acts
        return acts[-1]

    def backward(self, dout: Array) -> Array:
        """Accumulate parameter gradients, return gradient w.r.t. the input."""
        acts = self._take_cache()
        grad = np.atleast_2d(np.asarray(dout, dtype=float))
        if grad.shape != acts[-1].shape:
            raise ValueError(f"dout shape {grad.shape} != output shape {acts[-1].shape}")
        for layer in reversed(range(self.num_layers)):
            if layer < self.num_layers - 1:
                grad = grad * (1.0 - acts[layer + 1] ** 2)
            elif self.out_activation == "tanh":
                t = acts[layer + 1] / self.out_scale
                grad = grad * (self.out_scale * (1.0 - t**2))
            self.grads[f"W{layer}"] += acts[layer].T @ grad
            self.grads[f"b{layer}"] += grad.sum(axis=0)
            grad = grad @ self.params[f"W{layer}"].T
        return grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: str
    tol: float
    passed: bool

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        verdict = "ok" if self.passed else "FAIL"
        return f"gradcheck {verdict}: max rel err {self.max_rel_err:.3e} at {self.worst} (tol {self.tol:g})"


def finite_diff_check(
    block: DifferentiableBlock,
    inputs,
    loss_fn: Callable[[DifferentiableBlock, object], float],
    h: float = 1e-5,
    tol: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(block, inputs)`` must return a scalar loss and leave the
    matching analytic gradients in ``block.grads`` (i.e. run the block's
    backward).  Every parameter entry is then perturbed by +-h and the
    numerical slope compared using relative error
    ``|num - ana| / max(|num|, |ana|, 1e-8)``.

    ``max_entries`` caps the entries checked per parameter (subsampled with
    ``rng``) for large blocks.
    """
    block.zero_grads()
    base = float(loss_fn(block, inputs))
    if not np.isfinite(base):
        raise ValueError("loss is non-finite at the current parameters")
    analytic = {name: g.copy() for name, g in block.grads.items()}

    max_rel = 0.0
    worst = "(none)"
    for name, p in block.params.items():
        flat = p.reshape(-1)
        ana = analytic[name].reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            picker = rng if rng is not None else make_rng(0, 97)
            entries = np.sort(picker.choice(flat.size, size=max_entries, replace=False))
        else:
            entries = np.arange(flat.size)
        for i in entries:
            original = flat[i]
            flat[i] = original + h
            lp = float(loss_fn(block, inputs))
            flat[i] = original - h
            lm = float(loss_fn(block, inputs))
            flat[i] = original
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise ValueError(f"loss non-finite while perturbing {name}[{i}]")
            numeric = (lp - lm) / (2.0 * h)
            rel = abs(numeric - ana[i]) / max(abs(numeric), abs(ana[i]), 1e-8)
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{i}]"
    block.zero_grads()
    return GradCheckReport(max_rel_err=max_rel, worst=worst, tol=tol, passed=max_rel <= tol)
