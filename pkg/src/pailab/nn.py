"""Masked multilayer-perceptron engine on flat parameter vectors.

All parameters of a network live in one contiguous array (``ParamVector``);
weights of layer ``l`` are stored row-major with shape ``(in_dim, out_dim)``,
followed by the bias. Every computation uses ``params * mask``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericOverflowError, TrainingDivergedError

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
SGD_MOMENTUM = 0.9


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    has_bias: bool = True
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ("relu", "none"):
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class Slot:
    layer: int
    role: str  # "weight" | "bias"
    offset: int
    length: int
    shape: tuple


def mlp_specs(dims: Sequence[int], has_bias: bool = True) -> tuple[LayerSpec, ...]:
    """ReLU MLP with linear logits, e.g. ``mlp_specs([784, 300, 100, 10])``."""
    if len(dims) < 2:
        raise ConfigError("an MLP needs at least input and output widths")
    n = len(dims) - 1
    return tuple(
        LayerSpec(int(dims[i]), int(dims[i + 1]), has_bias, "relu" if i < n - 1 else "none")
        for i in range(n)
    )


def parse_arch(arch: str, has_bias: bool = True) -> tuple[LayerSpec, ...]:
    try:
        dims = [int(d) for d in arch.replace(",", "-").split("-") if d.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad architecture string {arch!r}") from exc
    return mlp_specs(dims, has_bias)


def arch_string(specs: Sequence[LayerSpec]) -> str:
    return "-".join([str(specs[0].in_dim)] + [str(s.out_dim) for s in specs])


def check_specs(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ConfigError("empty layer list")
    for i in range(len(specs) - 1):
        if specs[i].out_dim != specs[i + 1].in_dim:
            raise ConfigError(
                f"dimension chain broken between layer {i} (out {specs[i].out_dim}) "
                f"and layer {i + 1} (in {specs[i + 1].in_dim})"
            )
    if specs[-1].activation != "none":
        raise ConfigError("final layer must emit logits (activation 'none')")


def build_layout(specs: Sequence[LayerSpec]) -> tuple[Slot, ...]:
    slots = []
    off = 0
    for i, s in enumerate(specs):
        n = s.in_dim * s.out_dim
        slots.append(Slot(i, "weight", off, n, (s.in_dim, s.out_dim)))
        off += n
        if s.has_bias:
            slots.append(Slot(i, "bias", off, s.out_dim, (s.out_dim,)))
            off += s.out_dim
    return tuple(slots)


def param_count(specs: Sequence[LayerSpec]) -> int:
    return sum(s.in_dim * s.out_dim + (s.out_dim if s.has_bias else 0) for s in specs)


@dataclass
class ParamVector:
    values: np.ndarray
    specs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.specs = tuple(self.specs)
        check_specs(self.specs)
        if self.values.ndim != 1 or self.values.size != param_count(self.specs):
            raise ConfigError(
                f"parameter array of size {self.values.size} does not match "
                f"layout size {param_count(self.specs)}"
            )

    @cached_property
    def layout(self) -> tuple[Slot, ...]:
        return build_layout(self.specs)

    @property
    def k(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.specs)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.specs)

    def tensors(self, flat: np.ndarray | None = None):
        """Per-layer ``(W, b)`` views into ``flat`` (default: own values)."""
        return unpack(self.values if flat is None else flat, self.specs)

    def weight_positions(self) -> np.ndarray:
        """Boolean array, True on weight entries and False on biases."""
        out = np.zeros(self.k, dtype=bool)
        for slot in self.layout:
            if slot.role == "weight":
                out[slot.offset:slot.offset + slot.length] = True
        return out

    def layer_index(self) -> np.ndarray:
        """Layer id of every flat position."""
        out = np.empty(self.k, dtype=np.int64)
        for slot in self.layout:
            out[slot.offset:slot.offset + slot.length] = slot.layer
        return out


def unpack(flat: np.ndarray, specs: Sequence[LayerSpec]):
    tensors = []
    off = 0
    for s in specs:
        n = s.in_dim * s.out_dim
        W = flat[off:off + n].reshape(s.in_dim, s.out_dim)
        off += n
        b = None
        if s.has_bias:
            b = flat[off:off + s.out_dim]
            off += s.out_dim
        tensors.append((W, b))
    return tensors


def kaiming_init(specs: Sequence[LayerSpec], seed: int, dtype=np.float32) -> ParamVector:
    """Weights ~ N(0, sqrt(2 / fan_in)), biases zero."""
    specs = tuple(specs)
    check_specs(specs)
    rng = np.random.default_rng(seed)
    values = np.zeros(param_count(specs), dtype=np.float64)
    for (W, _b), s in zip(unpack(values, specs), specs):
        W[...] = rng.normal(0.0, math.sqrt(2.0 / s.in_dim), size=W.shape)
    return ParamVector(values.astype(dtype), specs)


# ---------------------------------------------------------------- passes


def _effective(params: ParamVector, mask) -> np.ndarray:
    if mask is None:
        return params.values
    return np.where(np.asarray(mask, dtype=bool), params.values, params.values.dtype.type(0))


def _forward_pass(tensors, specs, x, check=True):
    """Returns (layer inputs, logits). ``inputs[l]`` feeds layer ``l``."""
    inputs = []
    a = x
    for i, ((W, b), s) in enumerate(zip(tensors, specs)):
        inputs.append(a)
        # overflow is reported below (or by the caller's divergence check)
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ W
            if b is not None:
                z += b
        if check and not np.isfinite(z).all():
            raise NumericOverflowError(i)
        a = np.maximum(z, 0) if s.activation == "relu" else z
    return inputs, a


def _loss_and_delta(out, y, loss):
    """Mean loss and d(loss)/d(out)."""
    n = out.shape[0]
    if loss == "ce":
        with np.errstate(invalid="ignore"):
            shifted = out - out.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logsum
        value = -logp[np.arange(n), y].mean()
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1
        delta /= n
        return float(value), delta
    if loss == "mse":
        resid = out[:, 0] - y
        value = float(np.mean(resid * resid))
        return value, (2.0 / n) * resid[:, None].astype(out.dtype)
    raise ConfigError(f"unknown loss {loss!r}")


def _backward_pass(tensors, specs, inputs, out, delta, grad_flat):
    grads = unpack(grad_flat, specs)
    for i in range(len(specs) - 1, -1, -1):
        W, b = tensors[i]
        gW, gb = grads[i]
        np.matmul(inputs[i].T, delta, out=gW)
        if gb is not None:
            gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ W.T
            if specs[i - 1].activation == "relu":
                delta *= inputs[i] > 0
    return grad_flat


def _prep_x(x, dtype):
    return np.asarray(x).astype(dtype, copy=False)


def forward(params: ParamVector, mask, x, y=None, loss: str = "ce"):
    """Logits and mean loss of the masked network (loss is None without labels)."""
    x = _prep_x(x, params.dtype)
    if x.shape[1] != params.specs[0].in_dim:
        raise ConfigError(f"batch width {x.shape[1]} != input dim {params.specs[0].in_dim}")
    eff = _effective(params, mask)
    _, out = _forward_pass(unpack(eff, params.specs), params.specs, x)
    if y is None:
        return out, None
    value, _ = _loss_and_delta(out, np.asarray(y), loss)
    return out, value


def value_and_grad(params: ParamVector, mask, x, y, loss: str = "ce", check=True):
    x = _prep_x(x, params.dtype)
    eff = _effective(params, mask)
    tensors = unpack(eff, params.specs)
    inputs, out = _forward_pass(tensors, params.specs, x, check=check)
    value, delta = _loss_and_delta(out, np.asarray(y), loss)
    grad = _backward_pass(tensors, params.specs, inputs, out, delta, np.empty_like(eff))
    if mask is not None:
        grad = np.where(np.asarray(mask, dtype=bool), grad, grad.dtype.type(0))
    return value, grad


def backward(params: ParamVector, mask, x, y, loss: str = "ce") -> np.ndarray:
    """Gradient of the masked loss w.r.t. the flat parameters; zero where masked."""
    return value_and_grad(params, mask, x, y, loss)[1]


def full_gradient(params: ParamVector, mask, x, y, chunk: int = 10000) -> np.ndarray:
    """Gradient of the mean loss over a whole dataset, accumulated in chunks."""
    n = len(y)
    total = np.zeros(params.k, dtype=np.float64)
    for start in range(0, n, chunk):
        xs, ys = x[start:start + chunk], y[start:start + chunk]
        total += backward(params, mask, xs, ys).astype(np.float64) * (len(ys) / n)
    return total.astype(params.dtype)


def hvp(params: ParamVector, mask, x, y, v, loss: str = "ce") -> np.ndarray:
    """Exact Hessian-vector product of the masked loss (forward-over-reverse R-operator)."""
    x = _prep_x(x, params.dtype)
    specs = params.specs
    m = np.ones(params.k, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    zero = params.dtype.type(0)
    eff = np.where(m, params.values, zero)
    veff = np.where(m, np.asarray(v, dtype=params.dtype), zero)
    T = unpack(eff, specs)
    V = unpack(veff, specs)

    # forward with tangents
    inputs, r_inputs = [], []
    a, ra = x, np.zeros_like(x)
    for (W, b), (VW, Vb), s in zip(T, V, specs):
        inputs.append(a)
        r_inputs.append(ra)
        z = a @ W
        rz = ra @ W + a @ VW
        if b is not None:
            z += b
            rz += Vb
        if s.activation == "relu":
            on = z > 0
            a, ra = z * on, rz * on
        else:
            a, ra = z, rz
    out, r_out = a, ra

    n = out.shape[0]
    _, delta = _loss_and_delta(out, np.asarray(y), loss)
    if loss == "ce":
        p = delta * n
        p[np.arange(n), y] += 1
        r_delta = p * (r_out - (p * r_out).sum(axis=1, keepdims=True)) / n
    else:
        r_delta = (2.0 / n) * r_out

    result = np.zeros_like(eff)
    R = unpack(result, specs)
    for i in range(len(specs) - 1, -1, -1):
        W, _ = T[i]
        VW, _ = V[i]
        gW, gb = R[i]
        gW[...] = r_inputs[i].T @ delta + inputs[i].T @ r_delta
        if gb is not None:
            gb[...] = r_delta.sum(axis=0)
        if i > 0:
            new_delta = delta @ W.T
            new_r = r_delta @ W.T + delta @ VW.T
            if specs[i - 1].activation == "relu":
                on = inputs[i] > 0
                new_delta *= on
                new_r *= on
            delta, r_delta = new_delta, new_r
    return np.where(m, result, zero)


def fd_hvp(grad_fn: Callable[[np.ndarray], np.ndarray], theta, v, eps: float = 1e-3):
    """Central difference of gradients: (g(θ+εv) - g(θ-εv)) / 2ε."""
    theta = np.asarray(theta)
    v = np.asarray(v, dtype=theta.dtype)
    return (grad_fn(theta + eps * v) - grad_fn(theta - eps * v)) / (2 * eps)


def hvp_fd(params: ParamVector, mask, x, y, v, eps: float = 1e-3, loss: str = "ce"):
    """Finite-difference-of-gradients route to H·v."""
    return fd_hvp(lambda th: backward(params.with_values(th), mask, x, y, loss), params.values, v, eps)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainHyper:
    optimizer: str = "adam"
    learning_rate: float = 1.2e-3
    batch_size: int = 128
    epochs: int = 5
    weight_decay: float = 5e-4
    lr_drop_factor: float = 0.2
    lr_drop_epochs: tuple = (60, 120)
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "momentum-sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("learning_rate and batch_size must be positive, epochs >= 0")
        if self.weight_decay < 0 or not 0 < self.lr_drop_factor <= 1:
            raise ConfigError("weight_decay >= 0 and lr_drop_factor in (0, 1] required")
        object.__setattr__(self, "lr_drop_epochs", tuple(sorted(int(e) for e in self.lr_drop_epochs)))

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during (zero-based) ``epoch``."""
        drops = sum(1 for e in self.lr_drop_epochs if e <= epoch)
        return self.learning_rate * self.lr_drop_factor ** drops


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), epoch])).permutation(n)


def train(params: ParamVector, mask, x, y, hyper: TrainHyper, loss: str = "ce",
          on_epoch: Callable | None = None):
    """Masked minibatch training. Returns ``(trained params, history)``.

    Gradients are masked and params are re-masked after every step so pruned
    entries stay exactly zero. Weight decay is decoupled and skips biases.
    """
    if hyper.epochs == 0:
        return params.copy(), []
    dtype = params.dtype
    keep = np.ones(params.k, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    theta = np.where(keep, params.values, dtype.type(0))
    decay = (params.weight_positions() & keep).astype(dtype)
    x = np.asarray(x)
    y = np.asarray(y)
    n = len(y)
    state1 = np.zeros_like(theta)
    state2 = np.zeros_like(theta) if hyper.optimizer == "adam" else None
    b1, b2 = ADAM_BETAS
    step = 0
    history = []
    pv = params.with_values(theta)
    for epoch in range(hyper.epochs):
        lr = hyper.lr_at(epoch)
        order = epoch_order(n, hyper.seed, epoch)
        tot_loss, correct, seen = 0.0, 0, 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            xb = _prep_x(x[idx], dtype)
            yb = y[idx]
            tensors = unpack(theta, params.specs)
            inputs, out = _forward_pass(tensors, params.specs, xb, check=False)
            value, delta = _loss_and_delta(out, yb, loss)
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch)
            grad = _backward_pass(tensors, params.specs, inputs, out, delta, np.empty_like(theta))
            grad *= keep
            step += 1
            if hyper.optimizer == "adam":
                state1 *= b1
                state1 += (1 - b1) * grad
                state2 *= b2
                state2 += (1 - b2) * grad * grad
                upd = (state1 / (1 - b1 ** step)) / (np.sqrt(state2 / (1 - b2 ** step)) + ADAM_EPS)
            else:
                state1 *= SGD_MOMENTUM
                state1 += grad
                upd = state1
            if hyper.weight_decay:
                upd = upd + hyper.weight_decay * decay * theta
            theta -= dtype.type(lr) * upd.astype(dtype, copy=False)
            theta *= keep
            tot_loss += value * len(idx)
            seen += len(idx)
            if loss == "ce":
                correct += int((out.argmax(axis=1) == yb).sum())
        if not np.isfinite(theta).all():
            raise TrainingDivergedError(epoch, "parameters")
        rec = {"epoch": epoch, "loss": tot_loss / seen, "lr": lr}
        if loss == "ce":
            rec["accuracy"] = correct / seen
        history.append(rec)
        if on_epoch is not None:
            on_epoch(pv, rec)
    return ParamVector(theta, params.specs), history
