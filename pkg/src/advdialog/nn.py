"""Minimal differentiable building blocks in float64 numpy.

Every layer is a pair of functions: a forward that returns its output plus a
cache, and a backward that consumes the cache, accumulates parameter
gradients into a :class:`ParameterSet` and returns the input gradient.
Models compose these by hand; there is no tape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Optional, Tuple

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float64


class Param:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class ParameterSet:
    """Named trainable arrays with gradient and Adam moment storage."""

    def __init__(self):
        self.entries: Dict[str, Param] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.entries:
            raise KeyError(f"duplicate parameter {name!r}")
        self.entries[name] = Param(value)
        return self.entries[name].value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def grad(self, name: str) -> np.ndarray:
        return self.entries[name].grad

    def items(self):
        return self.entries.items()

    def num_values(self) -> int:
        return sum(p.value.size for p in self.entries.values())

    def zero_grad(self) -> None:
        for p in self.entries.values():
            p.grad[...] = 0.0

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.entries.values())))

    def check_finite(self, what: str = "grad") -> None:
        for name, p in self.entries.items():
            arr = getattr(p, what)
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite {what} in parameter {name!r}")

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {"__step_count__": np.array(self.step_count, dtype=np.int64)}
        for name, p in self.entries.items():
            out[f"value/{name}"] = p.value.copy()
            out[f"m/{name}"] = p.m.copy()
            out[f"v/{name}"] = p.v.copy()
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.entries.items():
            for slot in ("value", "m", "v"):
                key = f"{slot}/{name}"
                if key not in state:
                    raise KeyError(f"missing {key!r} in state")
                arr = np.asarray(state[key], dtype=DTYPE)
                if arr.shape != p.value.shape:
                    raise DimensionError(
                        f"{key}: stored shape {arr.shape} != expected {p.value.shape}")
                getattr(p, slot)[...] = arr
            p.grad[...] = 0.0
        self.step_count = int(state["__step_count__"])

    def copy(self) -> "ParameterSet":
        other = ParameterSet()
        for name, p in self.entries.items():
            q = Param(p.value.copy())
            q.grad[...] = p.grad
            q.m[...] = p.m
            q.v[...] = p.v
            other.entries[name] = q
        other.step_count = self.step_count
        return other

    def equal(self, other: "ParameterSet") -> bool:
        """Bitwise equality of values and optimizer state."""
        if list(self.entries) != list(other.entries) or self.step_count != other.step_count:
            return False
        for name, p in self.entries.items():
            q = other.entries[name]
            for slot in ("value", "m", "v"):
                if getattr(p, slot).tobytes() != getattr(q, slot).tobytes():
                    return False
        return True


@dataclass
class RecurrentState:
    hidden: np.ndarray
    cell: np.ndarray

    def __post_init__(self):
        if self.hidden.shape != self.cell.shape:
            raise DimensionError(
                f"hidden shape {self.hidden.shape} != cell shape {self.cell.shape}")

    @classmethod
    def zeros(cls, width: int, batch: Optional[int] = None) -> "RecurrentState":
        shape = (width,) if batch is None else (batch, width)
        return cls(np.zeros(shape), np.zeros(shape))


# ---------------------------------------------------------------- init

def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def add_linear(params: ParameterSet, prefix: str, n_in: int, n_out: int,
               rng: np.random.Generator) -> None:
    params.add(f"{prefix}.W", xavier_uniform(rng, n_in, n_out))
    params.add(f"{prefix}.b", np.zeros(n_out))


def add_mlp(params: ParameterSet, prefix: str, n_in: int, n_hidden: int, n_out: int,
            rng: np.random.Generator) -> None:
    add_linear(params, f"{prefix}.hidden", n_in, n_hidden, rng)
    add_linear(params, f"{prefix}.out", n_hidden, n_out, rng)


def add_lstm(params: ParameterSet, prefix: str, n_in: int, n_hidden: int,
             rng: np.random.Generator, forget_bias: float = 1.0) -> None:
    # gate column blocks: input, forget, output, candidate
    W = np.concatenate(
        [xavier_uniform(rng, n_in + n_hidden, n_hidden) for _ in range(4)], axis=1)
    b = np.zeros(4 * n_hidden)
    b[n_hidden:2 * n_hidden] = forget_bias
    params.add(f"{prefix}.W", W)
    params.add(f"{prefix}.b", b)


def add_embedding(params: ParameterSet, name: str, n_rows: int, width: int,
                  rng: np.random.Generator) -> None:
    params.add(name, xavier_uniform(rng, n_rows, width))


# ---------------------------------------------------------------- activations

def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def log_sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


# ---------------------------------------------------------------- layers

def _check_width(name: str, x: np.ndarray, expected: int) -> None:
    if x.shape[-1] != expected:
        raise DimensionError(f"{name}: width {x.shape[-1]} != expected {expected}")


def linear_forward(params: ParameterSet, prefix: str, x: np.ndarray):
    W = params[f"{prefix}.W"]
    _check_width(f"input to {prefix}", x, W.shape[0])
    return x @ W + params[f"{prefix}.b"], x


def linear_backward(params: ParameterSet, prefix: str, x: np.ndarray, dy: np.ndarray):
    W = params[f"{prefix}.W"]
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    params.grad(f"{prefix}.W")[...] += x2.T @ dy2
    params.grad(f"{prefix}.b")[...] += dy2.sum(axis=0)
    return dy @ W.T


ACTIVATIONS = ("softmax", "sigmoid", "tanh", "linear")


def mlp_forward(params: ParameterSet, prefix: str, x: np.ndarray, activation: str = "linear",
                return_cache: bool = False):
    """Single tanh hidden layer followed by ``activation`` on the output.

    With ``return_cache`` the pre-activation output (logits) and the cache for
    :func:`mlp_backward` are returned as well.
    """
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    a, _ = linear_forward(params, f"{prefix}.hidden", x)
    h = np.tanh(a)
    logits, _ = linear_forward(params, f"{prefix}.out", h)
    if activation == "softmax":
        out = softmax(logits)
    elif activation == "sigmoid":
        out = sigmoid(logits)
    elif activation == "tanh":
        out = np.tanh(logits)
    else:
        out = logits
    if return_cache:
        return out, logits, (x, h)
    return out


def mlp_backward(params: ParameterSet, prefix: str, cache, dlogits: np.ndarray) -> np.ndarray:
    """Backward from the gradient w.r.t. the pre-activation output."""
    x, h = cache
    dh = linear_backward(params, f"{prefix}.out", h, dlogits)
    da = dh * (1.0 - h * h)
    return linear_backward(params, f"{prefix}.hidden", x, da)


def lstm_step(params: ParameterSet, prefix: str, prev: RecurrentState, x: np.ndarray,
              return_cache: bool = False):
    W = params[f"{prefix}.W"]
    b = params[f"{prefix}.b"]
    n_hidden = b.shape[0] // 4
    if prev.hidden.shape[-1] != n_hidden:
        raise DimensionError(
            f"prev.hidden of {prefix}: width {prev.hidden.shape[-1]} != hidden size {n_hidden}")
    if x.shape[-1] + n_hidden != W.shape[0]:
        raise DimensionError(
            f"input to {prefix}: width {x.shape[-1]} != expected {W.shape[0] - n_hidden}")
    xh = np.concatenate([x, prev.hidden], axis=-1)
    z = xh @ W + b
    H = n_hidden
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c = f * prev.cell + i * g
    tc = np.tanh(c)
    h = o * tc
    state = RecurrentState(h, c)
    if return_cache:
        return state, (xh, prev.cell, i, f, o, g, tc)
    return state


def lstm_forward(params: ParameterSet, prefix: str, X: np.ndarray, mask: np.ndarray):
    """Run an LSTM over a padded batch ``X`` of shape (T, B, D).

    Where ``mask[t, b] == 0`` the state is carried over unchanged, so the
    output at the last valid step equals the final state.
    Returns hidden outputs (T, B, H) and a cache for :func:`lstm_backward`.
    """
    T, B, _ = X.shape
    H = params[f"{prefix}.b"].shape[0] // 4
    state = RecurrentState.zeros(H, B)
    out = np.empty((T, B, H))
    steps = []
    for t in range(T):
        new, cache = lstm_step(params, prefix, state, X[t], return_cache=True)
        m = mask[t][:, None]
        h = m * new.hidden + (1.0 - m) * state.hidden
        c = m * new.cell + (1.0 - m) * state.cell
        steps.append(cache)
        state = RecurrentState(h, c)
        out[t] = h
    return out, (steps, mask, X.shape[2])


def lstm_backward(params: ParameterSet, prefix: str, cache, dH: np.ndarray) -> np.ndarray:
    steps, mask, D = cache
    W = params[f"{prefix}.W"]
    gW = params.grad(f"{prefix}.W")
    gb = params.grad(f"{prefix}.b")
    T, B, H = dH.shape
    dX = np.empty((T, B, D))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        xh, c_prev, i, f, o, g, tc = steps[t]
        m = mask[t][:, None]
        dh = dH[t] + dh_next
        dh_new = m * dh
        dc_new = m * dc_next + dh_new * o * (1.0 - tc * tc)
        do = dh_new * tc
        di = dc_new * g
        df = dc_new * c_prev
        dg = dc_new * i
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g * g),
        ], axis=1)
        gW += xh.T @ dz
        gb += dz.sum(axis=0)
        dxh = dz @ W.T
        dX[t] = dxh[:, :D]
        dh_next = dxh[:, D:] + (1.0 - m) * dh
        dc_next = dc_new * f + (1.0 - m) * dc_next
    return dX


def embedding_backward(params: ParameterSet, name: str, ids: np.ndarray, dout: np.ndarray) -> None:
    np.add.at(params.grad(name), ids.reshape(-1), dout.reshape(-1, dout.shape[-1]))


# ---------------------------------------------------------------- regularization

def dropout_mask(shape, p: float, training: bool, rng: Optional[np.random.Generator]):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return None
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def dropout(x: np.ndarray, p: float, training: bool, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Inverted dropout: survivors are scaled by 1/(1-p); identity at inference."""
    mask = dropout_mask(x.shape, p, training, rng)
    if mask is None:
        return x
    return x * mask


# ---------------------------------------------------------------- optimization

@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_update(params: ParameterSet, lr: float = 1e-3, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> None:
    params.check_finite("grad")
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params.entries.values():
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * p.grad * p.grad
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
        p.grad[...] = 0.0


def clip_gradients(params: ParameterSet, threshold: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``threshold``.

    Returns the norm before clipping.
    """
    norm = params.global_norm()
    if not np.isfinite(norm):
        params.check_finite("grad")
    if norm > threshold:
        scale = threshold / norm
        for p in params.entries.values():
            p.grad *= scale
    return norm


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    rtol: float
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    checked: Dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.rtol

    def __str__(self):
        lines = [f"gradient check rtol={self.rtol:g}: {'PASS' if self.passed else 'FAIL'}"]
        for name, err in self.max_rel_error.items():
            lines.append(f"  {name:40s} {err:.3e} ({self.checked[name]} elems)")
        return "\n".join(lines)


def check_gradients(model: Callable[[], float], params: ParameterSet, rtol: float = 1e-4,
                    step: float = 1e-5, threshold: float = 1e-8, atol: float = 0.0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``model()`` must run forward and backward, accumulating into ``params``
    gradients, and return the scalar loss. It must be deterministic.
    Elements whose analytic and numeric gradients are both below ``threshold``
    in magnitude are skipped. ``atol`` is subtracted from each absolute
    difference before dividing; it exists for losses whose central-difference
    roundoff (about eps * |loss| / step) swamps gradients just above ``threshold``.
    """
    params.zero_grad()
    model()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    report = GradCheckReport(rtol=rtol)
    for name, p in params.items():
        flat = p.value.reshape(-1)
        num = np.empty_like(flat)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            params.zero_grad()
            f_plus = model()
            flat[idx] = orig - step
            params.zero_grad()
            f_minus = model()
            flat[idx] = orig
            num[idx] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[name].reshape(-1)
        scale = np.maximum(np.abs(a), np.abs(num))
        sel = scale > threshold
        err = np.maximum(np.abs(a - num)[sel] - atol, 0.0) / scale[sel]
        report.max_rel_error[name] = float(err.max()) if err.size else 0.0
        report.checked[name] = int(sel.sum())
    params.zero_grad()
    for name, p in params.items():
        p.grad[...] = analytic[name]
    return report
