"""Minimal neural-network kernel with hand-written reverse-mode gradients.

Only what the fixed actor/critic topologies need: dense layers, a 1-D valid
convolution, relu/tanh, mean-squared error, and Adam. All math is float64 so
runs are bit-reproducible at these sizes. Layers cache their last forward
inputs; call backward immediately after the forward it belongs to.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

CHECKPOINT_MAGIC = "goalcc-weights"
CHECKPOINT_VERSION = 1


class ShapeMismatchError(ValueError):
    """Operand shapes disagree with the layer or checkpoint definition."""


class InputTooShortError(ValueError):
    """Convolution input is shorter than the filter width."""


class CheckpointError(Exception):
    pass


class CheckpointIOError(CheckpointError):
    """Unreadable, truncated, or malformed weight file."""


class CheckpointVersionError(CheckpointError):
    """Weight file written by an incompatible format version."""


class Param:
    """A named tensor with a gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                 scale: Optional[float] = None) -> np.ndarray:
    """Uniform fan-in init, +-1/sqrt(fan_in) unless an explicit scale is given."""
    lim = scale if scale is not None else 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape)


class Dense:
    """y = x @ W.T + b over a batch; W is (out, in)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 name: str = "dense", init_scale: Optional[float] = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W = Param(f"{name}.W", uniform_init(rng, (out_dim, in_dim), in_dim, init_scale))
        self.b = Param(f"{name}.b", uniform_init(rng, (out_dim,), in_dim, init_scale))
        self._x: Optional[np.ndarray] = None

    def params(self) -> list[Param]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatchError(
                f"{self.W.name}: expected (batch, {self.in_dim}), got {x.shape}")
        self._x = x
        return x @ self.W.value.T + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward before forward")
        if dy.shape != (self._x.shape[0], self.out_dim):
            raise ShapeMismatchError(
                f"{self.W.name}: gradient shape {dy.shape} does not match output")
        self.W.grad += dy.T @ self._x
        self.b.grad += dy.sum(axis=0)
        return dy @ self.W.value


class Conv1d:
    """Valid (no padding) 1-D convolution, stride 1, over (batch, length, channels)."""

    def __init__(self, in_channels: int, n_filters: int, width: int,
                 rng: np.random.Generator, name: str = "conv"):
        fan_in = in_channels * width
        self.in_channels = in_channels
        self.n_filters = n_filters
        self.width = width
        self.W = Param(f"{name}.W", uniform_init(rng, (n_filters, width, in_channels), fan_in))
        self.b = Param(f"{name}.b", uniform_init(rng, (n_filters,), fan_in))
        self._x: Optional[np.ndarray] = None

    def params(self) -> list[Param]:
        return [self.W, self.b]

    def out_length(self, in_length: int) -> int:
        return in_length - self.width + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatchError(
                f"{self.W.name}: expected (batch, length, {self.in_channels}), got {x.shape}")
        if x.shape[1] < self.width:
            raise InputTooShortError(
                f"input length {x.shape[1]} < filter width {self.width}")
        self._x = x
        L_out = self.out_length(x.shape[1])
        y = np.broadcast_to(self.b.value, (x.shape[0], L_out, self.n_filters)).copy()
        for k in range(self.width):
            y += x[:, k:k + L_out, :] @ self.W.value[:, k, :].T
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward before forward")
        x = self._x
        L_out = self.out_length(x.shape[1])
        if dy.shape != (x.shape[0], L_out, self.n_filters):
            raise ShapeMismatchError(
                f"{self.W.name}: gradient shape {dy.shape} does not match output")
        dx = np.zeros_like(x)
        for k in range(self.width):
            self.W.grad[:, k, :] += np.tensordot(dy, x[:, k:k + L_out, :], axes=([0, 1], [0, 1]))
            dx[:, k:k + L_out, :] += dy @ self.W.value[:, k, :]
        self.b.grad += dy.sum(axis=(0, 1))
        return dx


class Relu:
    def __init__(self):
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, 0.0)


class Tanh:
    def __init__(self):
        self._y: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * (1.0 - self._y * self._y)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to pred."""
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"mse: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


class Adam:
    """Standard bias-corrected Adam over a fixed parameter list, in place."""

    def __init__(self, params: list[Param], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g.shape != p.value.shape:
                raise ShapeMismatchError(f"{p.name}: grad shape {g.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_scalar_update(state: dict, grad: np.ndarray, lr: float,
                       beta1: float = 0.9, beta2: float = 0.999,
                       eps: float = 1e-8) -> np.ndarray:
    """One Adam update for a small free-standing vector (used by the goal tuner).

    `state` is a dict carrying 't', 'm', 'v'; pass {} initially. Returns the
    additive step to apply (already scaled by -lr).
    """
    if not state:
        state["t"] = 0
        state["m"] = np.zeros_like(grad)
        state["v"] = np.zeros_like(grad)
    state["t"] += 1
    t = state["t"]
    state["m"] = beta1 * state["m"] + (1.0 - beta1) * grad
    state["v"] = beta2 * state["v"] + (1.0 - beta2) * grad * grad
    m_hat = state["m"] / (1.0 - beta1 ** t)
    v_hat = state["v"] / (1.0 - beta2 ** t)
    return -lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    n_checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def grad_check(loss_fn: Callable[[], float], params: list[Param], h: float = 1e-4,
               rng: Optional[np.random.Generator] = None,
               max_checks_per_param: Optional[int] = None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `loss_fn` must run a full forward/backward pass, accumulate gradients into
    `params`, and return the scalar loss. Gradients are zeroed here before the
    analytic pass; the finite-difference evaluations ignore whatever gradients
    they produce. Checks every element unless max_checks_per_param caps it.
    """
    for p in params:
        p.zero_grad()
    loss_fn()
    analytic = [p.grad.copy() for p in params]

    report = GradCheckReport(0.0, "", 0)
    for p, ana in zip(params, analytic):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_checks_per_param is not None and flat.size > max_checks_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_checks_per_param, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = ana.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
            report.n_checked += 1
        report.per_param[p.name] = worst
        if worst > report.max_rel_error:
            report.max_rel_error = worst
            report.worst_param = p.name
    # leave clean analytic gradients behind for the caller
    for p, ana in zip(params, analytic):
        p.grad[...] = ana
    return report


def save_tensors(path: str, tensors: dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write named float64 arrays with a plain-text header and raw LE payload."""
    header = io.StringIO()
    header.write(f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n")
    header.write(f"meta {json.dumps(meta or {}, sort_keys=True)}\n")
    for name, arr in tensors.items():
        dims = " ".join(str(d) for d in arr.shape) if arr.shape else "0"
        header.write(f"tensor {name} {dims}\n")
    header.write("data\n")
    with open(path, "wb") as f:
        f.write(header.getvalue().encode("utf-8"))
        for arr in tensors.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a file written by save_tensors; bit-exact round trip."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointIOError(str(e)) from e
    sep = blob.find(b"data\n")
    if sep < 0:
        raise CheckpointIOError(f"{path}: missing data marker")
    header_lines = blob[:sep].decode("utf-8", errors="replace").splitlines()
    payload = blob[sep + len(b"data\n"):]
    if not header_lines or not header_lines[0].startswith(CHECKPOINT_MAGIC):
        raise CheckpointIOError(f"{path}: not a weight file")
    version = header_lines[0][len(CHECKPOINT_MAGIC):].strip()
    if version != f"v{CHECKPOINT_VERSION}":
        raise CheckpointVersionError(f"{path}: unsupported version {version!r}")
    meta: dict = {}
    specs: list[tuple[str, tuple[int, ...]]] = []
    for line in header_lines[1:]:
        if line.startswith("meta "):
            meta = json.loads(line[5:])
        elif line.startswith("tensor "):
            parts = line.split()
            name = parts[1]
            shape = tuple(int(d) for d in parts[2:])
            if shape == (0,):
                shape = ()
            specs.append((name, shape))
        elif line.strip():
            raise CheckpointIOError(f"{path}: unrecognized header line {line!r}")
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise CheckpointIOError(f"{path}: truncated payload at tensor {name}")
        tensors[name] = np.frombuffer(
            payload[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise CheckpointIOError(f"{path}: {len(payload) - offset} trailing bytes")
    return tensors, meta
