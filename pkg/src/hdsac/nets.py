"""Minimal differentiable MLP core: explicit forward/backward passes, squashed
Gaussian sampling, and an Adam update rule.

All math is float64 numpy. Forward and backward are deterministic: the same
inputs produce bitwise identical outputs (reductions happen inside BLAS calls
with a fixed evaluation order).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ContractViolation, TrainingDiverged

EPS_TANH = 1e-6  # guard inside log(1 - a^2) so log_prob stays finite at |a| -> 1
LOG_2PI = float(np.log(2.0 * np.pi))

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class Mlp:
    """Layered affine parameters. weights[k] has shape (out_k, in_k), biases[k] (out_k,).

    ``activations[k]`` names the nonlinearity applied after hidden layer k; the
    final layer is always linear.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.activations:
            self.activations = ["relu"] * (len(self.weights) - 1)
        self.validate()

    def validate(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ContractViolation("weights/biases length mismatch")
        if len(self.activations) != len(self.weights) - 1:
            raise ContractViolation("need one activation tag per hidden layer")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ContractViolation(f"unknown activation tag {act!r}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ContractViolation(f"layer {k}: bad weight/bias shapes {w.shape} {b.shape}")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ContractViolation(f"layer {k}: input dim {w.shape[1]} does not compose")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ContractViolation(f"layer {k}: non-finite parameters")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   list(self.activations))


def mlp_init(sizes: list[int], rng: np.random.Generator, activation: str = "relu",
             final_scale: float = 1e-2) -> Mlp:
    """Uniform +-1/sqrt(fan_in) init, zero biases; final layer scaled down so the
    initial outputs sit near zero."""
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        fan_in = sizes[k]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(sizes[k + 1], fan_in))
        b = np.zeros(sizes[k + 1])
        if k == len(sizes) - 2:
            w *= final_scale
        weights.append(w)
        biases.append(b)
    return Mlp(weights, biases, [activation] * (len(sizes) - 2))


@dataclass
class ForwardCache:
    """Activation record from mlp_forward; sufficient for an exact backward pass."""

    params: Mlp
    inputs: list[np.ndarray]    # layer inputs, inputs[0] is the network input (B, d)
    preacts: list[np.ndarray]   # pre-activation of each hidden layer
    squeezed: bool              # original input was a single vector


def _act(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return np.where(z > 0, 1.0, 0.0)
    if tag == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


def mlp_forward(params: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on a vector (d,) or a batch (B, d)."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ContractViolation(f"input dim {x.shape} does not match first layer ({params.in_dim})")
    inputs, preacts = [x], []
    h = x
    n = len(params.weights)
    for k in range(n):
        z = h @ params.weights[k].T + params.biases[k]
        if k < n - 1:
            preacts.append(z)
            h = _act(z, params.activations[k])
            inputs.append(h)
        else:
            h = z
    out = h[0] if squeezed else h
    return out, ForwardCache(params, inputs, preacts, squeezed)


def mlp_backward(cache: ForwardCache, output_grad: np.ndarray) -> tuple[Mlp, np.ndarray]:
    """Exact gradients for the recorded forward pass.

    Returns (param_grads, input_grad). Gradients are summed over the batch;
    scale ``output_grad`` by 1/B beforehand for a mean loss.
    """
    params = cache.params
    dy = np.asarray(output_grad, dtype=np.float64)
    if cache.squeezed and dy.ndim == 1:
        dy = dy[None, :]
    if dy.shape != (cache.inputs[0].shape[0], params.out_dim):
        raise ContractViolation(f"output_grad shape {dy.shape} does not match forward pass")
    n = len(params.weights)
    grad_w: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    d = dy
    for k in range(n - 1, -1, -1):
        grad_w[k] = d.T @ cache.inputs[k]
        grad_b[k] = d.sum(axis=0)
        d = d @ params.weights[k]
        if k > 0:
            d = d * _act_grad(cache.preacts[k - 1], params.activations[k - 1])
    input_grad = d[0] if cache.squeezed else d
    return Mlp([g for g in grad_w], [g for g in grad_b], list(params.activations)), input_grad


@dataclass
class GaussianHead:
    """Diagonal Gaussian output head; ``log_std`` is already clamped so
    std = exp(log_std) stays inside its configured band."""

    mean: np.ndarray
    log_std: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


def squashed_sample(head: GaussianHead, noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reparameterized tanh-squashed sample and its exact log-density.

    action = tanh(mean + std * noise); log_prob subtracts the tanh log-det
    correction sum(log(1 - action^2 + EPS_TANH)). Deterministic given noise.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != head.mean.shape:
        raise ContractViolation(f"noise shape {noise.shape} != head shape {head.mean.shape}")
    std = head.std
    u = head.mean + std * noise
    action = np.tanh(u)
    gauss = -0.5 * LOG_2PI - head.log_std - 0.5 * noise ** 2
    corr = np.log(1.0 - action ** 2 + EPS_TANH)
    log_prob = (gauss - corr).sum(axis=-1)
    return action, log_prob


def squashed_backward(head: GaussianHead, noise: np.ndarray, action: np.ndarray,
                      d_action: np.ndarray, d_log_prob: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Backward pass of squashed_sample at fixed noise.

    Given upstream gradients wrt (action, log_prob), returns gradients wrt
    (mean, log_std) of the head.
    """
    std = head.std
    sech2 = 1.0 - action ** 2
    # d log_prob / d u through the tanh correction; the Gaussian term depends on
    # log_std only (noise held fixed).
    dlp_du = 2.0 * action * sech2 / (sech2 + EPS_TANH)
    dlp = np.asarray(d_log_prob)[..., None]
    du = d_action * sech2 + dlp * dlp_du
    d_mean = du
    d_log_std = du * std * noise - dlp
    return d_mean, d_log_std


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators mirroring an Mlp."""

    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Mlp, lr: float) -> AdamState:
    zw = [np.zeros_like(w) for w in params.weights]
    zb = [np.zeros_like(b) for b in params.biases]
    return AdamState([z.copy() for z in zw], [z.copy() for z in zw],
                     [z.copy() for z in zb], [z.copy() for z in zb], lr=lr)


def adam_step(params: Mlp, grads: Mlp, state: AdamState) -> tuple[Mlp, AdamState]:
    """One bias-corrected adaptive-moment update. Raises TrainingDiverged on a
    non-finite gradient, naming the offending parameter."""
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_w, new_b = [], []
    m_w, v_w, m_b, v_b = [], [], [], []
    for k in range(len(params.weights)):
        for name, g in (("weights", grads.weights[k]), ("biases", grads.biases[k])):
            if not np.isfinite(g).all():
                raise TrainingDiverged(f"non-finite gradient at layer {k} {name}")
        mw = state.beta1 * state.m_w[k] + (1 - state.beta1) * grads.weights[k]
        vw = state.beta2 * state.v_w[k] + (1 - state.beta2) * grads.weights[k] ** 2
        mb = state.beta1 * state.m_b[k] + (1 - state.beta1) * grads.biases[k]
        vb = state.beta2 * state.v_b[k] + (1 - state.beta2) * grads.biases[k] ** 2
        new_w.append(params.weights[k] - state.lr * (mw / c1) / (np.sqrt(vw / c2) + state.eps))
        new_b.append(params.biases[k] - state.lr * (mb / c1) / (np.sqrt(vb / c2) + state.eps))
        m_w.append(mw)
        v_w.append(vw)
        m_b.append(mb)
        v_b.append(vb)
    new_params = Mlp(new_w, new_b, list(params.activations))
    new_state = AdamState(m_w, v_w, m_b, v_b, step=t, lr=state.lr,
                          beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_params, new_state


def tree_add(a: Mlp, b: Mlp) -> Mlp:
    return Mlp([x + y for x, y in zip(a.weights, b.weights)],
               [x + y for x, y in zip(a.biases, b.biases)], list(a.activations))


def tree_zeros_like(a: Mlp) -> Mlp:
    return Mlp([np.zeros_like(w) for w in a.weights],
               [np.zeros_like(b) for b in a.biases], list(a.activations))


def soft_update(online: Mlp, target: Mlp, tau: float) -> Mlp:
    """target' = tau * online + (1 - tau) * target, per component."""
    return Mlp([tau * w + (1 - tau) * tw for w, tw in zip(online.weights, target.weights)],
               [tau * b + (1 - tau) * tb for b, tb in zip(online.biases, target.biases)],
               list(target.activations))


# --- checkpoint records -------------------------------------------------------
# Flat versioned binary: magic, schema version, named shape table, then all
# payloads as little-endian float32 in table order.

_MAGIC = b"HDSC"
_VERSION = 1


def save_arrays(path: str, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<HI", _VERSION, len(entries)))
        for name, arr in entries.items():
            arr = np.asarray(arr)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in entries.values():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != _VERSION:
        raise CheckpointError(f"{path}: schema version {version}, expected {_VERSION}")
    off = 10
    table: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        table.append((name, shape))
    out: dict[str, np.ndarray] = {}
    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        out[name] = arr.astype(np.float64)
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return out


def mlp_entries(prefix: str, net: Mlp) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}/w{k}"] = w
        out[f"{prefix}/b{k}"] = b
    return out


def mlp_from_entries(prefix: str, entries: dict[str, np.ndarray],
                     activation: str = "relu") -> Mlp:
    weights, biases = [], []
    k = 0
    while f"{prefix}/w{k}" in entries:
        weights.append(entries[f"{prefix}/w{k}"])
        biases.append(entries[f"{prefix}/b{k}"])
        k += 1
    if not weights:
        raise CheckpointError(f"no layers found under {prefix!r}")
    return Mlp(weights, biases, [activation] * (len(weights) - 1))
