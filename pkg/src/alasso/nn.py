"""Minimal dense feed-forward network with exact reverse-mode gradients.

Every trainable scalar lives in a single flat float64 vector with a fixed
layout (per layer: weight matrix row-major, then bias vector), so that the
per-parameter bookkeeping done by the consolidation machinery can address
scalar k by the same index for the lifetime of an experiment. float64 is
deliberate: consolidation divides by squared parameter displacements that
can be tiny.

Hidden layers use ReLU; the output layer is linear and is consumed by a
softmax cross-entropy loss. Multi-head setups are handled by masking
output classes (masked logits are excluded from the softmax normalization)
rather than by separate heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NetworkSpec",
    "AdamState",
    "init_params",
    "unflatten",
    "index_to_coord",
    "coord_to_index",
    "forward",
    "log_softmax",
    "task_loss",
    "task_loss_and_grad",
    "adam_step",
]


@dataclass(frozen=True)
class NetworkSpec:
    """MLP shape as (input, hidden..., output) unit counts."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError(f"need input, at least one hidden and output layer, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"zero-sized layer in {sizes}")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def layer_shapes(self) -> tuple[tuple[int, int], ...]:
        s = self.layer_sizes
        return tuple((s[i], s[i + 1]) for i in range(len(s) - 1))

    @property
    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes)


def unflatten(spec: NetworkSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (W, b) views into the flat vector. No copies: writing
    through the views writes the vector, which the backward pass relies on."""
    if params.shape != (spec.param_count,):
        raise ValueError(f"parameter vector has length {params.shape}, spec needs {spec.param_count}")
    out = []
    off = 0
    for fi, fo in spec.layer_shapes:
        w = params[off:off + fi * fo].reshape(fi, fo)
        off += fi * fo
        b = params[off:off + fo]
        off += fo
        out.append((w, b))
    return out


def index_to_coord(spec: NetworkSpec, k: int) -> tuple[int, str, int, int]:
    """Map flat index k to (layer, 'W'|'b', row, col). Stable for the
    lifetime of a spec; inverse of coord_to_index."""
    if not 0 <= k < spec.param_count:
        raise IndexError(f"index {k} outside parameter vector of length {spec.param_count}")
    off = 0
    for layer, (fi, fo) in enumerate(spec.layer_shapes):
        if k < off + fi * fo:
            r, c = divmod(k - off, fo)
            return layer, "W", r, c
        off += fi * fo
        if k < off + fo:
            return layer, "b", k - off, 0
        off += fo
    raise AssertionError("unreachable")


def coord_to_index(spec: NetworkSpec, layer: int, kind: str, row: int, col: int = 0) -> int:
    off = 0
    for li, (fi, fo) in enumerate(spec.layer_shapes):
        if li == layer:
            if kind == "W":
                if not (0 <= row < fi and 0 <= col < fo):
                    raise IndexError(f"weight coord ({row}, {col}) outside {fi}x{fo}")
                return off + row * fo + col
            if kind == "b":
                if not (0 <= row < fo and col == 0):
                    raise IndexError(f"bias coord {row} outside length {fo}")
                return off + fi * fo + row
            raise ValueError(f"kind must be 'W' or 'b', got {kind!r}")
        off += fi * fo + fo
    raise IndexError(f"layer {layer} outside network with {len(spec.layer_shapes)} layers")


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Fresh flat parameter vector: weights uniform in +-sqrt(6/(fan_in+fan_out)),
    biases zero. Deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.param_count, dtype=np.float64)
    for (w, _b), (fi, fo) in zip(unflatten(spec, params), spec.layer_shapes):
        limit = np.sqrt(6.0 / (fi + fo))
        w[:] = rng.uniform(-limit, limit, size=(fi, fo))
    return params


def _check_batch(spec: NetworkSpec, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_size:
        raise ValueError(f"batch shape {x.shape} does not match input size {spec.input_size}")
    return x


def _check_labels(spec: NetworkSpec, labels, head_mask) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ValueError(f"labels must be one-dimensional, got shape {y.shape}")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= spec.output_size):
        raise ValueError(f"label outside [0, {spec.output_size})")
    if head_mask is not None:
        allowed = np.zeros(spec.output_size, dtype=bool)
        allowed[np.asarray(head_mask, dtype=np.int64)] = True
        if not allowed.any():
            raise ValueError("head mask selects no classes")
        if y.size and not allowed[y].all():
            bad = y[~allowed[y]][0]
            raise ValueError(f"label {bad} outside head mask")
    return y


def forward(spec: NetworkSpec, params: np.ndarray, batch) -> np.ndarray:
    """Logits for a batch (one sample per row). Pure function of its inputs."""
    x = _check_batch(spec, batch)
    layers = unflatten(spec, params)
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = layers[-1]
    return h @ w + b


def log_softmax(logits: np.ndarray, head_mask=None) -> np.ndarray:
    """Row-wise log-softmax with max-subtraction. Classes outside head_mask
    get -inf log-probability and are excluded from the normalization."""
    z = np.asarray(logits, dtype=np.float64)
    if head_mask is not None:
        keep = np.zeros(z.shape[1], dtype=bool)
        keep[np.asarray(head_mask, dtype=np.int64)] = True
        if not keep.any():
            raise ValueError("head mask selects no classes")
        z = np.where(keep, z, -np.inf)
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def task_loss(spec: NetworkSpec, params: np.ndarray, batch, labels, head_mask=None) -> float:
    """Mean softmax cross-entropy over the batch, without gradients."""
    x = _check_batch(spec, batch)
    y = _check_labels(spec, labels, head_mask)
    logp = log_softmax(forward(spec, params, x), head_mask)
    return float(-logp[np.arange(y.size), y].mean())


def task_loss_and_grad(
    spec: NetworkSpec, params: np.ndarray, batch, labels, head_mask=None
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its exact reverse-mode gradient as a
    flat vector aligned with the parameter layout."""
    x = _check_batch(spec, batch)
    y = _check_labels(spec, labels, head_mask)
    layers = unflatten(spec, params)

    acts = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    w_out, b_out = layers[-1]
    logits = acts[-1] @ w_out + b_out

    logp = log_softmax(logits, head_mask)
    n = x.shape[0]
    loss = float(-logp[np.arange(n), y].mean())

    # exp(-inf) = 0, so masked classes drop out of the gradient as well
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    grad = np.zeros_like(params)
    gviews = unflatten(spec, grad)
    dh = dlogits
    for li in range(len(layers) - 1, -1, -1):
        w, _b = layers[li]
        gw, gb = gviews[li]
        gw[:] = acts[li].T @ dh
        gb[:] = dh.sum(axis=0)
        if li > 0:
            dh = (dh @ w.T) * (acts[li] > 0)
    return loss, grad


@dataclass
class AdamState:
    """Adam moment estimates aligned index-for-index with the parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int
    beta1: float
    beta2: float
    lr: float
    eps: float

    @classmethod
    def fresh(cls, n_params: int, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, beta1, beta2, lr, eps)


def adam_step(params: np.ndarray, grad: np.ndarray, adam: AdamState) -> tuple[np.ndarray, np.ndarray]:
    """One bias-corrected Adam update. Mutates the moment estimates in place
    and returns (new_params, delta) where delta[k] = new[k] - old[k]."""
    if params.shape != grad.shape:
        raise ValueError(f"params {params.shape} and grad {grad.shape} are misaligned")
    if not np.isfinite(grad).all():
        raise ValueError("non-finite gradient entry")
    adam.step += 1
    adam.m *= adam.beta1
    adam.m += (1.0 - adam.beta1) * grad
    adam.v *= adam.beta2
    adam.v += (1.0 - adam.beta2) * grad * grad
    mhat = adam.m / (1.0 - adam.beta1 ** adam.step)
    vhat = adam.v / (1.0 - adam.beta2 ** adam.step)
    delta = -adam.lr * mhat / (np.sqrt(vhat) + adam.eps)
    return params + delta, delta
