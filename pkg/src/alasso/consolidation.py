"""Per-parameter penalty machinery for continual training.

While a task is being trained, a running importance estimate is
accumulated per scalar parameter: a first-order path integral of how much
that parameter's movement reduced the task loss. At the task boundary the
estimates are converted into curvature coefficients for a quadratic
penalty centred at the finishing parameters, which then regularizes the
next task.

Two penalty shapes are supported. SI uses a plain symmetric quadratic and
adds each task's curvature onto the previous total. ALASSO uses a
two-branch quadratic: on the side of the new centre that the optimizer
actually traversed (the observed side, the one facing the previous
centre) it keeps the measured curvature, while on the unobserved side it
multiplies the curvature by a factor ``a`` and adds a floor ``epsilon``,
deliberately overestimating where the old loss was never sampled. ALASSO
also rebuilds the curvature at each boundary from the drop of the full
objective (task loss plus the weighted old penalty) rather than
accumulating, which keeps the quadratic an exact fit on the observed
side. The copies ``a_prime``/``c_prime`` of ``a``/``c`` are used only
inside that boundary update, so the two roles can be tuned independently.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn

__all__ = [
    "RegularizerKind",
    "Hyperparams",
    "ConsolidationState",
    "alpha",
    "surrogate_loss",
    "surrogate_grad",
    "total_loss_and_grad",
    "accumulate_importance",
    "consolidate",
    "save_state",
    "load_state",
]


class RegularizerKind(enum.Enum):
    NONE = "none"
    SI = "si"
    ALASSO = "alasso"

    @classmethod
    def from_string(cls, name: str) -> "RegularizerKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown regularizer {name!r}; choose none, si or alasso") from None


@dataclass(frozen=True)
class Hyperparams:
    """Penalty hyperparameters.

    a: unobserved-side overestimation factor (> 1 for genuine
       overestimation; smaller values are accepted for ablations).
    a_prime, c_prime: decoupled copies of a and c, used only when the old
       penalty is re-evaluated inside the boundary update.
    c: weight of the penalty in the training objective.
    epsilon: curvature floor on the unobserved side, so parameters are
       held there even when their importance is zero.
    xi: damping added to squared displacements before dividing, so
       parameters that barely moved do not blow the update up. Zero is
       permitted (used by exactness tests); epsilon zero likewise.
    """

    a: float = 2.0
    a_prime: float = 1.0
    c: float = 1.0
    c_prime: float = 1.0
    epsilon: float = 1e-3
    xi: float = 1e-3

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if self.c < 0:
            raise ValueError(f"c must be non-negative, got {self.c}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.xi < 0:
            raise ValueError(f"xi must be non-negative, got {self.xi}")


@dataclass
class ConsolidationState:
    """Penalty state, aligned index-for-index with the flat parameter vector.

    task_index is the 1-based index of the task currently being trained.
    While task 1 is in progress there is no previous task: omega_big is
    zero and the penalty is identically zero. theta_center is the centre
    of the current penalty (the parameters the previous task finished at,
    or the initialization before any boundary); theta_side_ref is the
    centre before that and defines which side of theta_center counts as
    observed.
    """

    omega_big: np.ndarray
    theta_center: np.ndarray
    theta_side_ref: np.ndarray
    omega_accum: np.ndarray
    hyper: Hyperparams = field(default_factory=Hyperparams)
    task_index: int = 1

    @classmethod
    def fresh(cls, theta_init: np.ndarray, hyper: Hyperparams | None = None) -> "ConsolidationState":
        theta_init = np.asarray(theta_init, dtype=np.float64)
        n = theta_init.size
        return cls(
            omega_big=np.zeros(n),
            theta_center=theta_init.copy(),
            theta_side_ref=theta_init.copy(),
            omega_accum=np.zeros(n),
            hyper=hyper if hyper is not None else Hyperparams(),
        )

    @property
    def n_params(self) -> int:
        return self.omega_big.size


def alpha(theta_k, center, side_ref):
    """Side indicator (theta_k - center) * (side_ref - center): positive
    where theta_k sits on the same side of the centre as the previous
    centre, i.e. on the stretch of axis the optimizer traversed."""
    return (theta_k - center) * (side_ref - center)


def _branch_coeff(state: ConsolidationState, params: np.ndarray, a: float, epsilon: float) -> np.ndarray:
    side = alpha(params, state.theta_center, state.theta_side_ref)
    return np.where(side > 0, state.omega_big, a * state.omega_big + epsilon)


def _per_param_loss(state: ConsolidationState, params: np.ndarray, a: float, epsilon: float) -> np.ndarray:
    if state.task_index == 1:
        return np.zeros_like(params)
    d = params - state.theta_center
    return _branch_coeff(state, params, a, epsilon) * d * d


def surrogate_loss(state: ConsolidationState, params: np.ndarray, use_primed: bool = False) -> float:
    """Total asymmetric quadratic penalty at the given parameters.

    Per parameter: omega_big * d^2 on the observed side of the centre,
    (a * omega_big + epsilon) * d^2 on the unobserved side, with
    d = theta - centre. With use_primed, a_prime replaces a. Identically
    zero while the first task is in progress.
    """
    params = np.asarray(params, dtype=np.float64)
    if not np.isfinite(params).all():
        raise ValueError("non-finite parameter entry")
    a = state.hyper.a_prime if use_primed else state.hyper.a
    return float(_per_param_loss(state, params, a, state.hyper.epsilon).sum())


def surrogate_grad(state: ConsolidationState, params: np.ndarray, use_primed: bool = False) -> np.ndarray:
    """Gradient of surrogate_loss. Both branches vanish at the centre, so
    the kink there is given gradient zero (the unique continuous choice)."""
    params = np.asarray(params, dtype=np.float64)
    if state.task_index == 1:
        return np.zeros_like(params)
    a = state.hyper.a_prime if use_primed else state.hyper.a
    d = params - state.theta_center
    return 2.0 * _branch_coeff(state, params, a, state.hyper.epsilon) * d


def total_loss_and_grad(
    spec: nn.NetworkSpec,
    params: np.ndarray,
    batch,
    labels,
    state: ConsolidationState,
    kind: RegularizerKind,
    head_mask=None,
) -> tuple[float, np.ndarray, float, np.ndarray]:
    """Training objective: task loss plus c times the penalty.

    Returns (total, grad, task_loss, task_grad); the task-only pair is
    returned separately because the importance accumulation must see the
    task gradient, not the regularized one. For kind NONE, for c = 0 and
    while task 1 is in progress, the objective is exactly the task loss
    (no zero-weight penalty term is added, keeping trajectories bitwise
    identical to an unregularized run).
    """
    task_l, task_g = nn.task_loss_and_grad(spec, params, batch, labels, head_mask)
    c = state.hyper.c
    if kind is RegularizerKind.NONE or c == 0.0 or state.task_index == 1:
        return task_l, task_g, task_l, task_g
    if kind is RegularizerKind.SI:
        a_eff, eps_eff = 1.0, 0.0  # symmetric quadratic
    elif kind is RegularizerKind.ALASSO:
        a_eff, eps_eff = state.hyper.a, state.hyper.epsilon
    else:
        raise ValueError(f"unknown regularizer kind {kind!r}")
    d = params - state.theta_center
    coeff = _branch_coeff(state, params, a_eff, eps_eff)
    total = task_l + c * float((coeff * d * d).sum())
    grad = task_g + c * (2.0 * coeff * d)
    return total, grad, task_l, task_g


def accumulate_importance(state: ConsolidationState, task_grad: np.ndarray, delta: np.ndarray) -> None:
    """Add one optimizer step's contribution -task_grad[k] * delta[k] to the
    running importance (positive where the step reduced the task loss).
    Call once per step, after the update, with that step's task gradient
    and the parameter displacement it produced."""
    if task_grad.shape != state.omega_accum.shape or delta.shape != state.omega_accum.shape:
        raise ValueError("importance update arrays misaligned with state")
    state.omega_accum -= task_grad * delta


def consolidate(state: ConsolidationState, theta_new: np.ndarray, kind: RegularizerKind) -> ConsolidationState:
    """Task-boundary update: turn the accumulated importances into the
    curvature of the next penalty, centred at theta_new.

    Per parameter, with denom = (theta_new - centre)^2 + xi:
      SI:     omega_big' = max(0, omega_accum / denom + omega_big)
      ALASSO: omega_big' = max(0, (omega_accum - c_prime * pen) / denom)
    where pen is the current per-parameter penalty evaluated at theta_new
    with the primed factor a_prime. The subtraction makes the new
    quadratic match the drop of the full objective exactly on the
    observed side (with xi = 0 and an unclamped numerator,
    omega_big' * (theta_new - centre)^2 reproduces the numerator).

    Returns a fresh state: the old centre becomes the side reference, the
    accumulator resets, and task_index advances.
    """
    if kind is RegularizerKind.NONE:
        raise ValueError("kind none has no consolidation rule")
    theta_new = np.asarray(theta_new, dtype=np.float64)
    if theta_new.shape != state.theta_center.shape:
        raise ValueError("theta_new misaligned with state")
    if not np.isfinite(theta_new).all():
        raise ValueError("non-finite parameter entry")
    if not np.isfinite(state.omega_accum).all():
        raise ValueError("non-finite accumulated importance")

    hyper = state.hyper
    diff = theta_new - state.theta_center
    denom = diff * diff + hyper.xi
    if kind is RegularizerKind.SI:
        numer = state.omega_accum
        base = state.omega_big
    else:
        numer = state.omega_accum - hyper.c_prime * _per_param_loss(state, theta_new, hyper.a_prime, hyper.epsilon)
        base = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = numer / denom
    # xi = 0 leaves untouched parameters with a 0/0 ratio: no movement, no
    # new curvature evidence, so their ratio contribution is zero.
    ratio = np.where(denom > 0.0, ratio, 0.0)
    omega_new = np.maximum(ratio + base, 0.0)
    if not np.isfinite(omega_new).all():
        raise ValueError("non-finite consolidated importance")

    return ConsolidationState(
        omega_big=omega_new,
        theta_center=theta_new.copy(),
        theta_side_ref=state.theta_center.copy(),
        omega_accum=np.zeros_like(state.omega_accum),
        hyper=hyper,
        task_index=state.task_index + 1,
    )


_STATE_MAGIC = b"ALCKPT01"
_HEADER = struct.Struct("<8sqq6d")  # magic, param count, task index, hyperparameters


def save_state(state: ConsolidationState, path) -> None:
    """Write a binary checkpoint of the penalty state.

    Format (little-endian): 8-byte magic ``ALCKPT01``; int64 parameter
    count; int64 task index; the six hyperparameters as float64 in the
    order a, a_prime, c, c_prime, epsilon, xi; then omega_big,
    theta_center and theta_side_ref as contiguous float64 arrays. The
    within-task accumulator is not stored: checkpoints are taken at task
    boundaries, where it is zero.
    """
    h = state.hyper
    header = _HEADER.pack(_STATE_MAGIC, state.n_params, state.task_index,
                          h.a, h.a_prime, h.c, h.c_prime, h.epsilon, h.xi)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(state.omega_big, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(state.theta_center, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(state.theta_side_ref, dtype="<f8").tobytes())


def load_state(path) -> ConsolidationState:
    """Read a checkpoint written by save_state. The accumulator comes back
    zeroed, ready for the next task."""
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: checkpoint header truncated")
        magic, n, task_index, a, a_prime, c, c_prime, epsilon, xi = _HEADER.unpack(raw)
        if magic != _STATE_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        body = f.read()
    expected = 3 * n * 8
    if len(body) != expected:
        raise ValueError(f"{path}: checkpoint body has {len(body)} bytes, expected {expected}")
    arrays = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(3, n)
    return ConsolidationState(
        omega_big=arrays[0].copy(),
        theta_center=arrays[1].copy(),
        theta_side_ref=arrays[2].copy(),
        omega_accum=np.zeros(n),
        hyper=Hyperparams(a=a, a_prime=a_prime, c=c, c_prime=c_prime, epsilon=epsilon, xi=xi),
        task_index=int(task_index),
    )
