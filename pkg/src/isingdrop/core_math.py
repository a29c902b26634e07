"""Small numeric kernel shared by the rest of the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 (row-major).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def as_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x):
    """Logistic function, elementwise. Saturates without overflow warnings."""
    return expit(np.asarray(x, dtype=np.float64))


def sigmoid_grad_from_output(y):
    # derivative expressed through the forward output y = sigmoid(x)
    return y * (1.0 - y)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Loss and logit-gradient for a single example.

    Returns ``(loss, grad)`` where ``grad = softmax(logits) - onehot(label)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError(f"expected a logit vector, got shape {z.shape}")
    k = z.shape[0]
    if not 0 <= int(label) < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    shifted = z - z.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = log_norm - shifted[label]
    grad = np.exp(shifted - log_norm)
    grad[label] -= 1.0
    return float(loss), grad


def batch_softmax_cross_entropy(logits, labels):
    """Mean loss over a batch and the gradient of that mean w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    q, k = z.shape
    if labels.shape != (q,):
        raise DimensionError(f"{q} logit rows but {labels.shape} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels out of range for {k} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(q)
    losses = log_norm - shifted[rows, labels]
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return float(losses.mean()), grad / q


@dataclass
class AdamState:
    """Moment accumulators for one parameter array."""

    shape: tuple
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.m is None:
            self.m = np.zeros(self.shape)
        if self.v is None:
            self.v = np.zeros(self.shape)


def adam_step(params, grads, state, mask=None):
    """Apply one bias-corrected Adam update to ``params`` in place.

    Moments are updated everywhere. When ``mask`` is given, parameters are
    only written where ``mask`` is nonzero, so masked entries stay bitwise
    unchanged even while their moments still carry momentum.
    """
    if params.shape != grads.shape or params.shape != state.shape:
        raise DimensionError(
            f"adam shapes differ: params {params.shape}, grads {grads.shape}, state {state.shape}"
        )
    state.step += 1
    t = state.step
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (grads * grads)
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if mask is None:
        params -= update
    else:
        np.subtract(params, update, out=params, where=mask != 0)
    return params
