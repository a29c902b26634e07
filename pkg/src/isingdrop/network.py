"""Sigmoid MLP with unit-level dropout masks and a merged weight bank."""
from dataclasses import dataclass, field

import numpy as np

from .core_math import (
    AdamState,
    DimensionError,
    adam_step,
    batch_softmax_cross_entropy,
    sigmoid,
)

DROPOUT_MODES = ("none", "random", "ising")


@dataclass
class NetworkSpec:
    sizes: tuple  # (|x|, |h1|, ..., |hN|, |y|)
    dropout: str = "none"
    p: float = 0.5
    input_dropout: bool = False
    inference_masking: bool = False

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 3:
            raise ValueError("need at least one hidden layer")
        if self.sizes[-1] < 2:
            raise ValueError("output layer needs at least two units")
        if min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {self.sizes}")
        if self.dropout not in DROPOUT_MODES:
            raise ValueError(f"dropout mode must be one of {DROPOUT_MODES}")
        if not 0.0 <= self.p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")

    @property
    def n_layers(self):
        """Number of weight layers (hidden layers + output)."""
        return len(self.sizes) - 1

    @property
    def n_hidden(self):
        return len(self.sizes) - 2

    def candidate_layers(self):
        """Indices of unit layers whose units may be dropped."""
        first = 0 if self.input_dropout else 1
        return list(range(first, len(self.sizes) - 1))


@dataclass
class WeightBank:
    """Working weights W plus the persistent merged copy W*.

    ``weights[l-1]`` maps unit layer ``l-1`` to ``l`` and has shape
    ``(sizes[l-1], sizes[l])``; ``biases[l-1]`` belongs to unit layer ``l``.
    """

    weights: list
    biases: list
    merged_weights: list
    merged_biases: list

    @classmethod
    def from_arrays(cls, weights, biases):
        weights = [np.array(w, dtype=np.float64) for w in weights]
        biases = [np.array(b, dtype=np.float64) for b in biases]
        return cls(weights, biases, [w.copy() for w in weights], [b.copy() for b in biases])

    @property
    def sizes(self):
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    def select(self, which):
        if which in ("W", "working"):
            return self.weights, self.biases
        if which in ("W*", "merged"):
            return self.merged_weights, self.merged_biases
        raise ValueError(f"unknown weight bank {which!r}")

    def copy(self):
        return WeightBank(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [w.copy() for w in self.merged_weights],
            [b.copy() for b in self.merged_biases],
        )

    def n_parameters(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class MaskSet:
    """Unit keep flags per unit layer; output layer is always all ones."""

    keep: list = field(default_factory=list)
    _outer: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @classmethod
    def ones(cls, sizes):
        return cls([np.ones(n) for n in sizes])

    @property
    def sizes(self):
        return tuple(len(k) for k in self.keep)

    def weight_mask(self, layer):
        """Mask for ``weights[layer-1]``: zero iff either endpoint is dropped."""
        m = self._outer.get(layer)
        if m is None:
            m = self._outer[layer] = np.outer(self.keep[layer - 1], self.keep[layer])
        return m

    def bias_mask(self, layer):
        return self.keep[layer]

    def is_all_ones(self):
        return all(bool(np.all(k == 1)) for k in self.keep)

    def dropped_counts(self):
        return [int(np.sum(k == 0)) for k in self.keep]

    def to_state(self):
        return np.concatenate(self.keep).astype(np.int8)

    @classmethod
    def from_state(cls, state, sizes):
        state = np.asarray(state)
        if state.size != sum(sizes):
            raise DimensionError(f"state of length {state.size} for layers {sizes}")
        cuts = np.cumsum(sizes)[:-1]
        keep = [part.astype(np.float64) for part in np.split(state, cuts)]
        if np.any(keep[-1] != 1):
            raise ValueError("output units cannot be dropped")
        return cls(keep)


def init_weights(spec, seed):
    """Glorot-uniform weights, zero biases, and W* = W."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return WeightBank.from_arrays(weights, biases)


def _check_input(weights, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != weights[0].shape[0]:
        raise DimensionError(f"input width {x.shape[1]} != {weights[0].shape[0]}")
    return x


def forward(weights, biases, x, mask=None):
    """Masked forward pass.

    Returns ``(activations, logits)`` where ``activations[l]`` is the
    output of unit layer ``l`` for ``l = 0..N`` (input included). Dropped
    units emit exactly zero. ``mask=None`` is the unmasked network.
    """
    x = _check_input(weights, x)
    L = len(weights)
    if mask is not None and mask.sizes != tuple([weights[0].shape[0]] + [w.shape[1] for w in weights]):
        raise DimensionError(f"mask layers {mask.sizes} do not match the network")
    h = x if mask is None else x * mask.keep[0]
    acts = [h]
    for l in range(1, L):
        w, b = weights[l - 1], biases[l - 1]
        if mask is None:
            h = sigmoid(h @ w + b)
        else:
            keep = mask.keep[l]
            h = sigmoid(h @ (w * mask.weight_mask(l)) + b * keep) * keep
        acts.append(h)
    w, b = weights[-1], biases[-1]
    if mask is not None:
        w = w * mask.weight_mask(L)
    logits = h @ w + b
    return acts, logits


def gradients(weights, biases, x, labels, mask=None):
    """Mean cross-entropy over the batch and its gradients.

    Returns ``(loss, grad_weights, grad_biases)``. Gradients of weights and
    biases touching a dropped unit come out exactly zero.
    """
    acts, logits = forward(weights, biases, x, mask)
    loss, g = batch_softmax_cross_entropy(logits, labels)
    L = len(weights)
    gw, gb = [None] * L, [None] * L
    for l in range(L, 0, -1):
        gw[l - 1] = acts[l - 1].T @ g
        gb[l - 1] = g.sum(axis=0)
        if l == 1:
            break
        w = weights[l - 1] if mask is None else weights[l - 1] * mask.weight_mask(l)
        h = acts[l - 1]
        g = (g @ w.T) * (h * (1.0 - h))
    return loss, gw, gb


def make_optimizer(bank, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    """One AdamState per weight and bias array, in bank order."""
    make = lambda a: AdamState(a.shape, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    return [make(w) for w in bank.weights] + [make(b) for b in bank.biases]


def backprop_step(bank, mask, batch, opt):
    """One masked Adam step on the working weights; returns the batch loss.

    Weights and biases masked out by ``mask`` are left bitwise unchanged.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    loss, gw, gb = gradients(bank.weights, bank.biases, batch.images, batch.labels, mask)
    L = len(bank.weights)
    for l in range(1, L + 1):
        if mask is None:
            wm = bm = None
        else:
            wm, bm = mask.weight_mask(l), mask.bias_mask(l)
        adam_step(bank.weights[l - 1], gw[l - 1], opt[l - 1], wm)
        adam_step(bank.biases[l - 1], gb[l - 1], opt[L + l - 1], bm)
    return loss


def merge_weights(bank, mask):
    """W* <- W where the mask is 1, keep W* where it is 0 (in place)."""
    for l in range(1, len(bank.weights) + 1):
        wm = mask.weight_mask(l) != 0
        bm = mask.bias_mask(l) != 0
        bank.merged_weights[l - 1] = np.where(wm, bank.weights[l - 1], bank.merged_weights[l - 1])
        bank.merged_biases[l - 1] = np.where(bm, bank.biases[l - 1], bank.merged_biases[l - 1])
    return bank
