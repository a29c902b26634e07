"""Ising energy over network units and a simulated-annealing minimizer.

Each unit of the MLP is a binary variable (1 = kept, 0 = dropped). Couplings
live only on connections between consecutive candidate layers and score how
saturated that connection's mini-batch activation is.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .core_math import DimensionError, sigmoid
from .network import forward

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

log = logging.getLogger(__name__)

CONVENTIONS = ("default", "literal")
FIELD_MODES = ("uniform", "relative", "bias", "signed_bias")
# the hardware annealer this stands in for holds this many state variables
HARDWARE_VARIABLES = 1024
TIE_TOL = 1e-9


class CapacityError(ValueError):
    """Instance too large for exhaustive enumeration."""


@dataclass(frozen=True)
class CostMapParams:
    mu: float = 0.5
    sigma2: float = 0.01

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass(frozen=True)
class AnnealSchedule:
    t_initial: float = 2.0
    t_final: float = 0.01
    sweeps: int = 1000
    restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if not self.t_initial > self.t_final > 0:
            raise ValueError("need t_initial > t_final > 0")
        if self.sweeps < 1 or self.restarts < 1:
            raise ValueError("sweeps and restarts must be >= 1")

    def temperatures(self):
        k = np.arange(self.sweeps) / max(self.sweeps - 1, 1)
        return self.t_initial * (self.t_final / self.t_initial) ** k


class UnitIndexMap:
    """Global unit index <-> (layer, index in layer)."""

    def __init__(self, sizes, input_candidates=False):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        self.input_candidates = bool(input_candidates)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)
        flags = [False] * len(self.sizes)
        for l in range(1, len(self.sizes) - 1):
            flags[l] = True
        flags[0] = self.input_candidates and len(self.sizes) > 1
        flags[-1] = False
        self.layer_is_candidate = tuple(flags)

    @classmethod
    def for_spec(cls, spec):
        return cls(spec.sizes, spec.input_dropout)

    @property
    def n_units(self):
        return int(self.offsets[-1])

    def unit(self, layer, index):
        if not 0 <= index < self.sizes[layer]:
            raise IndexError(f"unit {index} outside layer {layer}")
        return int(self.offsets[layer] + index)

    def locate(self, u):
        if not 0 <= u < self.n_units:
            raise IndexError(f"unit {u} outside 0..{self.n_units - 1}")
        layer = int(np.searchsorted(self.offsets, u, side="right") - 1)
        return layer, int(u - self.offsets[layer])

    def layer_slice(self, layer):
        return slice(int(self.offsets[layer]), int(self.offsets[layer + 1]))

    def candidate_mask(self):
        return np.repeat(np.array(self.layer_is_candidate), self.sizes)

    def candidates(self):
        return np.flatnonzero(self.candidate_mask())

    def coupled_layers(self):
        """Layers l whose incoming connections (l-1 -> l) carry couplings."""
        c = self.layer_is_candidate
        return [l for l in range(1, len(self.sizes)) if c[l - 1] and c[l]]


@dataclass
class IsingInstance:
    """Pairwise energy over all network units.

    ``blocks[l]`` holds the couplings between unit layer ``l-1`` (rows) and
    ``l`` (columns); every other pair is uncoupled. ``fields`` rewards keeping
    a unit and enters the energy as ``-lam * fields``. The convention only
    sets the sign of the couplings: ``+`` penalises keeping both ends of a
    saturated connection, ``-`` rewards it.
    """

    index_map: UnitIndexMap
    blocks: dict
    fields: np.ndarray
    lam: float = 0.1
    convention: str = "default"

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        self.fields = np.asarray(self.fields, dtype=np.float64)
        if self.fields.shape != (self.n_units,):
            raise DimensionError(f"fields shape {self.fields.shape} for {self.n_units} units")
        sizes = self.index_map.sizes
        for l, g in self.blocks.items():
            if not 1 <= l < len(sizes) or g.shape != (sizes[l - 1], sizes[l]):
                raise DimensionError(f"coupling block {l} has shape {g.shape}")

    @property
    def n_units(self):
        return self.index_map.n_units

    def linear_terms(self):
        """Per-unit linear coefficient h_u in E = sum J s s + sum h s."""
        return -self.lam * self.fields

    @property
    def coupling_sign(self):
        return 1.0 if self.convention == "default" else -1.0

    def triplets(self):
        """(u, v, gamma) for every stored nonzero coupling, u in the earlier layer."""
        us, vs, gs = [], [], []
        for l in sorted(self.blocks):
            g = self.blocks[l]
            i, j = np.nonzero(g)
            us.append(i + self.index_map.offsets[l - 1])
            vs.append(j + self.index_map.offsets[l])
            gs.append(g[i, j])
        if not us:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        return np.concatenate(us), np.concatenate(vs), np.concatenate(gs)

    def adjacency(self):
        """Symmetric CSR arrays (indptr, indices, data) of the signed couplings."""
        u, v, g = self.triplets()
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        vals = self.coupling_sign * np.concatenate([g, g])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(self.n_units + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return np.cumsum(indptr), cols.astype(np.int64), vals.astype(np.float64)

    def dump(self):
        """Plain-text listing: header, one ``u v gamma`` line per coupling, fields."""
        u, v, g = self.triplets()
        lines = [
            f"units {self.n_units}",
            f"convention {self.convention}",
            f"lambda {self.lam!r}",
            "sizes " + " ".join(map(str, self.index_map.sizes)),
            f"input_candidates {int(self.index_map.input_candidates)}",
            f"couplings {len(g)}",
        ]
        lines += [f"{a} {b} {c!r}" for a, b, c in zip(u.tolist(), v.tolist(), g.tolist())]
        lines.append(f"fields {self.n_units}")
        lines += [repr(f) for f in self.fields.tolist()]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text):
        lines = iter(text.splitlines())
        header = {}
        for _ in range(6):
            key, _, val = next(lines).partition(" ")
            header[key] = val
        sizes = [int(s) for s in header["sizes"].split()]
        imap = UnitIndexMap(sizes, bool(int(header["input_candidates"])))
        blocks = {}
        for _ in range(int(header["couplings"])):
            a, b, c = next(lines).split()
            la, ia = imap.locate(int(a))
            lb, ib = imap.locate(int(b))
            if lb != la + 1:
                raise ValueError(f"coupling {a}-{b} is not between consecutive layers")
            blk = blocks.setdefault(lb, np.zeros((sizes[la], sizes[lb])))
            blk[ia, ib] = float(c)
        n = int(next(lines).split()[1])
        fields = np.array([float(next(lines)) for _ in range(n)])
        return cls(imap, blocks, fields, float(header["lambda"]), header["convention"])


def gaussian_cost(h_hat, params=CostMapParams()):
    """Inverted Gaussian: 0 at ``mu``, approaching 1 as activations saturate."""
    d = np.asarray(h_hat, dtype=np.float64) - params.mu
    out = 1.0 - np.exp(-(d * d) / (2.0 * params.sigma2))
    return float(out) if out.ndim == 0 else out


def batch_mean_activation(prev_activations, weight):
    """sigmoid(mean over the batch of the source activation, times the weight)."""
    h = np.asarray(prev_activations, dtype=np.float64)
    if h.size == 0:
        raise ValueError("empty batch")
    return float(sigmoid(h.mean() * weight))


def connection_activations(mean_prev, weights):
    """Vectorised ``batch_mean_activation`` over a whole weight matrix."""
    return sigmoid(np.asarray(mean_prev)[:, None] * weights)


def layer_activation(prev, weights, biases):
    """sigmoid(prev @ W + b); works on a single vector or a batch."""
    prev = np.asarray(prev, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if prev.shape[-1] != weights.shape[0] or weights.shape[1] != np.shape(biases)[0]:
        raise DimensionError(
            f"activation shapes {prev.shape}, {weights.shape}, {np.shape(biases)} disagree"
        )
    return sigmoid(prev @ weights + biases)


def build_instance(
    bank,
    batch,
    params=CostMapParams(),
    index_map=None,
    lam=0.1,
    field_mode="uniform",
    convention="default",
):
    """Couplings from the merged weights W* and one mini-batch.

    Activations come from the unmasked merged network so that currently
    dropped units are still scored.
    """
    if field_mode not in FIELD_MODES:
        raise ValueError(f"field_mode must be one of {FIELD_MODES}")
    weights, biases = bank.merged_weights, bank.merged_biases
    sizes = bank.sizes
    if index_map is None:
        index_map = UnitIndexMap(sizes)
    if tuple(index_map.sizes) != tuple(sizes):
        raise DimensionError(f"index map {index_map.sizes} vs network {sizes}")
    x = np.asarray(batch.images if hasattr(batch, "images") else batch, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("build_instance needs a non-empty batch")
    acts, _ = forward(weights, biases, x)
    means = [a.mean(axis=0) for a in acts]

    blocks = {}
    for l in index_map.coupled_layers():
        blocks[l] = gaussian_cost(connection_activations(means[l - 1], weights[l - 1]), params)

    cand = index_map.candidate_mask()
    fields = np.zeros(index_map.n_units)
    if field_mode == "uniform":
        fields[cand] = 1.0
    elif field_mode == "relative":
        # reward = degree x mean coupling, so lam compares a unit's saturation
        # against the network average and does not drift as weights grow
        mean_cost = np.mean([g.mean() for g in blocks.values()]) if blocks else 0.0
        for l in blocks:
            fields[index_map.layer_slice(l - 1)] += sizes[l] * mean_cost
            fields[index_map.layer_slice(l)] += sizes[l - 1] * mean_cost
        fields[~cand] = 0.0
    else:
        take = np.abs if field_mode == "bias" else np.asarray
        for l in range(1, len(sizes) - 1):
            fields[index_map.layer_slice(l)] = take(biases[l - 1])
        if index_map.input_candidates:
            # inputs carry no bias; they borrow the first hidden layer's mean
            fields[index_map.layer_slice(0)] = take(biases[0]).mean()
        fields[~cand] = 0.0
    return IsingInstance(index_map, blocks, fields, lam, convention)


def energy(instance, s):
    """Energy of a 0/1 state vector under the instance's sign convention."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (instance.n_units,):
        raise ValueError(f"state length {s.shape} != {instance.n_units} units")
    imap = instance.index_map
    pair = 0.0
    for l, g in instance.blocks.items():
        pair += float(s[imap.layer_slice(l - 1)] @ g @ s[imap.layer_slice(l)])
    return instance.coupling_sign * pair + float(instance.linear_terms() @ s)


@njit(cache=True)
def _anneal_kernel(indptr, indices, data, lin, cand, state, temps, rand):
    n = state.size
    local = np.zeros(n)
    for u in range(n):
        acc = 0.0
        for k in range(indptr[u], indptr[u + 1]):
            acc += data[k] * state[indices[k]]
        local[u] = acc
    e = 0.0
    for u in range(n):
        e += state[u] * (lin[u] + 0.5 * local[u])
    best = state.copy()
    best_e = e
    for sweep in range(temps.size):
        t = temps[sweep]
        for c in range(cand.size):
            u = cand[c]
            x = state[u]
            step = 1.0 - 2.0 * x
            d = step * (lin[u] + local[u])
            if d <= 0.0 or rand[sweep, c] < np.exp(-d / t):
                state[u] = 1.0 - x
                e += d
                for k in range(indptr[u], indptr[u + 1]):
                    local[indices[k]] += data[k] * step
        if e < best_e - 1e-12:
            best_e = e
            best[:] = state
    # zero-temperature descent from both the final and the best state
    for start in range(2):
        if start == 1:
            state[:] = best
            for u in range(n):
                acc = 0.0
                for k in range(indptr[u], indptr[u + 1]):
                    acc += data[k] * state[indices[k]]
                local[u] = acc
            e = best_e
        improved = True
        while improved:
            improved = False
            for c in range(cand.size):
                u = cand[c]
                step = 1.0 - 2.0 * state[u]
                d = step * (lin[u] + local[u])
                # equal-energy moves only ever restore a dropped unit
                if d < -1e-12 or (step > 0.0 and d <= 1e-12):
                    state[u] += step
                    e += d
                    improved = d < -1e-12 or improved
                    for k in range(indptr[u], indptr[u + 1]):
                        local[indices[k]] += data[k] * step
        # a descent from the best state never raises its energy, so keep it
        if start == 1 or e < best_e - 1e-12:
            best_e = e
            best[:] = state
    return best


def _pick(states, energies):
    """Lowest energy; ties go to more kept units, then lexicographic order."""
    energies = np.asarray(energies)
    e_min = energies.min()
    tied = np.flatnonzero(energies <= e_min + TIE_TOL * max(1.0, abs(e_min)))
    kept = states[tied].sum(axis=1)
    tied = tied[kept == kept.max()]
    if len(tied) > 1:
        rows = states[tied]
        tied = tied[np.lexsort(rows.T[::-1])]
    return tied[0]


def anneal(instance, schedule=AnnealSchedule()):
    """Single-flip Metropolis with geometric cooling and independent restarts.

    Every restart starts from the all-ones state and draws from its own
    generator seeded by ``(schedule.seed, restart)``. Non-candidate units
    stay at 1. Returns the best state found as an int8 vector.
    """
    n = instance.n_units
    if n > HARDWARE_VARIABLES:
        log.debug("instance has %d variables (> %d)", n, HARDWARE_VARIABLES)
    cand = instance.index_map.candidates().astype(np.int64)
    ones = np.ones(n, dtype=np.int8)
    if cand.size == 0:
        return ones
    indptr, indices, data = instance.adjacency()
    lin = instance.linear_terms().astype(np.float64)
    temps = schedule.temperatures()
    states = [ones]
    for r in range(schedule.restarts):
        rng = np.random.default_rng([int(schedule.seed), r])
        rand = rng.random((schedule.sweeps, cand.size))
        state = np.ones(n, dtype=np.float64)
        best = _anneal_kernel(indptr, indices, data, lin, cand, state, temps, rand)
        states.append(np.rint(best).astype(np.int8))
    states = np.array(states)
    energies = [energy(instance, s) for s in states]
    return states[_pick(states, energies)]


def _reduced_qubo(instance, cand):
    """Dense (k x k) upper couplings, linear terms and constant over the candidates.

    Built straight from the coupling blocks with every non-candidate fixed at 1.
    """
    n = instance.n_units
    pos = -np.ones(n, dtype=np.int64)
    pos[cand] = np.arange(cand.size)
    k = cand.size
    quad = np.zeros((k, k))
    lin_all = instance.linear_terms()
    lin = lin_all[cand].copy()
    const = float(lin_all.sum() - lin_all[cand].sum())
    sign = instance.coupling_sign
    imap = instance.index_map
    for l, g in instance.blocks.items():
        for i, j in zip(*np.nonzero(g)):
            u = imap.offsets[l - 1] + i
            v = imap.offsets[l] + j
            val = sign * g[i, j]
            a, b = pos[u], pos[v]
            if a >= 0 and b >= 0:
                quad[a, b] += val
            elif a >= 0:
                lin[a] += val
            elif b >= 0:
                lin[b] += val
            else:
                const += val
    return quad, lin, const


def brute_force_min(instance, max_bits=24, chunk=1 << 16):
    """Exhaustive minimum over all candidate assignments.

    Returns ``(state, energy)``; ties prefer more kept units, then the
    lexicographically smallest state.
    """
    cand = instance.index_map.candidates()
    k = cand.size
    if k > max_bits:
        raise CapacityError(f"{k} candidate bits exceeds the enumeration limit of {max_bits}")
    quad, lin, const = _reduced_qubo(instance, cand)
    shifts = np.arange(k - 1, -1, -1, dtype=np.int64)
    best_states, best_energies = [], []
    total = 1 << k
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        bits = ((codes[:, None] >> shifts) & 1).astype(np.float64)
        e = const + bits @ lin + np.einsum("ij,ij->i", bits @ quad, bits)
        i = _pick(bits, e)
        best_states.append(bits[i])
        best_energies.append(e[i])
    bits = np.array(best_states)
    e = np.array(best_energies)
    full = np.ones((len(bits), instance.n_units), dtype=np.int8)
    full[:, cand] = bits.astype(np.int8)
    i = _pick(full, e)
    return full[i], energy(instance, full[i])


def random_instance(sizes, rng, input_candidates=False, density=0.5, lam=0.1,
                    convention="default"):
    """Random couplings in [0, 1] on a random subset of consecutive-layer edges."""
    imap = UnitIndexMap(sizes, input_candidates)
    blocks = {}
    for l in imap.coupled_layers():
        shape = (imap.sizes[l - 1], imap.sizes[l])
        g = rng.uniform(0.0, 1.0, shape) * (rng.random(shape) < density)
        blocks[l] = g
    fields = imap.candidate_mask().astype(np.float64)
    return IsingInstance(imap, blocks, fields, lam, convention)
