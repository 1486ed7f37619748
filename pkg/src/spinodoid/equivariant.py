"""Permutation-equivariant dense layers through orbit-based weight sharing.

Nodes carry tensor-valued activations ("matrices of rank r" over dimension
d); the symmetric group S_d acts jointly on every index of every node. Two
weight entries are tied exactly when their (input-tuple, output-tuple)
index pairs lie on one orbit of that action, which makes each layer, and
hence the whole network, equivariant by construction.

Orbits are enumerated by brute force over all d! permutations; with d = 3
the largest layer has 3 * 81 index pairs, so this costs microseconds and
is cached per signature. Two refinements apply to a final rank-4 layer:

* ``symmetrize``   merges orbits that coincide after symmetrizing the
                   output tuple over the minor/major index symmetries, so
                   the produced rank-4 matrix is minor/major symmetric;
* ``zero_pattern`` removes the orbits of output tuples that vanish for an
                   axis-aligned orthorhombic stiffness; those entries stay
                   exactly zero and own no parameters.

The forward pass and its reverse-mode gradients are hand-written on
flattened per-layer matrices, so a parameter vector is just a flat float
array with a documented, orbit-canonical ordering.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

DIM = 3

# position symmetries of a minor/major symmetric rank-4 tensor
_RANK4_SYMMETRIES = (
    (0, 1, 2, 3), (1, 0, 2, 3), (0, 1, 3, 2), (1, 0, 3, 2),
    (2, 3, 0, 1), (3, 2, 0, 1), (2, 3, 1, 0), (3, 2, 1, 0),
)

#: representatives of the vanishing orthorhombic index classes
_ORTHORHOMBIC_ZERO_REPS = ((0, 0, 0, 1), (0, 0, 1, 2), (0, 1, 0, 2))

ZERO_PATTERNS = ("orthorhombic-rank4",)


def softplus(x):
    """Overflow-safe softplus ln(1 + exp(x))."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0.0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(x)))


def softplus_derivative(x):
    """Logistic function, the derivative of softplus."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_ACTIVATIONS = {
    "softplus": (softplus, softplus_derivative),
    "linear": (lambda x: x, lambda x: np.ones_like(x)),
}


# -----------------------------------------------------------------------------
# Orbit enumeration
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class OrbitPartition:
    """Weight-sharing pattern of one connection between two tensor nodes.

    ``pair_orbit[j_flat, i_flat]`` is the orbit id of the weight linking
    input tuple i to output tuple j, or -1 where the entry is pruned by the
    zero pattern. ``bias_orbit`` does the same for output tuples alone.
    """

    rank_in: int
    rank_out: int
    dim: int
    symmetrize: bool
    zero_pattern: str | None
    pair_orbit: np.ndarray
    n_weight_orbits: int
    bias_orbit: np.ndarray
    n_bias_orbits: int


_PARTITION_CACHE: dict[tuple, OrbitPartition] = {}


def _index_tuples(rank, dim):
    return list(itertools.product(range(dim), repeat=rank))


def _zero_tuple_set(zero_pattern, rank_out, dim, perms):
    if zero_pattern is None:
        return frozenset()
    if zero_pattern not in ZERO_PATTERNS:
        raise ValueError(f"unknown zero pattern {zero_pattern!r}")
    if rank_out != 4:
        raise ValueError("the orthorhombic zero pattern applies to rank-4 outputs")
    zeros = set()
    for rep in _ORTHORHOMBIC_ZERO_REPS:
        for pos in _RANK4_SYMMETRIES:
            reordered = tuple(rep[p] for p in pos)
            for perm in perms:
                zeros.add(tuple(perm[v] for v in reordered))
    return frozenset(zeros)


def enumerate_orbits(rank_in, rank_out, dim=DIM, symmetrize=False, zero_pattern=None):
    """Partition the index pairs of a connection into joint-permutation orbits.

    Orbit ids are canonical: orbits are sorted by their lexicographically
    smallest concatenated (input + output) tuple, which fixes the parameter
    ordering used for serialization.
    """
    key = (rank_in, rank_out, dim, bool(symmetrize), zero_pattern)
    cached = _PARTITION_CACHE.get(key)
    if cached is not None:
        return cached
    if rank_in < 0 or rank_out < 0:
        raise ValueError("ranks must be non-negative")
    if symmetrize and rank_out != 4:
        raise ValueError("output symmetrization is defined for rank-4 outputs")
    perms = list(itertools.permutations(range(dim)))
    in_tuples = _index_tuples(rank_in, dim)
    out_tuples = _index_tuples(rank_out, dim)
    positions = _RANK4_SYMMETRIES if symmetrize else ((tuple(range(rank_out)),) if rank_out else ((),))
    zeros = _zero_tuple_set(zero_pattern, rank_out, dim, perms) if zero_pattern else frozenset()

    def out_variants(j):
        return [tuple(j[p] for p in pos) for pos in positions] if rank_out else [()]

    # weights: canonical key is the smallest concatenated tuple over the
    # combined action of S_d (index values) and the position symmetries
    pair_keys = {}
    for i in in_tuples:
        for j in out_tuples:
            best = None
            for jv in out_variants(j):
                for perm in perms:
                    cand = tuple(perm[v] for v in i) + tuple(perm[v] for v in jv)
                    if best is None or cand < best:
                        best = cand
            pair_keys[(i, j)] = best
    weight_ids = {k: n for n, k in enumerate(sorted({
        v for (i, j), v in pair_keys.items() if j not in zeros}))}
    pair_orbit = np.full((len(out_tuples), len(in_tuples)), -1, dtype=np.int32)
    for a, i in enumerate(in_tuples):
        for b, j in enumerate(out_tuples):
            if j in zeros:
                continue
            pair_orbit[b, a] = weight_ids[pair_keys[(i, j)]]

    # biases: orbits of the output tuples alone, under the same combined action
    bias_keys = {}
    for j in out_tuples:
        best = None
        for jv in out_variants(j):
            for perm in perms:
                cand = tuple(perm[v] for v in jv)
                if best is None or cand < best:
                    best = cand
        bias_keys[j] = best
    bias_ids = {k: n for n, k in enumerate(sorted({
        v for j, v in bias_keys.items() if j not in zeros}))}
    bias_orbit = np.full(len(out_tuples), -1, dtype=np.int32)
    for b, j in enumerate(out_tuples):
        if j not in zeros:
            bias_orbit[b] = bias_ids[bias_keys[j]]

    pair_orbit.setflags(write=False)
    bias_orbit.setflags(write=False)
    partition = OrbitPartition(
        rank_in=rank_in, rank_out=rank_out, dim=dim,
        symmetrize=bool(symmetrize), zero_pattern=zero_pattern,
        pair_orbit=pair_orbit, n_weight_orbits=len(weight_ids),
        bias_orbit=bias_orbit, n_bias_orbits=len(bias_ids))
    _PARTITION_CACHE[key] = partition
    return partition


# -----------------------------------------------------------------------------
# Layer and network specifications
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One equivariant layer: node signatures, activation and output options.

    ``in_nodes`` / ``out_nodes`` are tuples of (rank, count) pairs; count
    gives the number of independent node instances of that rank.
    """

    in_nodes: tuple[tuple[int, int], ...]
    out_nodes: tuple[tuple[int, int], ...]
    activation: str = "softplus"
    symmetrize: bool = False
    zero_pattern: str | None = None

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "in_nodes", tuple((int(r), int(c)) for r, c in self.in_nodes))
        object.__setattr__(self, "out_nodes", tuple((int(r), int(c)) for r, c in self.out_nodes))


def _instances(nodes):
    """Expand (rank, count) pairs into a flat list of instance ranks."""
    out = []
    for rank, count in nodes:
        out.extend([rank] * count)
    return out


class _CompiledLayer:
    """Index maps and offsets for the fast flattened forward/backward pass."""

    def __init__(self, spec: LayerSpec, dim=DIM):
        self.spec = spec
        self.dim = dim
        self.in_ranks = _instances(spec.in_nodes)
        self.out_ranks = _instances(spec.out_nodes)
        self.in_sizes = [dim ** r for r in self.in_ranks]
        self.out_sizes = [dim ** r for r in self.out_ranks]
        self.total_in = sum(self.in_sizes)
        self.total_out = sum(self.out_sizes)
        self.fan_in_nodes = len(self.in_ranks)
        in_offsets = np.concatenate([[0], np.cumsum(self.in_sizes)])
        out_offsets = np.concatenate([[0], np.cumsum(self.out_sizes)])

        index_map = np.full((self.total_out, self.total_in), -1, dtype=np.int64)
        bias_map = np.full(self.total_out, -1, dtype=np.int64)
        n = 0
        # parameter order: for each output instance, weights from each input
        # instance (orbit id order), then all biases per output instance
        for jo, r_out in enumerate(self.out_ranks):
            for io, r_in in enumerate(self.in_ranks):
                part = enumerate_orbits(r_in, r_out, dim,
                                        symmetrize=spec.symmetrize,
                                        zero_pattern=spec.zero_pattern)
                block = part.pair_orbit.astype(np.int64)
                block = np.where(block >= 0, block + n, -1)
                index_map[out_offsets[jo]:out_offsets[jo + 1],
                          in_offsets[io]:in_offsets[io + 1]] = block
                n += part.n_weight_orbits
        for jo, r_out in enumerate(self.out_ranks):
            part = enumerate_orbits(0, r_out, dim,
                                    symmetrize=spec.symmetrize,
                                    zero_pattern=spec.zero_pattern)
            b = part.bias_orbit.astype(np.int64)
            bias_map[out_offsets[jo]:out_offsets[jo + 1]] = np.where(b >= 0, b + n, -1)
            n += part.n_bias_orbits
        self.index_map = index_map
        self.bias_map = bias_map
        self.n_params = n
        self._w_valid = index_map >= 0
        self._b_valid = bias_map >= 0
        self.activation = _ACTIVATIONS[spec.activation]

    def expand(self, params):
        """Expanded weight matrix and bias vector from per-orbit parameters."""
        w = np.where(self._w_valid, params[np.where(self._w_valid, self.index_map, 0)], 0.0)
        b = np.where(self._b_valid, params[np.where(self._b_valid, self.bias_map, 0)], 0.0)
        return w, b


_NETWORK_CACHE: dict[tuple, list[_CompiledLayer]] = {}


def compile_network(layers):
    """Compile a network specification (tuple of LayerSpec) for evaluation."""
    layers = tuple(layers)
    cached = _NETWORK_CACHE.get(layers)
    if cached is not None:
        return cached
    compiled = [_CompiledLayer(spec) for spec in layers]
    for prev, nxt in zip(compiled[:-1], compiled[1:]):
        if prev.out_ranks != nxt.in_ranks:
            raise ValueError("layer signatures do not compose")
    _NETWORK_CACHE[layers] = compiled
    return compiled


def n_parameters(layers):
    """Total number of independent parameters of a network specification."""
    return sum(layer.n_params for layer in compile_network(layers))


def parameter_slices(layers):
    """Per-layer slices into the flat parameter vector."""
    compiled = compile_network(layers)
    out, start = [], 0
    for layer in compiled:
        out.append(slice(start, start + layer.n_params))
        start += layer.n_params
    return out


def init_params(layers, rng):
    """Per-orbit uniform initialization, scale 1/sqrt(number of input nodes)."""
    rng = np.random.default_rng(rng)
    compiled = compile_network(layers)
    chunks = []
    for layer in compiled:
        a = 1.0 / np.sqrt(max(layer.fan_in_nodes, 1))
        chunks.append(rng.uniform(-a, a, size=layer.n_params))
    return np.concatenate(chunks) if chunks else np.zeros(0)


# -----------------------------------------------------------------------------
# Forward / backward
# -----------------------------------------------------------------------------

def _flatten_inputs(inputs, compiled0):
    """Stack per-instance input arrays into a (batch, total_in) matrix."""
    arrays = []
    batch = None
    for value, rank, size in zip(inputs, compiled0.in_ranks, compiled0.in_sizes):
        arr = np.asarray(value, dtype=float)
        expected = (3,) * rank
        if arr.shape == expected:
            arr = arr.reshape(1, size)
        elif arr.shape[1:] == expected:
            arr = arr.reshape(arr.shape[0], size)
        else:
            raise ValueError(f"input of rank {rank} has shape {arr.shape}")
        if batch is None:
            batch = arr.shape[0]
        elif arr.shape[0] != batch:
            raise ValueError("inconsistent batch sizes across inputs")
        arrays.append(arr)
    if len(arrays) != len(compiled0.in_ranks):
        raise ValueError(
            f"expected {len(compiled0.in_ranks)} inputs, got {len(arrays)}")
    return np.concatenate(arrays, axis=1)


def layer_forward(inputs, spec: LayerSpec, params):
    """Forward pass of a single layer; inputs/outputs are lists per instance."""
    layer = _CompiledLayer(spec)
    params = np.asarray(params, dtype=float)
    if params.shape != (layer.n_params,):
        raise ValueError(f"expected {layer.n_params} parameters, got {params.shape}")
    x = _flatten_inputs(inputs, layer)
    w, b = layer.expand(params)
    y = layer.activation[0](x @ w.T + b)
    out, off = [], 0
    for rank, size in zip(layer.out_ranks, layer.out_sizes):
        out.append(y[:, off:off + size].reshape((y.shape[0],) + (3,) * rank))
        off += size
    return out


def network_forward(inputs, layers, params, with_cache=False):
    """Evaluate the network; returns the flat (batch, size) final activation.

    ``inputs`` is a list with one array per input instance of the first
    layer, each of shape (batch,) + (3,)*rank (the batch axis may be
    omitted for a single sample).
    """
    compiled = compile_network(layers)
    params = np.asarray(params, dtype=float)
    slices = parameter_slices(layers)
    x = _flatten_inputs(inputs, compiled[0])
    cache = [] if with_cache else None
    for layer, sl in zip(compiled, slices):
        w, b = layer.expand(params[sl])
        z = x @ w.T + b
        if with_cache:
            cache.append((x, z, w))
        x = layer.activation[0](z)
    if with_cache:
        return x, cache
    return x


def network_vjp(cache, layers, params, upstream):
    """Reverse-mode gradients given the forward cache and an upstream cotangent.

    Parameters
    ----------
    upstream : ndarray (batch, final_size)
        Cotangent of the flat network output. The parameter gradient is
        accumulated (summed) over the batch.

    Returns
    -------
    grad_params : ndarray (n_parameters,)
    grad_input : ndarray (batch, total_in) cotangent of the flat input.
    """
    compiled = compile_network(layers)
    slices = parameter_slices(layers)
    grad_params = np.zeros(int(np.asarray(params).size))
    dy = np.asarray(upstream, dtype=float)
    for layer, sl, (x, z, w) in zip(reversed(compiled), reversed(slices), reversed(cache)):
        dz = dy * layer.activation[1](z)
        g = np.zeros(layer.n_params)
        dw = dz.T @ x
        np.add.at(g, layer.index_map[layer._w_valid], dw[layer._w_valid])
        db = dz.sum(axis=0)
        np.add.at(g, layer.bias_map[layer._b_valid], db[layer._b_valid])
        grad_params[sl] = g
        dy = dz @ w
    return grad_params, dy


def split_input_cotangent(flat, layers):
    """Split a flat input cotangent back into per-instance arrays."""
    compiled = compile_network(layers)[0]
    out, off = [], 0
    for rank, size in zip(compiled.in_ranks, compiled.in_sizes):
        out.append(flat[:, off:off + size].reshape((flat.shape[0],) + (3,) * rank))
        off += size
    return out


def permute_value(value, perm, rank):
    """Action of an index permutation on a tensor-valued activation.

    result[j1, ..., jr] = value[perm[j1], ..., perm[jr]]; a leading batch
    axis is preserved.
    """
    arr = np.asarray(value)
    idx = np.asarray(perm)
    lead = arr.ndim - rank
    for ax in range(lead, arr.ndim):
        arr = np.take(arr, idx, axis=ax)
    return arr
