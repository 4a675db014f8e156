"""Exact graph edit distance by minimizing the permutation-assignment objective.

The edit distance of a padded pair equals the minimum over all hard node
permutations P of

    edge_del/2 * ||relu(A - P A' P^T)||_1 + edge_add/2 * ||relu(P A' P^T - A)||_1
    + node_del * ||relu(eta - P eta')||_1 + node_add * ||relu(P eta' - eta)||_1
    (+ node_sub * sum_{u,u'} and(eta[u], eta'[u']) * ||L[u,:]-L'[u',:]||_1 * P[u,u'])

Solved by exhaustive enumeration up to a configurable size bound, with an
optional branch-and-bound accelerator using an assignment lower bound.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graphs import CostConfig, PaddedPair

DEFAULT_ENUMERATION_BOUND = 8
BRANCH_AND_BOUND_LIMIT = 12
_TIE_EPS = 1e-9


class CapabilityError(RuntimeError):
    """Instance exceeds the configured exact-solver size bound."""


@dataclass(frozen=True)
class HardPermutation:
    """A bijection of [n]; entry i gives the target index of source node i."""

    perm: tuple

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"not a permutation: {perm}")
        object.__setattr__(self, "perm", perm)

    def __len__(self) -> int:
        return len(self.perm)

    def matrix(self, size: int | None = None) -> np.ndarray:
        n = len(self.perm) if size is None else size
        out = np.zeros((n, n), dtype=np.float64)
        for u, v in enumerate(self.perm):
            out[u, v] = 1.0
        return out

    def inverse(self) -> "HardPermutation":
        inv = [0] * len(self.perm)
        for u, v in enumerate(self.perm):
            inv[v] = u
        return HardPermutation(tuple(inv))


@dataclass(frozen=True)
class ExactResult:
    value: float
    argmin: HardPermutation
    nodes_explored: int


@dataclass(frozen=True)
class MatchingLimits:
    """Degeneracies of the edit distance under special cost settings."""

    isomorphic: bool
    subgraph_isomorphic: bool
    mces_edges: int


@lru_cache(maxsize=16)
def all_permutations(n: int) -> np.ndarray:
    """(n!, n) array of all permutations of range(n) in lexicographic order."""
    out = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    out = out.reshape(-1, n)
    out.setflags(write=False)
    return out


class _AlignedCache:
    """Tiny LRU for the permuted-target adjacency gather.

    Labeling a corpus evaluates one target graph against many sources at the
    same padded size; the (n!, n, n) gather only depends on the target, so
    reusing it roughly halves enumeration time. Keyed by raw adjacency
    bytes; a handful of entries suffices when callers group work by target.
    """

    def __init__(self, capacity: int = 8):
        self.capacity = capacity
        self._store: dict = {}

    def get(self, adj_int8: np.ndarray, perms: np.ndarray) -> np.ndarray:
        key = (adj_int8.shape[0], adj_int8.tobytes())
        hit = self._store.pop(key, None)
        if hit is None:
            hit = adj_int8[perms[:, :, None], perms[:, None, :]]
        self._store[key] = hit
        while len(self._store) > self.capacity:
            self._store.pop(next(iter(self._store)))
        return hit


_aligned_cache = _AlignedCache()


def _as_matrix(alignment, size: int) -> np.ndarray:
    if isinstance(alignment, HardPermutation):
        return alignment.matrix(size)
    arr = np.asarray(alignment, dtype=np.float64)
    if arr.ndim == 1:
        return HardPermutation(tuple(int(x) for x in arr)).matrix(size)
    if arr.shape != (size, size):
        raise ValueError(f"alignment shape {arr.shape} != ({size},{size})")
    return arr


def _substitution_matrix(pair: PaddedPair) -> np.ndarray | None:
    """M[u,u'] = and(eta, eta') * ||L[u,:] - L'[u',:]||_1, or None if unlabeled."""
    if pair.labels_src is None or pair.labels_tgt is None:
        return None
    diff = np.abs(pair.labels_src[:, None, :] - pair.labels_tgt[None, :, :]).sum(axis=2)
    gate = pair.eta_src[:, None] * pair.eta_tgt[None, :]
    return gate * diff


def qap_cost(pair: PaddedPair, alignment, costs: CostConfig) -> float:
    """Edit cost of the pair under a hard or doubly-stochastic alignment."""
    p = _as_matrix(alignment, pair.size)
    if not np.all(np.isfinite(p)):
        raise ValueError("alignment has non-finite entries")
    aligned_adj = p @ pair.adj_tgt @ p.T
    aligned_eta = p @ pair.eta_tgt
    edge_del = np.maximum(pair.adj_src - aligned_adj, 0.0).sum()
    edge_add = np.maximum(aligned_adj - pair.adj_src, 0.0).sum()
    node_del = np.maximum(pair.eta_src - aligned_eta, 0.0).sum()
    node_add = np.maximum(aligned_eta - pair.eta_src, 0.0).sum()
    value = (
        costs.edge_del / 2.0 * edge_del
        + costs.edge_add / 2.0 * edge_add
        + costs.node_del * node_del
        + costs.node_add * node_add
    )
    if costs.node_sub > 0:
        sub = _substitution_matrix(pair)
        if sub is None:
            raise ValueError("substitution cost requires labeled graphs")
        value += costs.node_sub * float((sub * p).sum())
    return float(value)


def qap_cost_max_form(pair: PaddedPair, alignment, costs: CostConfig) -> float:
    """Equivalent edit cost via elementwise maxima minus size constants.

    relu(c - d) = max(c, d) - d turns each rectified term into a max term:

      (edge_add+edge_del)/2 * ||max(A, P A' P^T)||_1 - edge_del*|E'| - edge_add*|E|
      + (node_add+node_del) * ||max(eta, P eta')||_1 - node_del*|V'| - node_add*|V|

    The node max term carries no 1/2: adjacency counts each edge twice, the
    validity vector counts each node once. Agrees with ``qap_cost`` to within
    1e-9 for every alignment and cost setting.
    """
    p = _as_matrix(alignment, pair.size)
    aligned_adj = p @ pair.adj_tgt @ p.T
    aligned_eta = p @ pair.eta_tgt
    edge_term = np.maximum(pair.adj_src, aligned_adj).sum()
    node_term = np.maximum(pair.eta_src, aligned_eta).sum()
    value = (
        (costs.edge_add + costs.edge_del) / 2.0 * edge_term
        - costs.edge_del * pair.num_edges_tgt
        - costs.edge_add * pair.num_edges_src
        + (costs.node_add + costs.node_del) * node_term
        - costs.node_del * pair.num_nodes_tgt
        - costs.node_add * pair.num_nodes_src
    )
    if costs.node_sub > 0:
        sub = _substitution_matrix(pair)
        if sub is None:
            raise ValueError("substitution cost requires labeled graphs")
        value += costs.node_sub * float((sub * p).sum())
    return float(value)


def _term_counts(pair: PaddedPair, perms: np.ndarray):
    """Per-permutation raw term counts for a block of permutations.

    Returns (edge_del, edge_add, node_del, node_add, overlap, sub) where
    overlap is ||min(A, P A' P^T)||_1 and sub is the substitution sum
    (zeros when the pair is unlabeled).
    """
    n = pair.size
    adj_src = pair.adj_src.astype(np.int8)
    adj_tgt = pair.adj_tgt.astype(np.int8)
    # aligned[b, u, v] = A'[perm_b(u), perm_b(v)]
    aligned = _aligned_cache.get(adj_tgt, perms)
    diff = adj_src[None, :, :] - aligned
    edge_del = np.maximum(diff, 0).sum(axis=(1, 2), dtype=np.int64)
    edge_add = np.maximum(-diff, 0).sum(axis=(1, 2), dtype=np.int64)
    overlap = np.minimum(adj_src[None, :, :], aligned).sum(axis=(1, 2), dtype=np.int64)

    aligned_eta = pair.eta_tgt.astype(np.int8)[perms]
    ndiff = pair.eta_src.astype(np.int8)[None, :] - aligned_eta
    node_del = np.maximum(ndiff, 0).sum(axis=1, dtype=np.int64)
    node_add = np.maximum(-ndiff, 0).sum(axis=1, dtype=np.int64)

    sub_matrix = _substitution_matrix(pair)
    if sub_matrix is None:
        sub = np.zeros(perms.shape[0])
    else:
        rows = np.arange(n)[None, :]
        sub = sub_matrix[rows, perms].sum(axis=1)
    return edge_del, edge_add, node_del, node_add, overlap, sub


def _enumerate_values(pair: PaddedPair, costs: CostConfig) -> np.ndarray:
    """qap_cost of every permutation, in lexicographic permutation order."""
    perms = all_permutations(pair.size)
    edge_del, edge_add, node_del, node_add, _, sub = _term_counts(pair, perms)
    values = (
        costs.edge_del / 2.0 * edge_del
        + costs.edge_add / 2.0 * edge_add
        + costs.node_del * node_del
        + costs.node_add * node_add
    )
    if costs.node_sub > 0:
        if pair.labels_src is None:
            raise ValueError("substitution cost requires labeled graphs")
        values = values + costs.node_sub * sub
    return values


def _exact_by_enumeration(pair: PaddedPair, costs: CostConfig) -> ExactResult:
    values = _enumerate_values(pair, costs)
    best = int(np.argmin(values))  # argmin takes the first = lexicographically smallest
    perm = tuple(int(x) for x in all_permutations(pair.size)[best])
    return ExactResult(float(values[best]), HardPermutation(perm), values.shape[0])


def _exact_by_branch_and_bound(pair: PaddedPair, costs: CostConfig) -> ExactResult:
    """Depth-first search over prefix assignments with an assignment bound.

    The bound adds the exact cost of the assigned prefix to an optimal linear
    assignment of the remaining nodes under their node-edit (and substitution)
    costs; remaining edge terms are nonnegative, so the bound is admissible.
    Children are explored in lexicographic order and the incumbent only
    replaced on strict improvement, which makes the final argmin the
    lexicographically smallest optimal permutation.
    """
    n = pair.size
    adj_src = pair.adj_src
    adj_tgt = pair.adj_tgt
    node_cost = costs.node_del * np.maximum(
        pair.eta_src[:, None] - pair.eta_tgt[None, :], 0.0
    ) + costs.node_add * np.maximum(pair.eta_tgt[None, :] - pair.eta_src[:, None], 0.0)
    sub_matrix = _substitution_matrix(pair)
    if costs.node_sub > 0:
        if sub_matrix is None:
            raise ValueError("substitution cost requires labeled graphs")
        node_cost = node_cost + costs.node_sub * sub_matrix

    best_value = np.inf
    best_perm: list | None = None
    explored = 0
    assignment = [-1] * n
    used = [False] * n

    def remainder_bound(depth: int) -> float:
        free = [j for j in range(n) if not used[j]]
        if not free:
            return 0.0
        block = node_cost[np.ix_(range(depth, n), free)]
        rows, cols = linear_sum_assignment(block)
        return float(block[rows, cols].sum())

    def edge_increment(depth: int, j: int) -> float:
        inc = 0.0
        for i in range(depth):
            a = adj_src[i, depth]
            b = adj_tgt[assignment[i], j]
            if a > b:
                inc += costs.edge_del * (a - b)
            elif b > a:
                inc += costs.edge_add * (b - a)
        return inc

    def descend(depth: int, prefix_cost: float):
        nonlocal best_value, best_perm, explored
        explored += 1
        if depth == n:
            if prefix_cost < best_value - _TIE_EPS:
                best_value = prefix_cost
                best_perm = assignment.copy()
            return
        for j in range(n):
            if used[j]:
                continue
            child = prefix_cost + node_cost[depth, j] + edge_increment(depth, j)
            used[j] = True
            assignment[depth] = j
            if child + remainder_bound(depth + 1) <= best_value + _TIE_EPS:
                descend(depth + 1, child)
            assignment[depth] = -1
            used[j] = False

    descend(0, 0.0)
    assert best_perm is not None
    return ExactResult(best_value, HardPermutation(tuple(best_perm)), explored)


def exact_ged(
    pair: PaddedPair,
    costs: CostConfig,
    *,
    max_nodes: int = DEFAULT_ENUMERATION_BOUND,
    branch_and_bound: bool = False,
) -> ExactResult:
    """Minimum edit cost over all hard permutations, with its argmin.

    Ties between optimal permutations break to the lexicographically
    smallest. Instances above ``max_nodes`` are rejected unless
    ``branch_and_bound`` is set, which extends the reach to about 12 nodes.
    """
    if pair.size > max_nodes and not branch_and_bound:
        raise CapabilityError(
            f"size {pair.size} exceeds enumeration bound {max_nodes}; "
            "enable branch_and_bound for larger instances"
        )
    if branch_and_bound:
        if pair.size > BRANCH_AND_BOUND_LIMIT:
            raise CapabilityError(
                f"size {pair.size} exceeds branch-and-bound limit "
                f"{BRANCH_AND_BOUND_LIMIT}"
            )
        return _exact_by_branch_and_bound(pair, costs)
    return _exact_by_enumeration(pair, costs)


def verify_transpose_optimality(
    pair: PaddedPair, costs: CostConfig, *, max_nodes: int = DEFAULT_ENUMERATION_BOUND
) -> bool:
    """True iff the transposed forward argmin is optimal for the reversed pair."""
    forward = exact_ged(pair, costs, max_nodes=max_nodes)
    reversed_pair = pair.reversed()
    backward = exact_ged(reversed_pair, costs, max_nodes=max_nodes)
    transposed = qap_cost(reversed_pair, forward.argmin.inverse(), costs)
    return abs(transposed - backward.value) <= _TIE_EPS


_SUBGRAPH_EPS = 1e-6


def matching_limits(
    pair: PaddedPair, *, max_nodes: int = DEFAULT_ENUMERATION_BOUND
) -> MatchingLimits:
    """Isomorphism, subgraph-isomorphism, and common-edge-subgraph readouts.

    - isomorphic: unit-cost edit distance is zero.
    - subgraph_isomorphic: with free nodes, unit edge deletion, and edge
      addition fixed at a tiny epsilon, the optimal alignment deletes no
      source edge (source embeds edge-wise into target).
    - mces_edges: |E| + |E'| - min_P ||max(A, P A' P^T)||_1 / 2, the edge
      count of a maximum common edge subgraph.
    """
    if pair.size > max_nodes:
        raise CapabilityError(
            f"size {pair.size} exceeds enumeration bound {max_nodes}"
        )
    unlabeled = PaddedPair(
        pair.size, pair.adj_src, pair.adj_tgt, pair.eta_src, pair.eta_tgt,
        pair.pads_src, pair.pads_tgt,
    )
    iso_value = exact_ged(unlabeled, CostConfig.uniform()).value
    isomorphic = abs(iso_value) <= _TIE_EPS

    perms = all_permutations(pair.size)
    edge_del, edge_add, _, _, overlap, _ = _term_counts(unlabeled, perms)

    sub_values = 1.0 * edge_del + _SUBGRAPH_EPS * edge_add
    sub_best = int(np.argmin(sub_values))
    subgraph_isomorphic = edge_del[sub_best] == 0.0

    max_norm = 2.0 * pair.num_edges_src + 2.0 * pair.num_edges_tgt - overlap
    mces = pair.num_edges_src + pair.num_edges_tgt - float(max_norm.min()) / 2.0
    return MatchingLimits(bool(isomorphic), bool(subgraph_isomorphic), int(round(mces)))
