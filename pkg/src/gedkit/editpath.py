"""Edit-script extraction from alignments, replay, and costing.

A hard node permutation fully determines an edit script for a padded pair:
padded source slots matched to original target nodes become node additions,
original source nodes matched to padded target slots become node deletions,
and every canonical source pair whose adjacency bit disagrees with its
aligned target pair becomes an edge addition or deletion. Scripts are
ordered node additions first, then edge edits, then node deletions, so
every operation references live nodes when it runs.

Operands are in source coordinates: an added node occupies the padded
source slot that was matched to the target node it realizes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import torch

from .align import hungarian_round
from .exact import HardPermutation
from .graphs import CostConfig, FormatError, Graph, PaddedPair, pair_array


class EditReplayError(ValueError):
    """Edit operation invalid against the graph state it is applied to."""


class EditKind(str, Enum):
    ADD_NODE = "add_node"
    DEL_NODE = "del_node"
    ADD_EDGE = "add_edge"
    DEL_EDGE = "del_edge"


@dataclass(frozen=True)
class EditOp:
    kind: EditKind
    operands: tuple

    def __post_init__(self):
        expected = 1 if self.kind in (EditKind.ADD_NODE, EditKind.DEL_NODE) else 2
        if len(self.operands) != expected:
            raise ValueError(f"{self.kind.value} takes {expected} operand(s)")
        object.__setattr__(self, "operands", tuple(int(x) for x in self.operands))


@dataclass(frozen=True)
class EditPath:
    ops: tuple
    total_cost: float

    def __len__(self) -> int:
        return len(self.ops)


_OP_COST_FIELD = {
    EditKind.ADD_NODE: "node_add",
    EditKind.DEL_NODE: "node_del",
    EditKind.ADD_EDGE: "edge_add",
    EditKind.DEL_EDGE: "edge_del",
}


def path_cost(ops: Iterable[EditOp] | EditPath, costs: CostConfig) -> float:
    if isinstance(ops, EditPath):
        ops = ops.ops
    return float(sum(getattr(costs, _OP_COST_FIELD[op.kind]) for op in ops))


def _as_hard_permutation(alignment, size: int) -> HardPermutation:
    if isinstance(alignment, HardPermutation):
        return alignment
    if isinstance(alignment, torch.Tensor):
        alignment = alignment.detach().numpy()
    arr = np.asarray(alignment, dtype=np.float64)
    if arr.ndim == 1:
        return HardPermutation(tuple(int(x) for x in arr))
    if arr.shape != (size, size):
        raise ValueError(f"alignment shape {arr.shape} != ({size},{size})")
    return hungarian_round(arr)


def extract_edit_path(pair: PaddedPair, alignment, costs: CostConfig) -> EditPath:
    """Edit script induced by an alignment (soft alignments are rounded).

    The node-pair matching is derived from the rounded node permutation, so
    no emitted edge edit can contradict the node mapping. The total cost of
    the script equals the assignment objective of the rounded permutation,
    hence it is an upper bound on the exact edit distance, tight when the
    rounded permutation is optimal.
    """
    perm = _as_hard_permutation(alignment, pair.size)
    mapping = perm.perm
    ops: list[EditOp] = []
    for u in range(pair.size):
        if pair.eta_src[u] == 0 and pair.eta_tgt[mapping[u]] == 1:
            ops.append(EditOp(EditKind.ADD_NODE, (u,)))
    for u, v in pair_array(pair.size):
        a = pair.adj_src[u, v]
        b = pair.adj_tgt[mapping[u], mapping[v]]
        if a == 0 and b == 1:
            ops.append(EditOp(EditKind.ADD_EDGE, (u, v)))
        elif a == 1 and b == 0:
            ops.append(EditOp(EditKind.DEL_EDGE, (u, v)))
    for u in range(pair.size):
        if pair.eta_src[u] == 1 and pair.eta_tgt[mapping[u]] == 0:
            ops.append(EditOp(EditKind.DEL_NODE, (u,)))
    ops_tuple = tuple(ops)
    return EditPath(ops_tuple, path_cost(ops_tuple, costs))


def apply_edit_path(graph: Graph, path: EditPath | Sequence[EditOp]) -> Graph:
    """Replay a script on a graph and return the edited graph.

    Node operands address slots: original nodes occupy 0..n-1 and additions
    activate higher slots. Invalid operations (touching dead slots,
    duplicate edges, deleting a node that still has edges) are rejected.
    The result is compacted back to dense node indices.
    """
    ops = path.ops if isinstance(path, EditPath) else tuple(path)
    alive = set(range(graph.num_nodes))
    edges = {tuple(sorted(e)) for e in graph.edges}
    top = graph.num_nodes
    for op in ops:
        if op.kind == EditKind.ADD_NODE:
            (slot,) = op.operands
            if slot in alive:
                raise EditReplayError(f"add_node {slot}: slot already active")
            alive.add(slot)
            top = max(top, slot + 1)
        elif op.kind == EditKind.DEL_NODE:
            (slot,) = op.operands
            if slot not in alive:
                raise EditReplayError(f"del_node {slot}: slot not active")
            if any(slot in e for e in edges):
                raise EditReplayError(f"del_node {slot}: node still has edges")
            alive.remove(slot)
        elif op.kind == EditKind.ADD_EDGE:
            u, v = op.operands
            if u not in alive or v not in alive:
                raise EditReplayError(f"add_edge ({u},{v}): endpoint not active")
            key = tuple(sorted((u, v)))
            if key in edges:
                raise EditReplayError(f"add_edge ({u},{v}): edge already present")
            edges.add(key)
        elif op.kind == EditKind.DEL_EDGE:
            u, v = op.operands
            key = tuple(sorted((u, v)))
            if key not in edges:
                raise EditReplayError(f"del_edge ({u},{v}): edge not present")
            edges.remove(key)
    compact = {slot: i for i, slot in enumerate(sorted(alive))}
    return Graph(
        len(alive),
        frozenset((compact[u], compact[v]) for u, v in edges),
    )


# ---------------------------------------------------------------------------
# Script files: one JSON object {kind, operands} per line, replayable.
# ---------------------------------------------------------------------------

def write_script(path, ops: Iterable[EditOp]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for op in ops:
            fh.write(
                json.dumps({"kind": op.kind.value, "operands": list(op.operands)})
            )
            fh.write("\n")


def read_script(path) -> tuple:
    ops = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                ops.append(EditOp(EditKind(record["kind"]), tuple(record["operands"])))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad edit record: {exc}") from exc
    return tuple(ops)
