"""Set-divergence edit-cost surrogates and the cost-weighted score.

Each of the four structural edit terms is replaced by a divergence between
embedding sets computed under a soft alignment. Three families per term:

- align_diff: align the target set first, then take rectified differences
  against the source set.
- diff_align: take rectified differences between every source/target row
  pair first, then weight them by the alignment.
- xor_diff_align: diff_align with each row pair gated by whether exactly
  one side is an edge (for pair terms) or exactly one side is an original
  node (for node terms), so matched edge-to-edge and non-edge-to-non-edge
  rows contribute nothing.

For any doubly-stochastic alignment, align_diff <= diff_align, with
equality when the alignment is hard. Two alternates replace the whole sum:
a max-form score (``max``) and its or-gated variant (``max_or``), both of
which subtract size constants and may go negative early in training; they
are left unclamped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .align import build_node_cost, derive_pair_alignment, pair_index_tensor, sinkhorn_matrix
from .encoder import GedModel
from .graphs import CostConfig, PaddedPair, and_gate, or_gate, xor_gate

ALIGN_DIFF = "align_diff"
DIFF_ALIGN = "diff_align"
XOR_DIFF_ALIGN = "xor_diff_align"
SURROGATE_KINDS = (ALIGN_DIFF, DIFF_ALIGN, XOR_DIFF_ALIGN)

MAX = "max"
MAX_OR = "max_or"
ALTERNATES = (MAX, MAX_OR)

_DIRECTIONS = ("del", "add")
_CHUNK_ROWS = 96


@dataclass(frozen=True)
class SurrogateChoice:
    """Which divergence family each term uses, or an alternate whole-score."""

    edge: str | None = XOR_DIFF_ALIGN
    node: str | None = XOR_DIFF_ALIGN
    alternate: str | None = None

    def __post_init__(self):
        if self.alternate is not None:
            if self.alternate not in ALTERNATES:
                raise ValueError(f"unknown alternate {self.alternate!r}")
            if self.edge is not None or self.node is not None:
                raise ValueError("alternate scores replace the edge/node terms")
        else:
            if self.edge not in SURROGATE_KINDS:
                raise ValueError(f"unknown edge surrogate {self.edge!r}")
            if self.node not in SURROGATE_KINDS:
                raise ValueError(f"unknown node surrogate {self.node!r}")

    @classmethod
    def from_string(cls, text: str) -> "SurrogateChoice":
        """Parse ``edge:<kind>,node:<kind>``, ``max``, or ``max-or``."""
        spec = text.strip().lower().replace("-", "_")
        if spec in ALTERNATES:
            return cls(edge=None, node=None, alternate=spec)
        parts = dict(
            item.split(":", 1) for item in spec.split(",") if ":" in item
        )
        if set(parts) != {"edge", "node"}:
            raise ValueError(
                f"choice {text!r} must be 'edge:<kind>,node:<kind>', 'max', or 'max-or'"
            )
        return cls(edge=parts["edge"], node=parts["node"])

    def to_string(self) -> str:
        if self.alternate is not None:
            return self.alternate
        return f"edge:{self.edge},node:{self.node}"


@dataclass
class PairBatch:
    """Dense tensors for a batch of padded pairs of one common size."""

    size: int
    adj_src: torch.Tensor
    adj_tgt: torch.Tensor
    eta_src: torch.Tensor
    eta_tgt: torch.Tensor
    labels_src: torch.Tensor | None = None
    labels_tgt: torch.Tensor | None = None

    @classmethod
    def from_pairs(cls, pairs: Sequence[PaddedPair]) -> "PairBatch":
        sizes = {p.size for p in pairs}
        if len(sizes) != 1:
            raise ValueError(f"pairs must share one padded size, got {sorted(sizes)}")
        size = sizes.pop()

        def stack(rows):
            return torch.from_numpy(np.stack([np.asarray(r) for r in rows])).double()

        labeled = all(p.labels_src is not None for p in pairs)
        return cls(
            size,
            stack([p.adj_src for p in pairs]),
            stack([p.adj_tgt for p in pairs]),
            stack([p.eta_src for p in pairs]),
            stack([p.eta_tgt for p in pairs]),
            stack([p.labels_src for p in pairs]) if labeled else None,
            stack([p.labels_tgt for p in pairs]) if labeled else None,
        )

    def __len__(self) -> int:
        return self.adj_src.shape[0]

    def select(self, idx) -> "PairBatch":
        return PairBatch(
            self.size,
            self.adj_src[idx],
            self.adj_tgt[idx],
            self.eta_src[idx],
            self.eta_tgt[idx],
            None if self.labels_src is None else self.labels_src[idx],
            None if self.labels_tgt is None else self.labels_tgt[idx],
        )


def pair_bits(adj: torch.Tensor, size: int) -> torch.Tensor:
    """Adjacency bit of each canonical node pair: (..., C(size,2))."""
    pairs = pair_index_tensor(size)
    return adj[..., pairs[:, 0], pairs[:, 1]]


def _check_direction(direction: str) -> None:
    if direction not in _DIRECTIONS:
        raise ValueError(f"direction must be 'del' or 'add', got {direction!r}")


def _rect_table(src: torch.Tensor, tgt: torch.Tensor, direction: str) -> torch.Tensor:
    """out[..., i, j] = ||relu(src[i] - tgt[j])||_1 ('del') or the reverse ('add').

    Chunked over source rows to bound the (rows x cols x dim) intermediate.
    """
    rows = src.shape[-2]
    if rows <= _CHUNK_ROWS:
        return _rect_block(src, tgt, direction)
    blocks = [
        _rect_block(src[..., i : i + _CHUNK_ROWS, :], tgt, direction)
        for i in range(0, rows, _CHUNK_ROWS)
    ]
    return torch.cat(blocks, dim=-2)


def _rect_block(src, tgt, direction):
    if direction == "del":
        diff = src.unsqueeze(-2) - tgt.unsqueeze(-3)
    else:
        diff = tgt.unsqueeze(-3) - src.unsqueeze(-2)
    return torch.relu(diff).sum(dim=-1)


def _divergence(values_src, values_tgt, alignment, gate, kind, direction):
    _check_direction(direction)
    if kind == ALIGN_DIFF:
        aligned = alignment @ values_tgt
        if direction == "del":
            return torch.relu(values_src - aligned).sum(dim=(-1, -2))
        return torch.relu(aligned - values_src).sum(dim=(-1, -2))
    if kind == DIFF_ALIGN:
        table = _rect_table(values_src, values_tgt, direction)
        return (table * alignment).sum(dim=(-1, -2))
    if kind == XOR_DIFF_ALIGN:
        table = _rect_table(values_src, values_tgt, direction)
        return (gate * table * alignment).sum(dim=(-1, -2))
    raise ValueError(f"unknown surrogate kind {kind!r}")


def edge_divergence(
    e_src: torch.Tensor,
    e_tgt: torch.Tensor,
    s: torch.Tensor,
    adj_src: torch.Tensor,
    adj_tgt: torch.Tensor,
    kind: str,
    direction: str,
) -> torch.Tensor:
    """One edge-edit divergence term over all node pairs.

    ``s`` is the node-pair alignment; the xor variant gates row pairs by
    xor(A[u,v], A'[u',v']).
    """
    if e_src.shape != e_tgt.shape:
        raise ValueError(f"pair embedding shapes differ: {e_src.shape} vs {e_tgt.shape}")
    size = adj_src.shape[-1]
    gate = None
    if kind == XOR_DIFF_ALIGN:
        bits_src = pair_bits(adj_src, size)
        bits_tgt = pair_bits(adj_tgt, size)
        gate = xor_gate(bits_src.unsqueeze(-1), bits_tgt.unsqueeze(-2))
    return _divergence(e_src, e_tgt, s, gate, kind, direction)


def node_divergence(
    x_src: torch.Tensor,
    x_tgt: torch.Tensor,
    p: torch.Tensor,
    eta_src: torch.Tensor,
    eta_tgt: torch.Tensor,
    kind: str,
    direction: str,
) -> torch.Tensor:
    """One node-edit divergence term; xor variant gates by xor(eta, eta')."""
    if x_src.shape != x_tgt.shape:
        raise ValueError(f"node embedding shapes differ: {x_src.shape} vs {x_tgt.shape}")
    gate = None
    if kind == XOR_DIFF_ALIGN:
        gate = xor_gate(eta_src.unsqueeze(-1), eta_tgt.unsqueeze(-2))
    return _divergence(x_src, x_tgt, p, gate, kind, direction)


def substitution_divergence(
    l_src: torch.Tensor,
    l_tgt: torch.Tensor,
    p: torch.Tensor,
    eta_src: torch.Tensor,
    eta_tgt: torch.Tensor,
) -> torch.Tensor:
    """sum_{u,u'} and(eta[u], eta'[u']) * ||L[u,:] - L'[u',:]||_1 * P[u,u'].

    Only pairings of two original nodes contribute; one-hot rows make each
    label mismatch count 2.
    """
    if l_src.shape[-1] != l_tgt.shape[-1]:
        raise ValueError(
            f"label vocabularies differ: {l_src.shape[-1]} vs {l_tgt.shape[-1]}"
        )
    diff = (l_src.unsqueeze(-2) - l_tgt.unsqueeze(-3)).abs().sum(dim=-1)
    gate = and_gate(eta_src.unsqueeze(-1), eta_tgt.unsqueeze(-2))
    return (gate * diff * p).sum(dim=(-1, -2))


def _max_table(src, tgt):
    """out[..., i, j] = ||max(src[i], tgt[j])||_1, chunked over source rows."""
    rows = src.shape[-2]
    blocks = []
    for i in range(0, rows, _CHUNK_ROWS):
        chunk = torch.maximum(
            src[..., i : i + _CHUNK_ROWS, :].unsqueeze(-2), tgt.unsqueeze(-3)
        )
        blocks.append(chunk.abs().sum(dim=-1))
    return torch.cat(blocks, dim=-2)


def alternate_ged_score(
    e_src: torch.Tensor,
    e_tgt: torch.Tensor,
    s: torch.Tensor,
    x_src: torch.Tensor,
    x_tgt: torch.Tensor,
    p: torch.Tensor,
    adj_src: torch.Tensor,
    adj_tgt: torch.Tensor,
    eta_src: torch.Tensor,
    eta_tgt: torch.Tensor,
    costs: CostConfig,
    which: str,
) -> torch.Tensor:
    """Whole-score alternates built on elementwise maxima.

    max:    (edge_add+edge_del)/2 * ||max(E, S E')||_1 - edge_del|E'| - edge_add|E|
          + (node_add+node_del)/2 * ||max(X, P X')||_1 - node_del|V'| - node_add|V|

    max_or: the same mass computed pairwise, with each (pair, pair') term
    gated by or(A[u,v], A'[u',v']) and weighted by S, and each (node, node')
    term gated by or(eta[u], eta'[u']) and weighted by P, so rows matching a
    non-edge to a non-edge (or a pad to a pad) contribute nothing.

    The subtracted size constants count original (unpadded) nodes and edges,
    so early-training outputs can be negative; no clamping is applied.
    """
    if which not in ALTERNATES:
        raise ValueError(f"unknown alternate {which!r}")
    size = adj_src.shape[-1]
    n_src = eta_src.sum(dim=-1)
    n_tgt = eta_tgt.sum(dim=-1)
    m_src = adj_src.sum(dim=(-1, -2)) / 2.0
    m_tgt = adj_tgt.sum(dim=(-1, -2)) / 2.0

    if which == MAX:
        edge_mass = torch.maximum(e_src, s @ e_tgt).abs().sum(dim=(-1, -2))
        node_mass = torch.maximum(x_src, p @ x_tgt).abs().sum(dim=(-1, -2))
    else:
        bits_src = pair_bits(adj_src, size)
        bits_tgt = pair_bits(adj_tgt, size)
        edge_gate = or_gate(bits_src.unsqueeze(-1), bits_tgt.unsqueeze(-2))
        node_gate = or_gate(eta_src.unsqueeze(-1), eta_tgt.unsqueeze(-2))
        edge_mass = (edge_gate * _max_table(e_src, e_tgt) * s).sum(dim=(-1, -2))
        node_mass = (node_gate * _max_table(x_src, x_tgt) * p).sum(dim=(-1, -2))

    return (
        (costs.edge_add + costs.edge_del) / 2.0 * edge_mass
        - costs.edge_del * m_tgt
        - costs.edge_add * m_src
        + (costs.node_add + costs.node_del) / 2.0 * node_mass
        - costs.node_del * n_tgt
        - costs.node_add * n_src
    )


def score_batch(
    batch: PairBatch,
    model: GedModel,
    costs: CostConfig,
    choice: SurrogateChoice,
    *,
    tau: float = 0.01,
    iterations: int = 20,
    noise: float = 0.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Predicted edit distances for a batch of padded pairs: (B,).

    Runs the encoder on both sides, generates the soft node and node-pair
    alignments, and combines the divergence terms with their costs. The
    edge terms iterate each unordered pair once, so no halving applies.
    """
    if costs.node_sub > 0 and batch.labels_src is None:
        raise ValueError("substitution cost requires label tensors in the batch")
    if model.config.pad_size != batch.size:
        raise ValueError(
            f"model pad_size {model.config.pad_size} != batch size {batch.size}"
        )
    x_src = model.node_embeddings(batch.adj_src, batch.eta_src, batch.labels_src)
    x_tgt = model.node_embeddings(batch.adj_tgt, batch.eta_tgt, batch.labels_tgt)
    e_src = model.pair_embeddings(x_src, batch.adj_src)
    e_tgt = model.pair_embeddings(x_tgt, batch.adj_tgt)
    cost_matrix = build_node_cost(x_src, x_tgt, model.cost_net)
    p = sinkhorn_matrix(
        cost_matrix, tau, iterations, noise=noise, generator=generator
    )
    s = derive_pair_alignment(p, batch.size)

    if choice.alternate is not None:
        score = alternate_ged_score(
            e_src, e_tgt, s, x_src, x_tgt, p,
            batch.adj_src, batch.adj_tgt, batch.eta_src, batch.eta_tgt,
            costs, choice.alternate,
        )
    else:
        score = (
            costs.edge_del
            * edge_divergence(e_src, e_tgt, s, batch.adj_src, batch.adj_tgt, choice.edge, "del")
            + costs.edge_add
            * edge_divergence(e_src, e_tgt, s, batch.adj_src, batch.adj_tgt, choice.edge, "add")
            + costs.node_del
            * node_divergence(x_src, x_tgt, p, batch.eta_src, batch.eta_tgt, choice.node, "del")
            + costs.node_add
            * node_divergence(x_src, x_tgt, p, batch.eta_src, batch.eta_tgt, choice.node, "add")
        )
    if costs.node_sub > 0:
        score = score + costs.node_sub * substitution_divergence(
            batch.labels_src, batch.labels_tgt, p, batch.eta_src, batch.eta_tgt
        )
    return score


def ged_score(
    pair: PaddedPair,
    model: GedModel,
    costs: CostConfig,
    choice: SurrogateChoice,
    *,
    tau: float = 0.01,
    iterations: int = 20,
) -> float:
    """Predicted edit distance of a single padded pair."""
    batch = PairBatch.from_pairs([pair])
    with torch.no_grad():
        return float(
            score_batch(batch, model, costs, choice, tau=tau, iterations=iterations)[0]
        )


def pooled_embedding(x: torch.Tensor) -> torch.Tensor:
    """Sum-pool node states into one graph-level vector (pads are zero rows)."""
    return x.sum(dim=-2)


def graph_level_score(
    g_src: torch.Tensor, g_tgt: torch.Tensor, costs: CostConfig
) -> torch.Tensor:
    """Cost-guided asymmetric distance on pooled graph-level embeddings.

    Reference scorer for embedding-distance models:
    (node_del+edge_del)/2 * ||relu(g - g')||_1 + (node_add+edge_add)/2 * ||relu(g' - g)||_1.
    """
    return (costs.node_del + costs.edge_del) / 2.0 * torch.relu(g_src - g_tgt).sum(
        dim=-1
    ) + (costs.node_add + costs.edge_add) / 2.0 * torch.relu(g_tgt - g_src).sum(dim=-1)
