"""Differentiable alignment generation and hard rounding.

Soft node alignments come from Sinkhorn normalization of exp(-C/tau) for a
learned node-cost matrix C; the node-pair alignment is derived from the node
alignment so that pair matches can never contradict node matches. Rounding
to a hard permutation uses a maximum linear assignment.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .exact import HardPermutation
from .graphs import pair_array

_ROUND_EPS = 1e-9


@lru_cache(maxsize=None)
def pair_index_tensor(size: int) -> torch.Tensor:
    """(C(size,2), 2) long tensor of pairs (u, v) in canonical order."""
    return torch.from_numpy(pair_array(size).copy())


@dataclass(frozen=True)
class SoftAlignment:
    """Doubly-stochastic (up to iteration tolerance) node alignment."""

    matrix: torch.Tensor
    tau: float
    iterations: int


@dataclass(frozen=True)
class PairAlignment:
    """Node-pair alignment derived from a node alignment."""

    matrix: torch.Tensor


def sinkhorn_matrix(
    cost: torch.Tensor,
    tau: float,
    iterations: int,
    *,
    log_space: bool = True,
    noise: float = 0.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Alternating row/column normalization of exp(-cost/tau).

    Each iteration normalizes rows to sum 1, then columns to sum 1. The
    log-space path (default) runs the same recursion on logits with
    log-sum-exp normalizations, which survives the severe underflow of
    exp(-cost/tau) at small temperatures; both paths agree to ~1e-9 where
    the direct path stays finite. ``noise > 0`` adds scaled Gumbel noise to
    the logits before normalizing (off by default, and off in every
    acceptance setting). Supports a leading batch dimension.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if not torch.isfinite(cost).all():
        raise ValueError("cost matrix has non-finite entries")

    logits = -cost / tau
    if noise > 0.0:
        uniform = torch.rand(cost.shape, generator=generator, dtype=cost.dtype)
        gumbel = -torch.log(-torch.log(uniform.clamp_min(1e-20)).clamp_min(1e-20))
        logits = logits + noise * gumbel / tau

    if log_space:
        log_p = logits
        for _ in range(iterations):
            log_p = log_p - torch.logsumexp(log_p, dim=-1, keepdim=True)
            log_p = log_p - torch.logsumexp(log_p, dim=-2, keepdim=True)
        return torch.exp(log_p)

    p = torch.exp(logits)
    for _ in range(iterations):
        p = p / p.sum(dim=-1, keepdim=True)
        p = p / p.sum(dim=-2, keepdim=True)
    return p


def sinkhorn(
    cost: torch.Tensor,
    tau: float,
    iterations: int,
    *,
    log_space: bool = True,
    noise: float = 0.0,
    generator: torch.Generator | None = None,
) -> SoftAlignment:
    matrix = sinkhorn_matrix(
        cost, tau, iterations, log_space=log_space, noise=noise, generator=generator
    )
    return SoftAlignment(matrix, tau, iterations)


def build_node_cost(
    x_src: torch.Tensor, x_tgt: torch.Tensor, cost_net
) -> torch.Tensor:
    """C[u, u'] = || net(x_src[u]) - net(x_tgt[u']) ||_1.

    Symmetric in argument swap: build_node_cost(x_tgt, x_src) is the
    transpose, which is what makes transposed alignments consistent between
    the two directions of a pair. Supports a leading batch dimension.
    """
    if x_src.shape[-1] != x_tgt.shape[-1]:
        raise ValueError(
            f"embedding dims differ: {x_src.shape[-1]} vs {x_tgt.shape[-1]}"
        )
    if not (torch.isfinite(x_src).all() and torch.isfinite(x_tgt).all()):
        raise ValueError("embeddings have non-finite entries")
    z_src = cost_net(x_src)
    z_tgt = cost_net(x_tgt)
    return (z_src.unsqueeze(-2) - z_tgt.unsqueeze(-3)).abs().sum(dim=-1)


def derive_pair_alignment(p: torch.Tensor, size: int) -> torch.Tensor:
    """Node-pair alignment S from node alignment P.

    S[(u,v), (u',v')] = P[u,u']P[v,v'] + P[u,v']P[v,u'], rows and columns in
    canonical pair order. A hard P yields a hard permutation of pairs.
    Supports a leading batch dimension.
    """
    if isinstance(p, SoftAlignment):
        p = p.matrix
    pairs = pair_index_tensor(size)
    u, v = pairs[:, 0], pairs[:, 1]
    p_uu = p[..., u, :][..., :, u]
    p_vv = p[..., v, :][..., :, v]
    p_uv = p[..., u, :][..., :, v]
    p_vu = p[..., v, :][..., :, u]
    return p_uu * p_vv + p_uv * p_vu


def hungarian_round(matrix) -> HardPermutation:
    """Hard permutation maximizing sum_i M[i, perm(i)], ties lexicographic.

    The optimum value comes from a linear assignment solve; the permutation
    is then rebuilt greedily, fixing each row to the smallest column that
    still allows the optimum, so equal-value optima resolve to the
    lexicographically smallest permutation.
    """
    m = np.asarray(
        matrix.detach().numpy() if isinstance(matrix, torch.Tensor) else matrix,
        dtype=np.float64,
    )
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    n = m.shape[0]
    rows, cols = linear_sum_assignment(m, maximize=True)
    optimum = float(m[rows, cols].sum())

    tol = _ROUND_EPS * max(1.0, np.abs(m).max()) * n
    perm: list[int] = []
    free = list(range(n))
    fixed = 0.0
    for i in range(n):
        for j in free:
            rest = 0.0
            remaining = [c for c in free if c != j]
            if i + 1 < n:
                block = m[np.ix_(range(i + 1, n), remaining)]
                r, c = linear_sum_assignment(block, maximize=True)
                rest = float(block[r, c].sum())
            if fixed + m[i, j] + rest >= optimum - tol:
                perm.append(j)
                fixed += m[i, j]
                free.remove(j)
                break
        else:  # numerically unreachable: some column always attains the optimum
            j = free.pop(0)
            perm.append(j)
            fixed += m[i, j]
    return HardPermutation(tuple(perm))
