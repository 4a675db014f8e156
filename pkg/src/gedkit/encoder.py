"""Message-passing node encoder, all-node-pair embeddings, and checkpoints.

The encoder runs K rounds of neighbor-summed messages through a two-layer
message network, updating node states with a gated recurrent cell. Messages
flow only over existing edges; padded nodes are held at zero and contribute
nothing. After the final round, every one of the C(N,2) node pairs (edges
and non-edges alike) gets an embedding from a decoupled pair network fed
with both endpoint states and the connectivity bit, symmetrized over the
two orientations. A separate small network maps node states to the space
where alignment costs are measured.

All forward passes are pure given the parameters; parameters are only
mutated by a training loop between batches.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .align import pair_index_tensor

CHECKPOINT_MAGIC = b"GEDKITCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    """Shapes of the encoder stack.

    ``pad_size`` fixes the padded node count the model is trained for (the
    alignment-cost network maps node states to that many dimensions).
    ``num_labels = 0`` means plain all-ones initial features; a positive
    value switches to one-hot label rows (zero-padded up to ``node_dim``).
    """

    pad_size: int
    layers: int = 5
    node_dim: int = 10
    pair_dim: int = 20
    num_labels: int = 0

    def __post_init__(self):
        if self.pad_size < 1 or self.layers < 1:
            raise ValueError("pad_size and layers must be positive")
        if self.num_labels > self.node_dim:
            raise ValueError(
                f"num_labels {self.num_labels} exceeds node_dim {self.node_dim}; "
                "one-hot initial features must fit the node state"
            )


class GedModel(nn.Module):
    """Encoder plus alignment-cost network, everything in double precision."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        d, out = config.node_dim, config.pair_dim
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.message_net = nn.Sequential(
                nn.Linear(2 * d, d), nn.ReLU(), nn.Linear(d, d)
            )
            self.update_cell = nn.GRUCell(d, d)
            self.pair_net = nn.Sequential(
                nn.Linear(2 * d + 1, out), nn.ReLU(), nn.Linear(out, out)
            )
            self.cost_net = nn.Sequential(
                nn.Linear(d, d), nn.ReLU(), nn.Linear(d, config.pad_size)
            )
        self.double()

    def check_finite(self) -> None:
        for name, param in self.named_parameters():
            if not torch.isfinite(param).all():
                raise ValueError(f"parameter {name} has non-finite entries")

    def initial_features(
        self, eta: torch.Tensor, labels: torch.Tensor | None
    ) -> torch.Tensor:
        d = self.config.node_dim
        if self.config.num_labels > 0:
            if labels is None:
                raise ValueError("model expects one-hot label features")
            if labels.shape[-1] > d:
                raise ValueError(
                    f"label vocabulary {labels.shape[-1]} exceeds node_dim {d}"
                )
            x0 = torch.zeros(*eta.shape, d, dtype=eta.dtype)
            x0[..., : labels.shape[-1]] = labels
        else:
            x0 = torch.ones(*eta.shape, d, dtype=eta.dtype)
        return x0 * eta.unsqueeze(-1)

    def node_embeddings(
        self,
        adj: torch.Tensor,
        eta: torch.Tensor,
        labels: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """(..., N, d) node states after K propagation rounds.

        Padded rows come out exactly zero. Relabeling nodes permutes the
        output rows the same way.
        """
        self.check_finite()
        d = self.config.node_dim
        x = self.initial_features(eta, labels)
        n = adj.shape[-1]
        mask = eta.unsqueeze(-1)
        for _ in range(self.config.layers):
            inputs = torch.cat(
                (
                    x.unsqueeze(-2).expand(*x.shape[:-1], n, d),
                    x.unsqueeze(-3).expand(*x.shape[:-2], n, n, d),
                ),
                dim=-1,
            )
            messages = self.message_net(inputs)
            summed = (adj.unsqueeze(-1) * messages).sum(dim=-2)
            x = self.update_cell(
                summed.reshape(-1, d), x.reshape(-1, d)
            ).reshape(x.shape)
            x = x * mask
        return x

    def pair_embeddings(self, x: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        """(..., C(N,2), D) embeddings for every node pair in canonical order.

        Each row is pair_net(x_u || x_v || A[u,v]) + pair_net(x_v || x_u || A[v,u]),
        so the orientation of the pair does not matter.
        """
        n = adj.shape[-1]
        pairs = pair_index_tensor(n)
        u, v = pairs[:, 0], pairs[:, 1]
        x_u = x[..., u, :]
        x_v = x[..., v, :]
        bits = adj[..., u, v].unsqueeze(-1)
        forward = self.pair_net(torch.cat((x_u, x_v, bits), dim=-1))
        backward = self.pair_net(torch.cat((x_v, x_u, bits), dim=-1))
        return forward + backward


# ---------------------------------------------------------------------------
# Checkpoints: magic + version, JSON header with config and per-tensor shape
# and byte extents, then raw little-endian float64 data. Round-trips are
# bit-exact.
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: GedModel, *, extra: dict | None = None) -> None:
    tensors = []
    payload = io.BytesIO()
    offset = 0
    for name, param in model.state_dict().items():
        data = param.detach().numpy().astype("<f8", copy=False)
        raw = data.tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(data.shape),
                "dtype": "<f8",
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payload.write(raw)
        offset += len(raw)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "tensors": tensors,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(payload.getvalue())


def load_checkpoint(path) -> GedModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {header.get('version')} "
                f"!= supported {CHECKPOINT_VERSION}"
            )
        payload = fh.read()
    config = ModelConfig(**header["config"])
    model = GedModel(config)
    state = {}
    for spec in header["tensors"]:
        start, nbytes = spec["offset"], spec["nbytes"]
        arr = np.frombuffer(payload[start : start + nbytes], dtype=spec["dtype"])
        state[spec["name"]] = torch.from_numpy(
            arr.reshape(spec["shape"]).copy()
        )
    missing = set(model.state_dict()) ^ set(state)
    if missing:
        raise CheckpointError(f"{path}: tensor set mismatch: {sorted(missing)}")
    model.load_state_dict(state)
    return model


def checkpoint_extra(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
    return header.get("extra", {})


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

def grad_check(
    fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    *,
    step: float = 1e-5,
    resample: Callable[[int], None] | None = None,
    max_resamples: int = 3,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``fn`` must re-evaluate the scalar objective from the current parameter
    values each call. The relative error of each component is measured
    against the larger of the two gradients, floored well above the
    finite-difference noise. Objectives built from L1-style pieces are only
    piecewise smooth; if a kink is suspected (error stays large) and a
    ``resample`` callback is given, the inputs are redrawn and the check
    rerun, and the smallest observed error is reported.
    """
    attempt = 0
    best = np.inf
    while True:
        err = _grad_check_once(fn, params, step)
        best = min(best, err)
        if err < 1e-4 or resample is None or attempt >= max_resamples:
            return best
        attempt += 1
        resample(attempt)


def _grad_check_once(fn, params, step) -> float:
    value = fn()
    analytic = torch.autograd.grad(value, params, allow_unused=True)
    analytic = [
        torch.zeros_like(p) if g is None else g.detach().clone()
        for p, g in zip(params, analytic)
    ]
    grad_scale = max(float(g.abs().max()) for g in analytic) if analytic else 1.0
    floor = max(1e-6, 1e-4 * max(1.0, grad_scale))

    worst = 0.0
    with torch.no_grad():
        for param, grad in zip(params, analytic):
            flat = param.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                upper = float(fn())
                flat[i] = original - step
                lower = float(fn())
                flat[i] = original
                numeric = (upper - lower) / (2 * step)
                a = float(gflat[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, rel)
    return worst
