"""Pair-dataset generation with exact labels, training, and evaluation.

Datasets are built by pairing every two corpus graphs (including self
pairs) after removing isomorphic duplicates, and labeling each ordered
pair with the exact solver. Training minimizes mean squared error between
predicted and exact distances with an adaptive first-order optimizer and
early stopping on validation error. Evaluation reports MSE and the rank
correlation over prediction/truth pairs.
"""
from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
import torch

from . import exact
from .divergence import PairBatch, SurrogateChoice, score_batch
from .encoder import GedModel, ModelConfig
from .exact import CapabilityError, exact_ged
from .graphs import CostConfig, Graph, graph_from_edges, pad_pair


class TrainingError(RuntimeError):
    """Training aborted on a non-finite loss.

    Carries the parameter state at failure and the offending batch index.
    """

    def __init__(self, message, *, state=None, epoch=None, batch_index=None):
        super().__init__(message)
        self.state = state
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass(frozen=True)
class LabeledPair:
    source: Graph
    target: Graph
    ged: float
    cost_id: str = ""


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.0005
    batch_size: int = 64
    tau: float = 0.01
    sinkhorn_iterations: int = 20
    layers: int = 5
    node_dim: int = 10
    pair_dim: int = 20
    pad_size: int | None = None
    num_labels: int = 0
    seed: int = 0
    max_epochs: int = 300
    patience: int = 100

    def __post_init__(self):
        for name in (
            "learning_rate", "batch_size", "tau", "sinkhorn_iterations",
            "layers", "node_dim", "pair_dim", "patience",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or self.max_epochs < 0:
            raise ValueError("weight_decay and max_epochs must be nonnegative")

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Synthetic corpora and isomorphism dedup
# ---------------------------------------------------------------------------

def synthetic_corpus(
    count: int,
    node_range: tuple = (5, 8),
    edge_prob: tuple = (0.3, 0.5),
    seed: int = 0,
) -> list:
    """Random graphs with uniform node counts and per-graph edge density.

    Isomorphic duplicates are kept; callers pairing the corpus should dedupe
    first (generate_pairs does).
    """
    rng = np.random.default_rng(seed)
    low, high = node_range
    graphs = []
    for _ in range(count):
        n = int(rng.integers(low, high + 1))
        p = float(rng.uniform(edge_prob[0], edge_prob[1]))
        edges = [
            (u, v)
            for u in range(n)
            for v in range(u + 1, n)
            if rng.random() < p
        ]
        graphs.append(graph_from_edges(n, edges))
    return graphs


@lru_cache(maxsize=32)
def _canonical_perms(n: int) -> np.ndarray:
    return exact.all_permutations(n)


def canonical_key(graph: Graph) -> bytes:
    """Isomorphism-invariant key: minimum relabeled adjacency (+ labels)."""
    n = graph.num_nodes
    if n == 0:
        return b""
    if n == 1:
        label = graph.labels[0] if graph.labels else 0
        return bytes([1]) + int(label).to_bytes(4, "little")
    perms = _canonical_perms(n)
    adj = graph.adjacency().astype(np.uint16)
    relabeled = adj[perms[:, :, None], perms[:, None, :]]
    iu = np.triu_indices(n, k=1)
    rows = relabeled[:, iu[0], iu[1]]
    if graph.labels is not None:
        labels = np.asarray(graph.labels, dtype=np.uint16)[perms]
        rows = np.concatenate([rows, labels], axis=1)
    smallest = rows[np.lexsort(rows.T[::-1])[0]]
    return bytes([n]) + smallest.tobytes()


def dedupe_isomorphic(graphs) -> list:
    """Keep the first representative of each isomorphism class."""
    seen = set()
    out = []
    for graph in graphs:
        key = canonical_key(graph)
        if key not in seen:
            seen.add(key)
            out.append(graph)
    return out


# ---------------------------------------------------------------------------
# Labeling
# ---------------------------------------------------------------------------

def _label_one(args) -> float:
    source, target, costs, max_nodes = args
    pair = pad_pair(source, target)
    return exact_ged(pair, costs, max_nodes=max_nodes).value


def generate_pairs(
    corpus,
    costs: CostConfig,
    *,
    cost_id: str = "",
    max_nodes: int = exact.DEFAULT_ENUMERATION_BOUND,
    workers: int = 1,
) -> list:
    """All index-ordered pairs (i <= j, self pairs included) with exact labels.

    Isomorphic corpus duplicates are dropped before pairing. Each pair is
    labeled at the smallest padding that fits it, which leaves the value
    unchanged and keeps enumeration cheap. Graphs over the solver bound are
    rejected up front, naming the offender.
    """
    for idx, graph in enumerate(corpus):
        if graph.num_nodes > max_nodes:
            raise CapabilityError(
                f"corpus graph {idx} has {graph.num_nodes} nodes, over the "
                f"exact-solver bound {max_nodes}"
            )
    graphs = dedupe_isomorphic(corpus)
    n = len(graphs)
    # label in target-major order so the solver's permuted-target cache hits,
    # then emit pairs in canonical (i, j) i <= j index order
    ordered = [(i, j) for j in range(n) for i in range(j + 1)]
    jobs = [(graphs[i], graphs[j], costs, max_nodes) for i, j in ordered]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_label_one, jobs, chunksize=64))
    else:
        values = [_label_one(job) for job in jobs]
    by_pair = {ij: value for ij, value in zip(ordered, values)}
    return [
        LabeledPair(graphs[i], graphs[j], by_pair[(i, j)], cost_id)
        for i in range(n)
        for j in range(i, n)
    ]


def split_graphs(graphs, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle and split a corpus; pairs are then formed within each split."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(graphs))
    n_train = int(round(ratios[0] * len(graphs)))
    n_val = int(round(ratios[1] * len(graphs)))
    train = [graphs[i] for i in order[:n_train]]
    val = [graphs[i] for i in order[n_train : n_train + n_val]]
    test = [graphs[i] for i in order[n_train + n_val :]]
    return train, val, test


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def corpus_num_labels(pairs) -> int:
    """Shared one-hot width for a pair set: 0 when no graph carries labels.

    Unlabeled graphs mixed into a labeled set take the shared label 0, which
    any derived vocabulary already covers.
    """
    widest = -1
    for lp in pairs:
        for graph in (lp.source, lp.target):
            if graph.labels is not None:
                widest = max(widest, max(graph.labels, default=0), 0)
    return widest + 1


def build_pair_tensors(pairs, pad_size: int, *, num_labels: int = 0):
    """Stack a list of labeled pairs into one PairBatch plus target values.

    Label matrices use one vocabulary across the whole set (derived from the
    data when ``num_labels`` is not given), so the stacked tensors are
    rectangular.
    """
    if num_labels <= 0:
        num_labels = corpus_num_labels(pairs)
    padded = [
        pad_pair(
            lp.source,
            lp.target,
            pad_size,
            num_labels=num_labels if num_labels > 0 else None,
        )
        for lp in pairs
    ]
    batch = PairBatch.from_pairs(padded)
    targets = torch.tensor([lp.ged for lp in pairs], dtype=torch.float64)
    return batch, targets


def required_pad_size(pairs) -> int:
    return max(max(lp.source.num_nodes, lp.target.num_nodes) for lp in pairs)


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

def train(
    train_pairs,
    val_pairs,
    config: TrainConfig,
    choice: SurrogateChoice,
    costs: CostConfig,
):
    """Fit a model to exact labels; returns (model, history).

    History records per-epoch training loss and validation MSE; the returned
    model carries the parameters of the best validation epoch. Training is
    deterministic for a fixed seed on one machine. A non-finite loss aborts
    with the offending batch index.
    """
    if not train_pairs:
        raise ValueError("empty training set")
    pad_size = config.pad_size or max(
        required_pad_size(train_pairs), required_pad_size(val_pairs or train_pairs)
    )
    model_config = ModelConfig(
        pad_size=pad_size,
        layers=config.layers,
        node_dim=config.node_dim,
        pair_dim=config.pair_dim,
        num_labels=config.num_labels,
    )
    model = GedModel(model_config, seed=config.seed)
    history = {"train_loss": [], "val_mse": [], "best_epoch": -1}
    if config.max_epochs == 0:
        return model, history

    train_batch, train_targets = build_pair_tensors(
        train_pairs, pad_size, num_labels=config.num_labels
    )
    val_batch, val_targets = (
        build_pair_tensors(val_pairs, pad_size, num_labels=config.num_labels)
        if val_pairs
        else (None, None)
    )
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    rng = np.random.default_rng(config.seed)
    best_state = copy.deepcopy(model.state_dict())
    best_val = np.inf

    def validation_mse() -> float:
        if val_batch is None:
            return float("nan")
        with torch.no_grad():
            preds = _predict_batches(
                model, val_batch, config, choice, costs, config.batch_size
            )
        return float(((preds - val_targets) ** 2).mean())

    since_best = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size].copy())
            preds = score_batch(
                train_batch.select(idx),
                model,
                costs,
                choice,
                tau=config.tau,
                iterations=config.sinkhorn_iterations,
            )
            loss = ((preds - train_targets[idx]) ** 2).mean()
            if not torch.isfinite(loss):
                batch_index = start // config.batch_size
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}",
                    state=copy.deepcopy(model.state_dict()),
                    epoch=epoch,
                    batch_index=batch_index,
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(idx)
        history["train_loss"].append(epoch_loss / len(train_pairs))

        val_mse = validation_mse()
        history["val_mse"].append(val_mse)
        track = val_mse if val_batch is not None else history["train_loss"][-1]
        if track < best_val:
            best_val = track
            best_state = copy.deepcopy(model.state_dict())
            history["best_epoch"] = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break

    model.load_state_dict(best_state)
    return model, history


def _predict_batches(model, batch, config, choice, costs, batch_size):
    chunks = []
    for start in range(0, len(batch), batch_size):
        idx = torch.arange(start, min(start + batch_size, len(batch)))
        chunks.append(
            score_batch(
                batch.select(idx),
                model,
                costs,
                choice,
                tau=config.tau,
                iterations=config.sinkhorn_iterations,
            )
        )
    return torch.cat(chunks)


def predict(
    pairs,
    model: GedModel,
    choice: SurrogateChoice,
    costs: CostConfig,
    *,
    tau: float = 0.01,
    iterations: int = 20,
    batch_size: int = 64,
    num_labels: int = 0,
) -> np.ndarray:
    """Predicted distances for labeled pairs, in their given order."""
    batch, _ = build_pair_tensors(pairs, model.config.pad_size, num_labels=num_labels)
    out = []
    with torch.no_grad():
        for start in range(0, len(batch), batch_size):
            idx = torch.arange(start, min(start + batch_size, len(batch)))
            out.append(
                score_batch(
                    batch.select(idx), model, costs, choice,
                    tau=tau, iterations=iterations,
                )
            )
    return torch.cat(out).numpy()


def mean_squared_error(truths, preds) -> float:
    truths = np.asarray(truths, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    return float(((truths - preds) ** 2).mean())


def kendall_tau(truths, preds) -> float:
    """(concordant - discordant) / C(n, 2); tied pairs count in neither."""
    truths = np.asarray(truths, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    n = truths.shape[0]
    if n < 2:
        raise ValueError("rank correlation needs at least two items")
    sign_t = np.sign(truths[:, None] - truths[None, :])
    sign_p = np.sign(preds[:, None] - preds[None, :])
    agreement = sign_t * sign_p
    iu = np.triu_indices(n, k=1)
    concordant = int((agreement[iu] > 0).sum())
    discordant = int((agreement[iu] < 0).sum())
    return (concordant - discordant) / (n * (n - 1) / 2)


def evaluate_predictions(truths, preds) -> dict:
    if len(truths) == 0:
        raise ValueError("empty pair set")
    return {
        "mse": mean_squared_error(truths, preds),
        "ktau": kendall_tau(truths, preds),
    }


def evaluate(
    pairs,
    model: GedModel,
    choice: SurrogateChoice,
    costs: CostConfig,
    *,
    tau: float = 0.01,
    iterations: int = 20,
    batch_size: int = 64,
    num_labels: int = 0,
) -> dict:
    """MSE and rank correlation of model predictions against exact labels."""
    if not pairs:
        raise ValueError("empty pair set")
    preds = predict(
        pairs, model, choice, costs,
        tau=tau, iterations=iterations, batch_size=batch_size, num_labels=num_labels,
    )
    truths = np.array([lp.ged for lp in pairs])
    return evaluate_predictions(truths, preds)


_UNNORMALIZE_EPS = 1e-7


def normalized_score(ged: float, n_src: int, n_tgt: int) -> float:
    """exp(-2 ged / (n_src + n_tgt)), the normalized-similarity convention."""
    return float(np.exp(-2.0 * ged / (n_src + n_tgt)))


def unnormalize_score(score: float, n_src: int, n_tgt: int) -> float:
    """Map a normalized similarity back to an absolute distance.

    -((n_src + n_tgt) / 2) * log(score + 1e-7); the epsilon keeps a zero
    score finite.
    """
    if score < 0:
        raise ValueError(f"score must be nonnegative, got {score}")
    return float(-(n_src + n_tgt) / 2.0 * np.log(score + _UNNORMALIZE_EPS))
