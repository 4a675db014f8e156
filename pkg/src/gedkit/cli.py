"""Command-line surface: dataset generation, exact solving, training,
evaluation, prediction, edit-path extraction, and gradient checking.

Every run writes exactly one manifest recording the command, its
configuration, inputs and outputs with checksums, the seed, and wall-clock
time. Commands never mutate their inputs and are deterministic under a
fixed seed. Edit costs are always given explicitly; there are no hidden
cost defaults.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .divergence import PairBatch, SurrogateChoice, score_batch
from .encoder import (
    CheckpointError,
    GedModel,
    ModelConfig,
    checkpoint_extra,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)
from .exact import CapabilityError, exact_ged
from .editpath import apply_edit_path, extract_edit_path, write_script
from .graphs import (
    CostConfig,
    FormatError,
    Graph,
    SizingError,
    pad_pair,
    read_graph_file,
    write_graph_file,
)
from .traineval import (
    LabeledPair,
    TrainConfig,
    TrainingError,
    canonical_key,
    dedupe_isomorphic,
    evaluate_predictions,
    generate_pairs,
    predict,
    split_graphs,
    synthetic_corpus,
    train,
)


def _parse_costs(text: str) -> CostConfig:
    parts = [float(x) for x in text.split(",")]
    if len(parts) not in (4, 5):
        raise argparse.ArgumentTypeError(
            "--costs takes node_del,node_add,edge_del,edge_add[,node_sub]"
        )
    return CostConfig(*parts)


def _parse_choice(text: str) -> SurrogateChoice:
    try:
        return SurrogateChoice.from_string(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, inputs, outputs, seed, started):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "checksums": {Path(p).name: _sha256(Path(p)) for p in outputs},
        "seed": seed,
        "wall_clock_seconds": round(time.monotonic() - started, 3),
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_graph_map(path):
    records = read_graph_file(path)
    by_id = dict(records)
    if len(by_id) != len(records):
        raise FormatError(f"{path}: duplicate graph ids")
    return by_id


def _read_pairs(path, graphs) -> tuple[list, CostConfig]:
    pairs = []
    costs = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                src = graphs[str(record["src_id"])]
                tgt = graphs[str(record["tgt_id"])]
                ged = float(record["ged"])
                record_costs = CostConfig.from_dict(record["costs"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad pair record: {exc}") from exc
            if costs is None:
                costs = record_costs
            elif costs != record_costs:
                raise FormatError(f"{path}:{lineno}: mixed cost configurations")
            pairs.append(
                LabeledPair(src, tgt, ged, cost_id=str(record.get("cost_id", "")))
            )
    if not pairs:
        raise FormatError(f"{path}: no pair records")
    return pairs, costs


def _write_pairs(path, ids, pairs, costs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (src_id, tgt_id), pair in zip(ids, pairs):
            fh.write(
                json.dumps(
                    {
                        "src_id": src_id,
                        "tgt_id": tgt_id,
                        "ged": pair.ged,
                        "costs": costs.as_dict(),
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = dedupe_isomorphic(
        synthetic_corpus(
            args.size,
            node_range=(args.min_nodes, args.max_nodes),
            edge_prob=(args.min_edge_prob, args.max_edge_prob),
            seed=args.seed,
        )
    )
    ids = [f"g{i:04d}" for i in range(len(corpus))]
    outputs = []
    graphs_path = out_dir / "graphs.jsonl"
    write_graph_file(graphs_path, list(zip(ids, corpus)))
    outputs.append(graphs_path)

    # label every corpus pair once; split files reuse those labels
    pairs = generate_pairs(
        corpus, args.costs, max_nodes=args.oracle_bound, workers=args.workers
    )
    index_pairs = [
        (i, j) for i in range(len(corpus)) for j in range(i, len(corpus))
    ]
    pairs_path = out_dir / "pairs.jsonl"
    _write_pairs(pairs_path, [(ids[i], ids[j]) for i, j in index_pairs], pairs, args.costs)
    outputs.append(pairs_path)

    splits = split_graphs(list(range(len(corpus))), seed=args.seed)
    for split_name, members in zip(("train", "val", "test"), splits):
        member_set = set(members)
        keep = [
            (pair, (ids[i], ids[j]))
            for pair, (i, j) in zip(pairs, index_pairs)
            if i in member_set and j in member_set
        ]
        split_path = out_dir / f"pairs_{split_name}.jsonl"
        _write_pairs(
            split_path, [pid for _, pid in keep], [p for p, _ in keep], args.costs
        )
        outputs.append(split_path)

    config = {
        "size": args.size,
        "node_range": [args.min_nodes, args.max_nodes],
        "edge_prob": [args.min_edge_prob, args.max_edge_prob],
        "costs": args.costs.as_dict(),
        "oracle_bound": args.oracle_bound,
        "workers": args.workers,
    }
    _write_manifest(out_dir, "gen-data", config, [], outputs, args.seed, started)
    print(f"wrote {len(corpus)} graphs and {len(outputs) - 1} pair files to {out_dir}")
    return 0


def _resolve_graph(args_graphs, spec: str) -> Graph:
    path = Path(spec)
    if path.exists():
        records = read_graph_file(path)
        if not records:
            raise FormatError(f"{path}: no graph records")
        return records[0][1]
    if args_graphs is None:
        raise FormatError(f"{spec}: not a file, and no --graphs given to look up ids")
    graphs = _load_graph_map(args_graphs)
    if spec not in graphs:
        raise FormatError(f"graph id {spec!r} not found in {args_graphs}")
    return graphs[spec]


def cmd_exact(args) -> int:
    source = _resolve_graph(args.graphs, args.source)
    target = _resolve_graph(args.graphs, args.target)
    size = args.pad_size or max(source.num_nodes, target.num_nodes)
    pair = pad_pair(source, target, size)
    try:
        result = exact_ged(
            pair, args.costs,
            max_nodes=args.oracle_bound,
            branch_and_bound=args.branch_and_bound,
        )
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("hint: pass --branch-and-bound for instances over the bound", file=sys.stderr)
        return 2
    print(json.dumps({"direction": "forward", "value": result.value,
                      "perm": list(result.argmin.perm)}))
    if args.both:
        reverse = exact_ged(
            pair.reversed(), args.costs,
            max_nodes=args.oracle_bound,
            branch_and_bound=args.branch_and_bound,
        )
        print(json.dumps({"direction": "reverse", "value": reverse.value,
                          "perm": list(reverse.argmin.perm)}))
        transposed = list(result.argmin.inverse().perm)
        print(json.dumps({"direction": "reverse-via-transpose",
                          "value": reverse.value if transposed == list(reverse.argmin.perm) else None,
                          "perm": transposed,
                          "transpose_optimal": bool(
                              abs(_requal(pair, transposed, args.costs) - reverse.value) <= 1e-9
                          )}))
    return 0


def _requal(pair, perm, costs):
    from .exact import qap_cost

    return qap_cost(pair.reversed(), np.asarray(perm), costs)


def cmd_train(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    graphs = _load_graph_map(args.graphs)
    train_pairs, costs = _read_pairs(args.train_pairs, graphs)
    val_pairs, val_costs = _read_pairs(args.val_pairs, graphs)
    if val_costs != costs:
        raise FormatError("train and val pair files use different costs")

    config = TrainConfig(
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        tau=args.tau,
        sinkhorn_iterations=args.sinkhorn_iters,
        layers=args.layers,
        node_dim=args.node_dim,
        pair_dim=args.pair_dim,
        pad_size=args.pad_size,
        num_labels=args.num_labels,
        seed=args.seed,
        max_epochs=args.epochs,
        patience=args.patience,
    )
    try:
        model, history = train(train_pairs, val_pairs, config, args.choice, costs)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(
        ckpt_path, model,
        extra={"choice": args.choice.to_string(), "costs": costs.as_dict(),
               "tau": config.tau, "sinkhorn_iterations": config.sinkhorn_iterations},
    )
    history_path = out_dir / "history.jsonl"
    with open(history_path, "w", encoding="utf-8") as fh:
        for epoch, (loss, val) in enumerate(
            zip(history["train_loss"], history["val_mse"])
        ):
            fh.write(json.dumps({"epoch": epoch, "train_loss": loss, "val_mse": val}))
            fh.write("\n")
    _write_manifest(
        out_dir, "train",
        {"train_config": config.as_dict(), "choice": args.choice.to_string(),
         "costs": costs.as_dict(), "best_epoch": history["best_epoch"]},
        [args.graphs, args.train_pairs, args.val_pairs],
        [ckpt_path, history_path],
        args.seed, started,
    )
    best = history["val_mse"][history["best_epoch"]] if history["val_mse"] else None
    print(json.dumps({"best_epoch": history["best_epoch"], "best_val_mse": best}))
    return 0


def _model_settings(ckpt_path, args):
    extra = checkpoint_extra(ckpt_path)
    choice = args.choice or SurrogateChoice.from_string(extra["choice"])
    costs = args.costs or CostConfig.from_dict(extra["costs"])
    tau = args.tau if args.tau is not None else float(extra.get("tau", 0.01))
    iters = (
        args.sinkhorn_iters
        if args.sinkhorn_iters is not None
        else int(extra.get("sinkhorn_iterations", 20))
    )
    return choice, costs, tau, iters


def cmd_eval(args) -> int:
    graphs = _load_graph_map(args.graphs)
    pairs, file_costs = _read_pairs(args.pairs, graphs)
    truths = np.array([p.ged for p in pairs])
    if args.predictions:
        preds = []
        with open(args.predictions, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    preds.append(float(json.loads(line)["pred"]))
        if len(preds) != len(pairs):
            raise FormatError(
                f"{args.predictions}: {len(preds)} predictions for {len(pairs)} pairs"
            )
        preds = np.array(preds)
    else:
        model = load_checkpoint(args.ckpt)
        choice, costs, tau, iters = _model_settings(args.ckpt, args)
        preds = predict(
            pairs, model, choice, costs or file_costs,
            tau=tau, iterations=iters, batch_size=args.batch_size,
        )
    metrics = evaluate_predictions(truths, preds)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    graphs = _load_graph_map(args.graphs)
    pairs, file_costs = _read_pairs(args.pairs, graphs)
    model = load_checkpoint(args.ckpt)
    choice, costs, tau, iters = _model_settings(args.ckpt, args)
    preds = predict(
        pairs, model, choice, costs or file_costs,
        tau=tau, iterations=iters, batch_size=args.batch_size,
    )
    for pair, pred in zip(pairs, preds):
        print(json.dumps({"ged": pair.ged, "pred": float(pred)}))
    return 0


def cmd_editpath(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    source = _resolve_graph(args.graphs, args.source)
    target = _resolve_graph(args.graphs, args.target)

    if args.ckpt:
        model = load_checkpoint(args.ckpt)
        size = model.config.pad_size
        pair = pad_pair(source, target, size)
        choice, costs, tau, iters = _model_settings(args.ckpt, args)
        from .align import build_node_cost, sinkhorn_matrix

        batch = PairBatch.from_pairs([pair])
        with torch.no_grad():
            x_src = model.node_embeddings(batch.adj_src, batch.eta_src, batch.labels_src)
            x_tgt = model.node_embeddings(batch.adj_tgt, batch.eta_tgt, batch.labels_tgt)
            cost_matrix = build_node_cost(x_src, x_tgt, model.cost_net)
            alignment = sinkhorn_matrix(cost_matrix, tau, iters)[0]
    else:
        if args.costs is None:
            print("error: --costs required without --ckpt", file=sys.stderr)
            return 2
        costs = args.costs
        pair = pad_pair(source, target, args.pad_size)
        alignment = exact_ged(
            pair, costs, max_nodes=args.oracle_bound,
            branch_and_bound=args.branch_and_bound,
        ).argmin

    path = extract_edit_path(pair, alignment, costs)
    script_path = out_dir / "editpath.jsonl"
    write_script(script_path, path.ops)
    edited = apply_edit_path(source, path)
    verdict = "isomorphic" if canonical_key(edited) == canonical_key(target) else "mismatch"
    _write_manifest(
        out_dir, "editpath",
        {"source": args.source, "target": args.target, "costs": costs.as_dict(),
         "ops": len(path.ops), "total_cost": path.total_cost, "verdict": verdict},
        [args.graphs] if args.graphs else [],
        [script_path], args.seed, started,
    )
    print(json.dumps({"ops": len(path.ops), "total_cost": path.total_cost,
                      "verdict": verdict}))
    return 0 if verdict == "isomorphic" else 4


def cmd_gradcheck(args) -> int:
    torch.manual_seed(args.seed)
    rng = np.random.default_rng(args.seed)
    size = args.pad_size or 5
    config = ModelConfig(
        pad_size=size, layers=args.layers, node_dim=args.node_dim,
        pair_dim=args.pair_dim,
    )
    model = GedModel(config, seed=args.seed)

    from .traineval import synthetic_corpus as corpus_fn

    graphs = corpus_fn(2, node_range=(max(2, size - 1), size), seed=args.seed)
    pair = pad_pair(graphs[0], graphs[1], size)
    batch = PairBatch.from_pairs([pair])
    params = [p for p in model.parameters() if p.requires_grad]

    def objective():
        return score_batch(
            batch, model, args.costs, args.choice,
            tau=args.tau if args.tau is not None else 0.5,
            iterations=args.sinkhorn_iters if args.sinkhorn_iters is not None else 10,
        ).sum()

    error = grad_check(objective, params)
    passed = error < 1e-4
    print(json.dumps({"max_relative_error": error, "pass": bool(passed)}))
    return 0 if passed else 5


# ---------------------------------------------------------------------------

def _add_costs(parser, required=True):
    parser.add_argument(
        "--costs", type=_parse_costs, required=required, default=None,
        help="node_del,node_add,edge_del,edge_add[,node_sub]",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gedkit",
        description="Graph edit distance under general costs: exact and learned.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled synthetic dataset")
    p.add_argument("--size", type=int, default=200)
    p.add_argument("--min-nodes", type=int, default=5)
    p.add_argument("--max-nodes", type=int, default=8)
    p.add_argument("--min-edge-prob", type=float, default=0.3)
    p.add_argument("--max-edge-prob", type=float, default=0.5)
    _add_costs(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-bound", type=int, default=8)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("exact", help="exact edit distance between two graphs")
    p.add_argument("source", help="graph id (with --graphs) or a graph file")
    p.add_argument("target", help="graph id (with --graphs) or a graph file")
    p.add_argument("--graphs", default=None)
    _add_costs(p)
    p.add_argument("--N", dest="pad_size", type=int, default=None)
    p.add_argument("--oracle-bound", type=int, default=8)
    p.add_argument("--branch-and-bound", action="store_true")
    p.add_argument("--both", action="store_true", help="also solve the reverse direction")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("train", help="train an estimator on a labeled dataset")
    p.add_argument("--graphs", required=True)
    p.add_argument("--train-pairs", required=True)
    p.add_argument("--val-pairs", required=True)
    p.add_argument("--choice", type=_parse_choice, default=SurrogateChoice())
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--sinkhorn-iters", type=int, default=20)
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--node-dim", type=int, default=10)
    p.add_argument("--pair-dim", type=int, default=20)
    p.add_argument("--N", dest="pad_size", type=int, default=None)
    p.add_argument("--num-labels", type=int, default=0,
                   help="one-hot initial features with this vocabulary (0 = plain)")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a predictions file")
    p.add_argument("--graphs", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--predictions", default=None)
    p.add_argument("--choice", type=_parse_choice, default=None)
    _add_costs(p, required=False)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--sinkhorn-iters", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="print per-pair predicted distances")
    p.add_argument("--graphs", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--choice", type=_parse_choice, default=None)
    _add_costs(p, required=False)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--sinkhorn-iters", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("editpath", help="extract, save, and verify an edit script")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--graphs", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--choice", type=_parse_choice, default=None)
    _add_costs(p, required=False)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--sinkhorn-iters", type=int, default=None)
    p.add_argument("--N", dest="pad_size", type=int, default=None)
    p.add_argument("--oracle-bound", type=int, default=8)
    p.add_argument("--branch-and-bound", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_editpath)

    p = sub.add_parser("gradcheck", help="finite-difference check of score gradients")
    p.add_argument("--choice", type=_parse_choice, default=SurrogateChoice())
    _add_costs(p)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--N", dest="pad_size", type=int, default=5)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--node-dim", type=int, default=4)
    p.add_argument("--pair-dim", type=int, default=5)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--sinkhorn-iters", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, SizingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
