"""Command-line entry points for the full lifecycle.

Subcommands: ``gen-data``, ``train``, ``eval``, ``infer``, ``baseline``,
``serve``, ``stats``, and ``rerun``. Every run that writes outputs also
writes a ``manifest.json`` (resolved options plus input fingerprints);
``rerun <manifest>`` replays it and reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .baselines import OracleScorer, PageRankScorer, PersonalizedPageRankScorer
from .datagen import GenConfig, GenerationError, format_stats, generate, stats
from .graphs import (
    DatasetParseError,
    GraphValidationError,
    load_dataset,
    save_dataset,
)
from .metrics import evaluate, format_report_table
from .ranker import AnchorRanker, TrainingError

USAGE_ERROR = 2

_MODEL_FLAGS = (
    ("d-sem", int),
    ("d-str", int),
    ("d-model", int),
    ("n-fusion-layers", int),
    ("heads", int),
    ("ae-drop-prob", float),
    ("ae-weight", float),
    ("mu", float),
    ("nu", float),
    ("epochs", int),
    ("lr", float),
    ("patience", int),
    ("sample-fraction", float),
    ("semantic-seed", int),
)
_MODEL_TOGGLES = ("enable-ca", "enable-aa", "enable-ae", "enable-pp")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config file must be a JSON object")
    return doc


def _write_manifest(out_dir: Path, command: str, options: dict, inputs: list[Path], outputs: list[Path]) -> None:
    manifest = {
        "tool": "anchorrank",
        "version": __version__,
        "command": command,
        "options": options,
        "inputs": {str(p): _sha256(p) for p in inputs if p.exists()},
        "outputs": [str(p) for p in outputs],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _model_kwargs(args: argparse.Namespace, config_file: dict) -> dict:
    section = dict(config_file.get("model", {}))
    section.update(config_file.get("train", {}))
    kwargs = {}
    for flag, _ in _MODEL_FLAGS:
        key = flag.replace("-", "_")
        if key in section:
            kwargs[key] = section[key]
        value = getattr(args, key, None)
        if value is not None:
            kwargs[key] = value
    for flag in _MODEL_TOGGLES:
        key = flag.replace("-", "_")
        if key in section:
            kwargs[key] = bool(section[key])
        value = getattr(args, key, None)
        if value is not None:
            kwargs[key] = value
    seed = getattr(args, "seed", None)
    if seed is not None:
        kwargs["seed"] = seed
    elif "seed" in section:
        kwargs["seed"] = section["seed"]
    return kwargs


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    for flag, typ in _MODEL_FLAGS:
        parser.add_argument(f"--{flag}", type=typ, default=None)
    for flag in _MODEL_TOGGLES:
        key = flag.replace("-", "_")
        group = parser.add_mutually_exclusive_group()
        group.add_argument(f"--{flag}", dest=key, action="store_true", default=None)
        group.add_argument(f"--no-{flag}", dest=key, action="store_false", default=None)
    parser.add_argument("--seed", type=int, default=None)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args: argparse.Namespace) -> int:
    section = _load_config_file(args.config).get("data", {})
    options = dict(section)
    for key in (
        "n_graphs",
        "nodes_per_graph",
        "edge_density",
        "n_pairs_per_graph",
        "n_topics",
        "vocab_per_topic",
        "ca_size",
        "gt_radius",
        "seed",
        "family",
    ):
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    config = GenConfig.from_dict(options)
    fractions = tuple(float(x) for x in args.split.split(","))
    dataset = generate(config, split_fractions=fractions)  # type: ignore[arg-type]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset_path = out / "dataset.jsonl"
    split_path = out / "splits.json"
    save_dataset(dataset, dataset_path, split_path)
    _write_manifest(
        out,
        "gen-data",
        {**config.to_dict(), "split": args.split, "out": str(out)},
        [],
        [dataset_path, split_path],
    )
    sys.stdout.write(format_stats(f"{config.family}:{config.seed}", stats(dataset)))
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset, args.splits)
    sys.stdout.write(format_stats(Path(args.dataset).stem, stats(dataset)))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config_file = _load_config_file(args.config)
    dataset = load_dataset(args.dataset, args.splits)
    ranker = AnchorRanker(**_model_kwargs(args, config_file))
    ranker.fit(dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = ranker.save(out / "model")
    _write_manifest(
        out,
        "train",
        {
            "dataset": str(args.dataset),
            "splits": str(args.splits) if args.splits else None,
            "model": ranker.config_.to_dict(),
            "sample_fraction": ranker.sample_fraction,
            "semantic_seed": ranker.semantic_seed,
            "out": str(out),
        },
        [Path(args.dataset)] + ([Path(args.splits)] if args.splits else []),
        list(files.values()),
    )
    best = f"{ranker.best_val_ndcg_:.4f}" if ranker.best_val_ndcg_ is not None else "n/a"
    sys.stdout.write(
        f"trained {len(ranker.log_)} epochs (best epoch {ranker.best_epoch_}, "
        f"val NDCG@20 {best}); checkpoint at {files['checkpoint']}\n"
    )
    return 0


def _build_scorers(args: argparse.Namespace) -> list:
    scorers = []
    if getattr(args, "oracle", False):
        scorers.append(OracleScorer())
    if getattr(args, "checkpoint", None):
        scorers.append(AnchorRanker.load(args.checkpoint))
    for name in (getattr(args, "baselines", "") or "").split(","):
        name = name.strip().lower()
        if not name:
            continue
        if name == "pr":
            scorers.append(PageRankScorer())
        elif name == "ppr":
            scorers.append(PersonalizedPageRankScorer())
        else:
            raise ValueError(f"unknown baseline {name!r} (expected pr or ppr)")
    if not scorers:
        raise ValueError("nothing to evaluate: pass --checkpoint, --baselines, or --oracle")
    return scorers


def _method_name(scorer) -> str:
    return getattr(scorer, "method_name", None) or "anchorrank"


def cmd_eval(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset, args.splits)
    scorers = _build_scorers(args)
    reports = [
        evaluate(
            s,
            dataset,
            split=args.split,
            k_rank=args.k_rank,
            k_over=args.k_over,
            single_graph=args.single_graph,
            method=_method_name(s),
        )
        for s in scorers
    ]
    table = format_report_table(reports)
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        outputs = []
        for report in reports:
            path = out / f"report_{report.method}.json"
            path.write_text(report.to_json(), encoding="utf-8")
            outputs.append(path)
        table_path = out / "report.txt"
        table_path.write_text(table, encoding="utf-8")
        outputs.append(table_path)
        _write_manifest(
            out,
            "eval",
            {
                "dataset": str(args.dataset),
                "splits": str(args.splits) if args.splits else None,
                "split": args.split,
                "checkpoint": args.checkpoint,
                "baselines": args.baselines,
                "oracle": args.oracle,
                "k_rank": args.k_rank,
                "k_over": args.k_over,
                "single_graph": args.single_graph,
                "out": str(out),
            },
            [Path(args.dataset)] + ([Path(args.splits)] if args.splits else []),
            outputs,
        )
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    args.checkpoint = None
    args.oracle = False
    args.baselines = args.method
    return cmd_eval(args)


def cmd_infer(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset, args.splits)
    if args.graph_id not in dataset.by_id:
        raise KeyError(f"graph {args.graph_id!r} not in dataset")
    graph = dataset.by_id[args.graph_id]
    ca = [c.strip() for c in args.ca.split(",") if c.strip()]
    ranker = AnchorRanker.load(args.checkpoint)
    ranked = ranker.predict(graph, ca, top_k=args.top_k)
    doc = {
        "graph_id": graph.id,
        "ca": sorted(set(ca)),
        "ranking": [{"node": nid, "score": score} for nid, score in ranked],
    }
    text = json.dumps(doc, indent=2) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ranking.json").write_text(text, encoding="utf-8")
        _write_manifest(
            out,
            "infer",
            {
                "dataset": str(args.dataset),
                "splits": str(args.splits) if args.splits else None,
                "graph_id": args.graph_id,
                "ca": args.ca,
                "checkpoint": args.checkpoint,
                "top_k": args.top_k,
                "out": str(out),
            },
            [Path(args.dataset)],
            [out / "ranking.json"],
        )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    section = _load_config_file(args.config).get("serve", {})
    host = args.host or section.get("host", "127.0.0.1")
    port = args.port if args.port is not None else int(section.get("port", 8008))
    ui_dir = args.ui_dir or section.get("ui_dir")
    dataset = load_dataset(args.dataset, args.splits)
    ranker = AnchorRanker.load(args.checkpoint)
    app = create_app(ranker, dataset, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def cmd_rerun(args: argparse.Namespace) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    command = manifest["command"]
    options = manifest["options"]
    argv = [command]
    if command == "gen-data":
        argv += [
            "--out", options["out"],
            "--n-graphs", str(options["n_graphs"]),
            "--nodes-per-graph", str(options["nodes_per_graph"]),
            "--edge-density", str(options["edge_density"]),
            "--n-pairs-per-graph", str(options["n_pairs_per_graph"]),
            "--n-topics", str(options["n_topics"]),
            "--vocab-per-topic", str(options["vocab_per_topic"]),
            "--ca-size", str(options["ca_size"]),
            "--gt-radius", str(options["gt_radius"]),
            "--seed", str(options["seed"]),
            "--family", options["family"],
            "--split", options["split"],
        ]
    elif command == "train":
        argv += ["--dataset", options["dataset"], "--out", options["out"]]
        if options.get("splits"):
            argv += ["--splits", options["splits"]]
        model = options["model"]
        for key in (
            "d_sem", "d_str", "d_model", "n_fusion_layers", "heads", "epochs", "patience", "seed",
        ):
            argv += [f"--{key.replace('_', '-')}", str(model[key])]
        for key in ("ae_drop_prob", "ae_weight", "mu", "nu", "lr"):
            argv += [f"--{key.replace('_', '-')}", repr(model[key])]
        argv += ["--sample-fraction", repr(options["sample_fraction"])]
        if options.get("semantic_seed") is not None:
            argv += ["--semantic-seed", str(options["semantic_seed"])]
        for key in ("enable_ca", "enable_aa", "enable_ae", "enable_pp"):
            argv += [f"--{key.replace('_', '-')}" if model[key] else f"--no-{key.replace('_', '-')}"]
    elif command == "eval":
        argv += [
            "--dataset", options["dataset"],
            "--split", options["split"],
            "--k-over", str(options["k_over"]),
            "--out", options["out"],
        ]
        if options.get("splits"):
            argv += ["--splits", options["splits"]]
        if options.get("k_rank") is not None:
            argv += ["--k-rank", str(options["k_rank"])]
        if options.get("checkpoint"):
            argv += ["--checkpoint", options["checkpoint"]]
        if options.get("baselines"):
            argv += ["--baselines", options["baselines"]]
        if options.get("oracle"):
            argv += ["--oracle"]
        if options.get("single_graph"):
            argv += ["--single-graph"]
    elif command == "infer":
        argv += [
            "--dataset", options["dataset"],
            "--graph-id", options["graph_id"],
            "--ca", options["ca"],
            "--checkpoint", options["checkpoint"],
            "--top-k", str(options["top_k"]),
            "--out", options["out"],
        ]
        if options.get("splits"):
            argv += ["--splits", options["splits"]]
    else:
        raise ValueError(f"manifest command {command!r} cannot be re-run")
    return main(argv)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anchorrank",
        description="Anchor-conditioned node importance ranking over multi-graph datasets.",
    )
    parser.add_argument("--version", action="version", version=f"anchorrank {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic multi-graph dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--n-graphs", type=int, default=None)
    p.add_argument("--nodes-per-graph", type=int, default=None)
    p.add_argument("--edge-density", type=float, default=None)
    p.add_argument("--n-pairs-per-graph", type=int, default=None)
    p.add_argument("--n-topics", type=int, default=None)
    p.add_argument("--vocab-per-topic", type=int, default=None)
    p.add_argument("--ca-size", type=int, default=None)
    p.add_argument("--gt-radius", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--family", choices=("A", "B"), default=None)
    p.add_argument("--split", default="0.8,0.1,0.1", help="train,val,test fractions")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("stats", help="print dataset statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a ranker on the train split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate scorers on a split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--baselines", default="", help="comma list: pr,ppr")
    p.add_argument("--oracle", action="store_true", help="add a truth-returning scorer")
    p.add_argument("--k-rank", type=int, default=None)
    p.add_argument("--k-over", type=int, default=2)
    p.add_argument("--single-graph", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="evaluate pr/ppr only")
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--method", default="ppr", help="comma list: pr,ppr")
    p.add_argument("--k-rank", type=int, default=None)
    p.add_argument("--k-over", type=int, default=2)
    p.add_argument("--single-graph", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("infer", help="rank one graph for an anchor set")
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--graph-id", required=True)
    p.add_argument("--ca", required=True, help="comma-separated node ids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("serve", help="run the read-only scoring service")
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--ui-dir", default=None, help="static frontend build to mount at /ui")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("rerun", help="replay a manifest.json byte-identically")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (
        FileNotFoundError,
        KeyError,
        ValueError,
        DatasetParseError,
        GraphValidationError,
        GenerationError,
        TrainingError,
    ) as exc:
        sys.stderr.write(f"anchorrank {args.command}: error: {exc}\n")
        return USAGE_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
