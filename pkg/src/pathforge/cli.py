"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 external service failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from .config import PipelineConfig, load_config
from .errors import IoFailure, PathforgeError, ServiceError, UnknownCommand, ValidationError
from .grpo import demo_env, run_toy_training
from .kg import align_nodes, emit_graph, fuse_graphs, graph_stats, load_graph, prune_graph
from .metrics import evaluate_batch, summarize
from .pipeline import Synthesizer, augment_records, jsonl_lines, ordered_map, read_jsonl, score_records
from .reasoning import AnchoredEntity, anchor_mentions, parse_extraction, retrieve_paths, split_anchors
from .rewards import RewardModel
from .services import Role, default_embedder
from .synthesis import Triplet, filter_corpus
from .text import DEFAULT_ABBREVIATIONS

log = logging.getLogger("pathforge")

COMMANDS = ("kg", "anchor", "paths", "synth", "filter", "augment", "reward", "grpo-demo", "eval")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        if "invalid choice" in message:
            raise UnknownCommand(message)
        raise ValidationError(f"{self.prog}: {message}")


def _write(out: str | None, text: str) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {out}: {exc}") from exc


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _graph(args, cfg: PipelineConfig):
    path = getattr(args, "graph", None) or cfg.graph
    if not path:
        raise ValidationError("a graph is required (--graph or config key 'graph')")
    return load_graph(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_kg_build(args, cfg: PipelineConfig) -> int:
    a_path, b_path = args.a or cfg.graph_a, args.b or cfg.graph_b
    if not a_path or not b_path:
        raise ValidationError("kg build needs two graphs (--a/--b or config keys graph_a/graph_b)")
    a, b = load_graph(a_path), load_graph(b_path)
    alignment = align_nodes(a, b, default_embedder(), cfg.align_threshold)
    fused = fuse_graphs(a, b, alignment)
    g = fused if args.no_prune else prune_graph(fused)
    if args.alignment:
        _write(args.alignment, _json(alignment.to_dict()))
    if args.out:
        emit_graph(g, args.out)
    _write(None, _json(graph_stats(g)))
    return 0


def cmd_kg_stats(args, cfg: PipelineConfig) -> int:
    _write(args.out, _json(graph_stats(load_graph(args.graph))))
    return 0


def cmd_kg_prune(args, cfg: PipelineConfig) -> int:
    g = prune_graph(load_graph(args.graph))
    if args.out:
        emit_graph(g, args.out)
    else:
        _write(None, _json(g.to_dict()))
    return 0


def cmd_anchor(args, cfg: PipelineConfig) -> int:
    g = _graph(args, cfg)
    mentions = parse_extraction(_read_text(args.extraction))
    anchored = anchor_mentions(mentions, g, default_embedder(), cfg.anchor_threshold)
    _write(args.out, jsonl_lines(a.to_dict() for a in anchored))
    return 0


def cmd_paths(args, cfg: PipelineConfig) -> int:
    g = _graph(args, cfg)
    if args.anchors:
        anchored = [AnchoredEntity.from_dict(r) for r in read_jsonl(args.anchors)]
        starts, ends = split_anchors(anchored)
    else:
        starts, ends = [], []
    starts += args.start or []
    ends += args.end or []
    paths = retrieve_paths(g, starts, ends, cfg.priority or None, cfg.max_cost)
    _write(args.out, jsonl_lines(p.to_dict() for p in paths))
    return 0


def cmd_synth(args, cfg: PipelineConfig) -> int:
    g = _graph(args, cfg)
    synth = Synthesizer(
        g,
        default_embedder(),
        cfg.client(Role.GENERATOR),
        cfg.client(Role.EXTRACTOR),
        cfg.anchor_threshold,
        cfg.priority or None,
        cfg.max_cost,
        args.template or cfg.template,
    )
    outcomes = ordered_map(synth.run, read_jsonl(args.cases), cfg.jobs)
    skipped = [o for o in outcomes if o.triplet is None]
    if skipped:
        log.warning("%d case(s) produced no triplet: %s", len(skipped), ", ".join(f"{o.case_id} ({o.skipped})" for o in skipped))
    _write(args.out, jsonl_lines(o.triplet.to_dict() for o in outcomes if o.triplet is not None))
    return 0


def cmd_filter(args, cfg: PipelineConfig) -> int:
    triplets = [Triplet.from_dict(r) for r in read_jsonl(args.triplets)]
    result = filter_corpus(triplets, cfg.client(Role.JUDGE), cfg.jobs)
    if args.verdicts:
        _write(args.verdicts, jsonl_lines(v.to_dict() for v in result.verdicts))
    _write(args.out, jsonl_lines(t.to_dict() for t in result.kept))
    return 0


def cmd_augment(args, cfg: PipelineConfig) -> int:
    abbreviations = cfg.abbreviations if cfg.abbreviations is not None else DEFAULT_ABBREVIATIONS
    samples = augment_records(read_jsonl(args.chains), args.sample_k, cfg.seed, abbreviations)
    _write(args.out, jsonl_lines(s.to_dict() for s in samples))
    return 0


def cmd_reward(args, cfg: PipelineConfig) -> int:
    g = _graph(args, cfg)
    model = RewardModel(g, default_embedder(), cfg.client(Role.JUDGE), cfg.alpha, cfg.beta, cfg.epsilon, cfg.anchor_threshold)
    scores = score_records(model, read_jsonl(args.pred), read_jsonl(args.gt), cfg.jobs)
    _write(args.out, jsonl_lines(b.to_dict() for b in scores))
    return 0


def cmd_grpo_demo(args, cfg: PipelineConfig) -> int:
    traj = run_toy_training(demo_env(), cfg.grpo_config(), iters=args.iters, seed=cfg.seed)
    _write(args.out, traj.to_csv())
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    reports = evaluate_batch(read_jsonl(args.pairs), default_embedder(), cfg.client(Role.JUDGE))
    _write(args.out, jsonl_lines(r.to_dict() for r in reports))
    if args.summary:
        _write(args.summary, _json(summarize(reports)))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--mock", action="store_true", default=None, help="use the deterministic offline services")
    p.add_argument("--jobs", type=int, help="parallel per-sample workers")
    p.add_argument("--seed", type=int, help="seed for every random draw")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pathforge", description="Knowledge-graph-grounded pathology reasoning data and reward tools.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name: str, fn: Callable, help: str, parent=sub) -> argparse.ArgumentParser:
        p = parent.add_parser(name, help=help)
        _common(p)
        p.set_defaults(func=fn)
        return p

    kg = sub.add_parser("kg", help="build, inspect or prune knowledge graphs")
    kg_sub = kg.add_subparsers(dest="kg_command", metavar="action", parser_class=_Parser)
    kg_sub.required = True
    p = add("build", cmd_kg_build, "align, fuse and prune two graphs", kg_sub)
    p.add_argument("--a", help="first graph (its ids win on fusion)")
    p.add_argument("--b", help="second graph")
    p.add_argument("--out", help="fused graph destination")
    p.add_argument("--alignment", help="write the alignment map here")
    p.add_argument("--no-prune", action="store_true", help="keep every component")
    p = add("stats", cmd_kg_stats, "node/edge/relation counts", kg_sub)
    p.add_argument("graph")
    p.add_argument("--out")
    p = add("prune", cmd_kg_prune, "dedupe edges and keep the largest component", kg_sub)
    p.add_argument("graph")
    p.add_argument("--out")

    p = add("anchor", cmd_anchor, "anchor extracted mentions to graph nodes")
    p.add_argument("--graph")
    p.add_argument("--extraction", required=True, help="extraction JSON")
    p.add_argument("--out")

    p = add("paths", cmd_paths, "retrieve reasoning paths between anchors")
    p.add_argument("--graph")
    p.add_argument("--anchors", help="anchored entities JSONL")
    p.add_argument("--start", action="append", help="extra start node id")
    p.add_argument("--end", action="append", help="extra end node id")
    p.add_argument("--out")

    p = add("synth", cmd_synth, "generate (question, answer, chain) triplets")
    p.add_argument("--graph")
    p.add_argument("--cases", required=True, help="cases JSONL")
    p.add_argument("--template", choices=("Option1", "Option2", "Option3"))
    p.add_argument("--out")

    p = add("filter", cmd_filter, "apply the three-check quality filter")
    p.add_argument("--triplets", required=True)
    p.add_argument("--verdicts", help="write one verdict per input triplet here")
    p.add_argument("--out", help="kept triplets")

    p = add("augment", cmd_augment, "expand chains into truncated SFT samples")
    p.add_argument("--chains", required=True, help="triplet or chain JSONL")
    p.add_argument("--sample-k", type=int, help="draw this many truncation points per chain instead of all")
    p.add_argument("--out")

    p = add("reward", cmd_reward, "score responses with the composite reward")
    p.add_argument("--pred", required=True, help='JSONL with a "response" field')
    p.add_argument("--gt", required=True, help='JSONL with "answer" and optional "entities"/"chain"')
    p.add_argument("--graph")
    p.add_argument("--out")

    p = add("grpo-demo", cmd_grpo_demo, "train the toy policy on the three-candidate task")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--out", help="trajectory CSV")

    p = add("eval", cmd_eval, "lexical, embedding and judge metrics")
    p.add_argument("--pairs", required=True, help='JSONL with "prediction" and "reference"')
    p.add_argument("--out")
    p.add_argument("--summary", help="aggregate JSON destination")
    return parser


def dispatch(argv: Sequence[str]) -> int:
    args = build_parser().parse_args(list(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config).override(mock=args.mock, jobs=args.jobs, seed=args.seed)
    return args.func(args, cfg)


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return dispatch(argv)
    except ServiceError as exc:
        print(f"pathforge: service failure: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, PathforgeError) as exc:
        print(f"pathforge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
