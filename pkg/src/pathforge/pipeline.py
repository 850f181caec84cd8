"""Batch orchestration shared by the command-line tools."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, TypeVar

from .corpus import SftSample, augment_trajectories, segment_chain
from .errors import IoFailure, MalformedRecord, NoEnds, NoPaths, NoStarts
from .kg import KnowledgeGraph
from .reasoning import AnchoredEntity, anchor_mentions, parse_extraction, retrieve_paths, split_anchors
from .rewards import RewardBreakdown, RewardModel
from .services import EmbeddingProvider, LlmClient, llm_request
from .synthesis import DEFAULT_QUESTION, Triplet, build_generation_prompt, synthesize_triplet
from .text import DEFAULT_ABBREVIATIONS

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

EXTRACTION_PROMPT = """TASK: pathology entity extraction
Find every anatomical structure, morphological phenotype and diagnostic concept mentioned in the report below. Return JSON of the form {{"extracted_entities": [{{"id": "E1", "name": "...", "type": "Structure"}}]}} using the types Structure, Phenotype and Diagnosis and ids E1.., P1.., D1.. respectively.

Report: <<<{report}>>>"""


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    out = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"{path}:{no}: {exc}") from exc
        if not isinstance(rec, dict):
            raise MalformedRecord(f"{path}:{no}: expected a JSON object")
        out.append(rec)
    return out


def jsonl_lines(records: Iterable[Mapping[str, Any]]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records)


def ordered_map(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is always kept."""
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------


@dataclass
class CaseOutcome:
    case_id: str
    triplet: Triplet | None = None
    skipped: str = ""


@dataclass
class Synthesizer:
    g: KnowledgeGraph
    embedder: EmbeddingProvider
    generator: LlmClient
    extractor: LlmClient | None = None
    anchor_threshold: float = 0.85
    priority: Mapping[str, float] | None = None
    max_cost: float = 6.0
    template: str = "Option1"

    def extraction(self, case: Mapping[str, Any]) -> str:
        if "extraction" in case:
            ex = case["extraction"]
            return ex if isinstance(ex, str) else json.dumps(ex)
        if self.extractor is None or not case.get("report"):
            raise MalformedRecord(f"case {case.get('case_id')!r} has neither an extraction nor a report")
        return llm_request(self.extractor, EXTRACTION_PROMPT.format(report=str(case["report"])))

    def anchors(self, case: Mapping[str, Any]) -> list[AnchoredEntity]:
        return anchor_mentions(parse_extraction(self.extraction(case)), self.g, self.embedder, self.anchor_threshold)

    def run(self, case: Mapping[str, Any]) -> CaseOutcome:
        case_id = str(case.get("case_id", ""))
        anchored = self.anchors(case)
        starts, ends = split_anchors(anchored)
        try:
            paths = retrieve_paths(self.g, starts, ends, self.priority, self.max_cost)
            question = str(case.get("question") or DEFAULT_QUESTION)
            prompt = build_generation_prompt(paths, anchored, self.template, question)
        except (NoStarts, NoEnds, NoPaths) as exc:
            log.warning("case %s skipped: %s", case_id, exc)
            return CaseOutcome(case_id, skipped=type(exc).__name__)
        meta = {
            "case_id": case_id,
            "cancer_type": case.get("cancer_type", ""),
            "source": case.get("source", ""),
        }
        return CaseOutcome(case_id, synthesize_triplet(prompt, self.generator, meta, anchored, paths, question))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def augment_records(
    records: Sequence[Mapping[str, Any]],
    sample_k: int | None = None,
    seed: int | None = None,
    abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS,
) -> list[SftSample]:
    """Chain records (triplets or ``{"case_ref", "question", "chain"}``) to SFT samples."""
    out: list[SftSample] = []
    abbreviations = frozenset(abbreviations)
    for i, rec in enumerate(records):
        try:
            chain_text = str(rec["chain"])
            question = str(rec.get("question", ""))
        except KeyError as exc:
            raise MalformedRecord(f"record {i + 1} lacks field {exc}") from exc
        case_ref = str(rec.get("case_ref") or rec.get("meta", {}).get("case_id") or f"case-{i + 1}")
        chain = segment_chain(chain_text, abbreviations)
        # per-record seeds keep the draw independent of batch composition
        s = None if seed is None else seed + i
        out.extend(augment_trajectories(chain, case_ref, question, sample_k, s))
    return out


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------


def score_records(model: RewardModel, preds: Sequence[Mapping[str, Any]], gts: Sequence[Mapping[str, Any]], jobs: int = 1) -> list[RewardBreakdown]:
    """Pair predictions with references line by line and score each pair."""
    if len(preds) != len(gts):
        raise MalformedRecord(f"{len(preds)} predictions but {len(gts)} references")

    def one(pair: tuple[Mapping[str, Any], Mapping[str, Any]]) -> RewardBreakdown:
        p, g = pair
        if "response" not in p or "answer" not in g:
            raise MalformedRecord("prediction records need 'response' and reference records need 'answer'")
        raw = g.get("entities")
        if raw is not None:
            # triplet files store anchored entities; plain references list node ids
            raw = [e.get("node_id") if isinstance(e, Mapping) else e for e in raw]
            raw = [e for e in raw if e]
        ents = model.reference_entities(raw, g.get("chain"))
        return model.score(str(p["response"]), str(g["answer"]), ents)

    return ordered_map(one, list(zip(preds, gts)), jobs)
