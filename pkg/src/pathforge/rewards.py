"""Knowledge-aware multi-granular reward: format + semantic + alpha * entity."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .errors import JudgeFailed, NotWellFormed, ServiceError, ValidationError
from .kg import KnowledgeGraph, NodeKind
from .prompts import JudgeKind, build_judge_prompt, parse_judge_score
from .reasoning import Anchorer, DEFAULT_ANCHOR_THRESHOLD, normalize_surface
from .services import EmbeddingProvider, LlmClient, cosine_similarity, embed_all, llm_request
from .text import tokenize

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.5
DEFAULT_EPSILON = 1e-8

TAGS = ("observe", "think", "answer")


# ---------------------------------------------------------------------------
# structured responses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StructuredResponse:
    observe: str = ""
    think: str = ""
    answer: str = ""
    well_formed: bool = False

    def render(self) -> str:
        return f"<observe>{self.observe}</observe>\n<think>{self.think}</think>\n<answer>{self.answer}</answer>"


def parse_structured(text: str) -> StructuredResponse:
    """Pull the observe/think/answer blocks out of a model response.

    ``well_formed`` demands each open and close tag exactly once, in the
    order observe, think, answer, with non-empty content.  Text outside the
    tags is ignored.  Field values come from the first block of each tag
    even when the response is malformed.
    """
    fields: dict[str, str] = {}
    ok = True
    last = -1
    for tag in TAGS:
        opens = [m.start() for m in re.finditer(f"<{tag}>", text)]
        closes = [m.start() for m in re.finditer(f"</{tag}>", text)]
        m = re.search(f"<{tag}>(.*?)</{tag}>", text, flags=re.S)
        fields[tag] = m.group(1).strip() if m else ""
        if len(opens) != 1 or len(closes) != 1:
            ok = False
            continue
        if not last < opens[0] < closes[0]:
            ok = False
        last = closes[0]
        if not fields[tag]:
            ok = False
    return StructuredResponse(fields["observe"], fields["think"], fields["answer"], ok)


def render(r: StructuredResponse) -> str:
    return r.render()


def reward_format(r: StructuredResponse) -> int:
    return 1 if r.well_formed else 0


# ---------------------------------------------------------------------------
# semantic reward
# ---------------------------------------------------------------------------


def judge_score(kind: JudgeKind, pred: str, ref: str, judge: LlmClient) -> int:
    prompt = build_judge_prompt(kind, pred, ref)
    try:
        reply = llm_request(judge, prompt)
    except ServiceError as exc:
        if isinstance(exc, JudgeFailed):
            raise
        raise JudgeFailed(f"judge call failed: {exc}") from exc
    return parse_judge_score(reply)


def reward_semantic(pred_answer: str, gt_answer: str, judge: LlmClient) -> float:
    """Judge's 1..5 rubric score mapped linearly onto [0, 1]."""
    if not gt_answer.strip():
        raise ValidationError("ground-truth answer must be non-empty")
    s = judge_score(JudgeKind.ANSWER_SCORE, pred_answer, gt_answer, judge)
    return (s - 1) / 4


# ---------------------------------------------------------------------------
# entity reward
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EntitySet:
    """Canonical entity keys plus the text each key is embedded from."""

    entries: frozenset[str] = frozenset()
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        labels = {normalize_surface(k): v for k, v in self.labels.items()}
        keys = frozenset(normalize_surface(k) for k in self.entries)
        object.__setattr__(self, "entries", keys)
        object.__setattr__(self, "labels", {k: labels.get(k, k) for k in keys})

    @classmethod
    def of(cls, keys: Iterable[str], labels: Mapping[str, str] | None = None) -> "EntitySet":
        return cls(frozenset(keys), dict(labels or {}))

    @classmethod
    def from_nodes(cls, g: KnowledgeGraph, node_ids: Iterable[str]) -> "EntitySet":
        ids = list(node_ids)
        return cls(frozenset(ids), {i: g.nodes[i].name if i in g.nodes else i for i in ids})

    def __len__(self) -> int:
        return len(self.entries)

    def text(self, key: str) -> str:
        return self.labels.get(normalize_surface(key), key)


def soft_dice_terms(
    pred: Iterable[str],
    gt: Iterable[str],
    sim: Callable[[str, str], float],
    beta: float,
) -> float:
    """Soft intersection given a similarity function over keys.

    Exact overlap counts fully; each predicted key outside ``gt`` adds
    ``beta`` times its best similarity to any ``gt`` key, clamped to [0, 1].
    """
    if not 0.0 <= beta <= 1.0:
        raise ValidationError(f"beta must lie in [0, 1], got {beta}")
    pred, gt = set(pred), set(gt)
    exact = len(pred & gt)
    if not gt:
        return float(exact)
    soft = 0.0
    for e in sorted(pred - gt):
        soft += max(min(1.0, max(0.0, sim(e, g))) for g in sorted(gt))
    return exact + beta * soft


def _embedding_sim(pred: EntitySet, gt: EntitySet, embedder: EmbeddingProvider) -> Callable[[str, str], float]:
    keys = sorted(pred.entries | gt.entries)
    texts = {k: pred.text(k) if k in pred.entries else gt.text(k) for k in keys}
    vecs = embed_all(embedder, texts.values())
    return lambda a, b: cosine_similarity(vecs[texts[a]], vecs[texts[b]])


def soft_intersection(pred: EntitySet, gt: EntitySet, embedder: EmbeddingProvider, beta: float = DEFAULT_BETA) -> float:
    if not pred.entries - gt.entries or not gt.entries:
        return soft_dice_terms(pred.entries, gt.entries, lambda a, b: 0.0, beta)
    return soft_dice_terms(pred.entries, gt.entries, _embedding_sim(pred, gt, embedder), beta)


def soft_dice(intersection: float, n_pred: int, n_gt: int, epsilon: float = DEFAULT_EPSILON) -> float:
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    return min(1.0, max(0.0, 2.0 * intersection / (n_pred + n_gt + epsilon)))


def reward_entity(
    pred: EntitySet,
    gt: EntitySet,
    embedder: EmbeddingProvider,
    beta: float = DEFAULT_BETA,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """Soft-Dice agreement between predicted and reference entity sets, in [0, 1]."""
    if not pred.entries:
        soft_dice_terms((), (), lambda a, b: 0.0, beta)  # still validates beta
        return 0.0
    return soft_dice(soft_intersection(pred, gt, embedder, beta), len(pred), len(gt), epsilon)


_STOPWORDS = frozenset(
    """a an and are as at be been by for from has have in into is it its of on or that the their there these
    this those to was were which with within without we our this not no also such than then thus therefore
    shows show seen present presents noted observed consistent suggest suggests suggesting indicates
    indicating""".split()
)


class EntityExtractor:
    """Finds graph entities mentioned in free text.

    Node names (and aliases) are matched longest-first over the token
    stream; stretches of leftover content words are then offered to the
    anchorer, which may still link them through embedding similarity.
    """

    def __init__(self, g: KnowledgeGraph, embedder: EmbeddingProvider | None, threshold: float = DEFAULT_ANCHOR_THRESHOLD, max_ngram: int = 3):
        self.g = g
        self.anchorer = Anchorer(g, embedder, threshold)
        self.max_ngram = max_ngram
        self._phrases: dict[tuple[str, ...], str] = {}
        for n in sorted(g.nodes.values(), key=lambda n: n.id):
            for s in n.surface_forms:
                toks = tuple(tokenize(s))
                if toks and toks not in self._phrases:
                    self._phrases[toks] = n.id
        self._longest = max((len(k) for k in self._phrases), default=0)

    def scan(self, text: str) -> tuple[list[str], list[list[str]]]:
        """Exact longest-match hits and the uncovered runs of content words."""
        toks = tokenize(text)
        hits: list[str] = []
        runs: list[list[str]] = [[]]
        i = 0
        while i < len(toks):
            for n in range(min(self._longest, len(toks) - i), 0, -1):
                nid = self._phrases.get(tuple(toks[i : i + n]))
                if nid is not None:
                    hits.append(nid)
                    runs.append([])
                    i += n
                    break
            else:
                if toks[i] in _STOPWORDS:
                    runs.append([])
                else:
                    runs[-1].append(toks[i])
                i += 1
        return hits, [r for r in runs if r]

    def extract(self, text: str) -> EntitySet:
        hits, runs = self.scan(text)
        found = list(dict.fromkeys(hits))
        all_kinds = frozenset(NodeKind)
        for run in runs:
            for n in range(min(self.max_ngram, len(run)), 0, -1):
                for i in range(len(run) - n + 1):
                    nid, _, _ = self.anchorer.anchor_text(" ".join(run[i : i + n]), all_kinds)
                    if nid is not None and nid not in found:
                        found.append(nid)
        return EntitySet.from_nodes(self.g, found)


def extract_reward_entities(
    r: StructuredResponse,
    g: KnowledgeGraph,
    embedder: EmbeddingProvider | None,
    threshold: float = DEFAULT_ANCHOR_THRESHOLD,
) -> EntitySet:
    if not r.well_formed:
        raise NotWellFormed("entities are only extracted from well-formed responses")
    return EntityExtractor(g, embedder, threshold).extract(f"{r.observe}\n{r.think}")


# ---------------------------------------------------------------------------
# total
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: int
    r_semantic: float
    r_entity: float
    alpha: float
    total: float

    def to_dict(self) -> dict[str, Any]:
        return {"format": self.r_format, "semantic": self.r_semantic, "entity": self.r_entity, "alpha": self.alpha, "total": self.total}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RewardBreakdown":
        return total_reward(int(d["format"]), float(d["semantic"]), float(d["entity"]), float(d["alpha"]))


def total_reward(r_format: int, r_semantic: float, r_entity: float, alpha: float = DEFAULT_ALPHA) -> RewardBreakdown:
    if r_format not in (0, 1):
        raise ValidationError(f"format reward must be 0 or 1, got {r_format}")
    if not 0.0 <= r_semantic <= 1.0 or not 0.0 <= r_entity <= 1.0:
        raise ValidationError("semantic and entity rewards must lie in [0, 1]")
    if alpha < 0:
        raise ValidationError("alpha must be nonnegative")
    return RewardBreakdown(r_format, r_semantic, r_entity, alpha, r_format + r_semantic + alpha * r_entity)


@dataclass
class RewardModel:
    """Scores full responses against a reference answer and entity set."""

    g: KnowledgeGraph
    embedder: EmbeddingProvider
    judge: LlmClient
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON
    threshold: float = DEFAULT_ANCHOR_THRESHOLD

    def __post_init__(self) -> None:
        self._extractor = EntityExtractor(self.g, self.embedder, self.threshold)

    def reference_entities(self, node_ids: Iterable[str] | None = None, chain: str | None = None) -> EntitySet:
        """Stored anchors when given, otherwise re-extracted from the reference chain."""
        if node_ids is not None:
            return EntitySet.from_nodes(self.g, node_ids)
        if chain:
            return self._extractor.extract(chain)
        return EntitySet()

    def score(self, response: str, gt_answer: str, gt_entities: EntitySet) -> RewardBreakdown:
        r = parse_structured(response)
        fmt = reward_format(r)
        sem = reward_semantic(r.answer, gt_answer, self.judge)
        if r.well_formed:
            pred = self._extractor.extract(f"{r.observe}\n{r.think}")
            ent = reward_entity(pred, gt_entities, self.embedder, self.beta, self.epsilon)
        else:
            ent = 0.0
        return total_reward(fmt, sem, ent, self.alpha)
