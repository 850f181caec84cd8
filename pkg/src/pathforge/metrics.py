"""Answer- and reasoning-quality metrics for the evaluation harness."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyReference, MalformedRecord, ValidationError
from .prompts import JudgeKind
from .rewards import judge_score
from .services import EmbeddingProvider, LlmClient, embed_all
from .text import tokenize

BLEU_MAX_N = 4


def _ngrams(toks: Sequence[str], n: int) -> Counter:
    return Counter(tuple(toks[i : i + n]) for i in range(len(toks) - n + 1))


def bleu(cand: Sequence[str], ref: Sequence[str], max_n: int = BLEU_MAX_N) -> float:
    """Sentence BLEU with a brevity penalty.

    A zero unigram precision gives 0.  Higher orders with no matches are
    smoothed to ``(0 + 1) / (total + 1)`` so short or partial matches do not
    collapse to 0.
    """
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        c, r = _ngrams(cand, n), _ngrams(ref, n)
        total = sum(c.values())
        match = sum(min(k, r[g]) for g, k in c.items())
        if n == 1 and match == 0:
            return 0.0
        p = match / total if match else 1.0 / (total + 1)
        log_sum += math.log(p)
    bp = 1.0 if len(cand) > len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return min(1.0, bp * math.exp(log_sum / max_n))


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def rouge_n(cand: Sequence[str], ref: Sequence[str], n: int) -> float:
    """F1 over clipped n-gram overlap.

    When neither side is long enough to hold an n-gram the score is 1 for
    identical token sequences and 0 otherwise.
    """
    c, r = _ngrams(cand, n), _ngrams(ref, n)
    tc, tr = sum(c.values()), sum(r.values())
    if tc == 0 and tr == 0:
        return 1.0 if list(cand) == list(ref) and cand else 0.0
    if tc == 0 or tr == 0:
        return 0.0
    overlap = sum(min(k, r[g]) for g, k in c.items())
    return _f1(overlap / tc, overlap / tr)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(cand: Sequence[str], ref: Sequence[str]) -> float:
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    return _f1(lcs / len(cand), lcs / len(ref))


def lexical_metrics(candidate: str, reference: str) -> dict[str, float]:
    ref = tokenize(reference)
    if not ref:
        raise EmptyReference("reference has no tokens")
    cand = tokenize(candidate)
    return {
        "bleu": bleu(cand, ref),
        "rouge1": rouge_n(cand, ref, 1),
        "rouge2": rouge_n(cand, ref, 2),
        "rougeL": rouge_l(cand, ref),
    }


def embedding_f1(candidate: str, reference: str, embedder: EmbeddingProvider) -> float:
    """Greedy token-matching F1 with cosines clamped to [0, 1]."""
    cand, ref = tokenize(candidate), tokenize(reference)
    if not ref:
        raise EmptyReference("reference has no tokens")
    if not cand:
        raise ValidationError("candidate has no tokens")
    vecs = embed_all(embedder, set(cand) | set(ref))
    C = np.stack([vecs[t] / np.linalg.norm(vecs[t]) for t in cand])
    R = np.stack([vecs[t] / np.linalg.norm(vecs[t]) for t in ref])
    sims = np.clip(C @ R.T, 0.0, 1.0)
    p = float(sims.max(axis=1).mean())
    r = float(sims.max(axis=0).mean())
    return min(1.0, _f1(p, r))


def judge_eval(pred: str, ref: str, kind: JudgeKind | str, judge: LlmClient) -> float:
    return float(judge_score(JudgeKind(kind), pred, ref, judge))


@dataclass(frozen=True)
class MetricReport:
    bleu: float
    rouge1: float
    rouge2: float
    rougeL: float
    embed_f1: float
    llm_score: float
    a_score: float
    q_score: float

    def __post_init__(self) -> None:
        for f in ("bleu", "rouge1", "rouge2", "rougeL", "embed_f1"):
            if not 0.0 <= getattr(self, f) <= 1.0:
                raise ValidationError(f"{f} must lie in [0, 1]")
        for f in ("llm_score", "a_score", "q_score"):
            if not 1.0 <= getattr(self, f) <= 5.0:
                raise ValidationError(f"{f} must lie in [1, 5]")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def evaluate_record(rec: Mapping[str, Any], embedder: EmbeddingProvider, judge: LlmClient) -> MetricReport:
    """Score one ``{"prediction", "reference"}`` pair.

    Optional ``prediction_reasoning`` / ``reference_reasoning`` fields feed
    the reasoning judges; without them the answers themselves are used.
    """
    pred, ref = str(rec["prediction"]), str(rec["reference"])
    pred_r = str(rec.get("prediction_reasoning") or pred)
    ref_r = str(rec.get("reference_reasoning") or ref)
    lex = lexical_metrics(pred, ref)
    emb = embedding_f1(pred, ref, embedder) if tokenize(pred) else 0.0
    return MetricReport(
        embed_f1=emb,
        llm_score=judge_eval(pred, ref, JudgeKind.ANSWER_SCORE, judge),
        a_score=judge_eval(pred_r, ref_r, JudgeKind.A_SCORE, judge),
        q_score=judge_eval(pred_r, "", JudgeKind.Q_SCORE, judge),
        **lex,
    )


def summarize(reports: Sequence[MetricReport]) -> dict[str, Any]:
    out: dict[str, Any] = {"count": len(reports)}
    for f in fields(MetricReport):
        vals = [getattr(r, f.name) for r in reports]
        out[f.name] = sum(vals) / len(vals) if vals else None
    return out


def evaluate_batch(records: Iterable[Mapping[str, Any]], embedder: EmbeddingProvider, judge: LlmClient) -> list[MetricReport]:
    out = []
    for i, rec in enumerate(records, 1):
        try:
            out.append(evaluate_record(rec, embedder, judge))
        except KeyError as exc:
            raise MalformedRecord(f"record {i} lacks field {exc}") from exc
    return out
