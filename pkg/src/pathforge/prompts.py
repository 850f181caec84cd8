"""Judge prompts for answer scoring and reasoning evaluation, plus their offline rubric.

The three rubric prompts are reproduced word for word from the published
evaluation protocol; only the slot markers are ours.  ``parse_judge_score``
is the single place replies are turned into integers.
"""

from __future__ import annotations

import re
from enum import Enum

from .errors import JudgeOutOfRange
from .services import Role, register_mock_rule
from .text import normalize_answer, split_sentences, tokenize


class JudgeKind(str, Enum):
    ANSWER_SCORE = "AnswerScore"
    A_SCORE = "AScore"
    Q_SCORE = "QScore"


ANSWER_SCORE_PROMPT = """You are a senior pathologist with 20+ years of clinical experience. Your task is to score the model's answer to a medical visual question based on its clinical accuracy compared to the ground truth diagnosis.

Scoring Criteria (1-5):
5: Perfectly correct. Clinically equivalent to ground truth, uses precise terminology, no errors.
4: Mostly correct. Minor phrasing issues (e.g., word order), but clinically sound and accurate.
3: Partially correct. Captures key elements but misses critical details (e.g., tumor grade, margin status).
2: Related but incorrect. Mentions a relevant category but gets the specific diagnosis wrong.
1: Incorrect or irrelevant. Hallucinated, off-topic, or contradicts the ground truth.

Instructions:
- Focus on clinical meaning, not exact wording.
- Treat standard synonyms and abbreviations (e.g., "IDC") as acceptable.
- Penalize overgeneralization or inclusion of false information.
- Binary answers: incorrect responses must receive a low score (1 or 2).

Ground Truth: <<<{ground_truth}>>>
Model Prediction: <<<{model_output}>>>

Constraint: Respond ONLY with a single integer from 1 to 5."""

Q_SCORE_PROMPT = """You are an expert in computational pathology with extensive experience in histopathological analysis. Please evaluate the following AI-generated interpretation of a pathology image based on the quality of its reasoning process.

Assessment Criteria:
1. Logical Clarity: Is the argument presented in a clear, stepwise manner? Are conclusions supported by prior statements without gaps or contradictions?
2. Evidence Alignment: Does the reasoning explicitly connect each claim to observable morphological features (e.g., nuclear size, chromatin pattern, architecture)?
3. Professional Rigor: Are pathological terms used precisely? Does the reasoning reflect sound principles and avoid speculative interpretations?
4. Explainability: Would a practicing pathologist find the reasoning transparent? Does it articulate how visual findings lead to conclusions?
5. Comprehensiveness: Does it address relevant diagnostic features and acknowledge key differential considerations or limitations?

Scoring Scale (for each dimension and overall):
5 = Excellent    4 = Good    3 = Fair    2 = Poor    1 = Very poor

AI-generated reasoning to evaluate: <<<{model_reasoning}>>>

Respond ONLY with a single integer from 1 to 5 giving the overall score."""

A_SCORE_PROMPT = """You are a senior pathologist with extensive experience in diagnostic reasoning. Below are two pieces of text:
- Reference Reasoning: The gold-standard explanation provided by an expert pathologist.
- Model Reasoning: The reasoning generated by an AI system analyzing the same pathology image.

Task: Your task is to score the Model Reasoning on a scale of 1 to 5 based on its factual and logical alignment with the Reference Reasoning. Focus on whether the model captures the same key observations, interpretive steps, and diagnostic logic.

Scoring Criteria:
5: Nearly identical. Captures all critical findings and implications correctly in a similar reasoning flow.
4: Strong alignment. Minor omissions or rephrasing, but no meaningful deviation in logic or facts.
3: Partial alignment. Includes some correct elements but misses/misrepresents key diagnostic features.
2: Weak alignment. Mentions related concepts but diverges significantly or omits essential evidence.
1: Minimal/No alignment. Contains hallucinations, contradictions, or fails to reflect expert reasoning.

Reference Reasoning: <<<{reference_reasoning}>>>
Model Reasoning: <<<{model_reasoning}>>>

Respond ONLY with a single integer from 1 to 5."""

_MARKERS = {
    JudgeKind.ANSWER_SCORE: "score the model's answer to a medical visual question",
    JudgeKind.A_SCORE: "factual and logical alignment with the Reference Reasoning",
    JudgeKind.Q_SCORE: "based on the quality of its reasoning process",
}


def _clean(text: str) -> str:
    # the slot delimiters must not appear inside slot values
    return text.replace("<<<", "« ").replace(">>>", " »")


def build_judge_prompt(kind: JudgeKind | str, pred: str, ref: str = "") -> str:
    kind = JudgeKind(kind)
    if kind is JudgeKind.ANSWER_SCORE:
        return ANSWER_SCORE_PROMPT.format(ground_truth=_clean(ref), model_output=_clean(pred))
    if kind is JudgeKind.A_SCORE:
        return A_SCORE_PROMPT.format(reference_reasoning=_clean(ref), model_reasoning=_clean(pred))
    return Q_SCORE_PROMPT.format(model_reasoning=_clean(pred))


_INT = re.compile(r"(?<![\w.])[+-]?\d+(?!\.\d)(?!\w)")


def parse_judge_score(reply: str) -> int:
    """First standalone integer in ``reply``; it must lie in 1..5."""
    m = _INT.search(reply)
    if m is None:
        raise JudgeOutOfRange(f"judge reply carries no integer score: {reply!r}")
    s = int(m.group())
    if not 1 <= s <= 5:
        raise JudgeOutOfRange(f"judge score {s} outside 1..5")
    return s


# ---------------------------------------------------------------------------
# offline rubric
# ---------------------------------------------------------------------------


def slots(prompt: str) -> list[str]:
    return re.findall(r"<<<(.*?)>>>", prompt, flags=re.S)


def token_f1(pred: str, ref: str) -> float:
    p, r = tokenize(pred), tokenize(ref)
    if not p or not r:
        return 0.0
    common = 0
    pool = list(r)
    for t in p:
        if t in pool:
            pool.remove(t)
            common += 1
    if common == 0:
        return 0.0
    prec, rec = common / len(p), common / len(r)
    return 2 * prec * rec / (prec + rec)


def mock_pair_score(pred: str, ref: str) -> int:
    """5 for matching normalized text, 1 for an empty prediction, else 1 + round(4 * token F1)."""
    if not normalize_answer(pred):
        return 1
    if normalize_answer(pred) == normalize_answer(ref):
        return 5
    return 1 + int(4 * token_f1(pred, ref) + 0.5)


def mock_quality_score(reasoning: str) -> int:
    """1 for empty text, otherwise one point per sentence on top of 1, capped at 5."""
    if not normalize_answer(reasoning):
        return 1
    return min(5, 1 + len(split_sentences(reasoning)))


def _answer_rule(prompt: str) -> str:
    ref, pred = slots(prompt)[:2]
    return str(mock_pair_score(pred, ref))


def _a_rule(prompt: str) -> str:
    ref, pred = slots(prompt)[:2]
    return str(mock_pair_score(pred, ref))


def _q_rule(prompt: str) -> str:
    (reasoning,) = slots(prompt)[:1]
    return str(mock_quality_score(reasoning))


register_mock_rule(Role.JUDGE, _MARKERS[JudgeKind.ANSWER_SCORE], _answer_rule)
register_mock_rule(Role.JUDGE, _MARKERS[JudgeKind.A_SCORE], _a_rule)
register_mock_rule(Role.JUDGE, _MARKERS[JudgeKind.Q_SCORE], _q_rule)
