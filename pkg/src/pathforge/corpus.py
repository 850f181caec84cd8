"""Reasoning-chain segmentation and the trajectory-masked SFT corpus.

Every chain of L steps yields L training samples: the sample for truncation
index m shows steps 1..m-1 as context and asks for steps m..L plus the
answer.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import EmptyChain, IoFailure, MalformedRecord, ValidationError
from .text import DEFAULT_ABBREVIATIONS, split_sentences

STEP_SEPARATOR = " "
CONCLUSION_CUES = ("final diagnosis", "conclusion:")

_STEP_MARK = re.compile(r"\(\s*\$?\s*s_\{?\s*(\d+)\s*\}?\s*\$?\s*\)")
_ANSWER_MARK = re.compile(r"\(\s*\$?\s*a\s*\$?\s*\)")
_ANY_MARK = re.compile(f"{_STEP_MARK.pattern}|{_ANSWER_MARK.pattern}")
_STEP_PREFIX = re.compile(r"\[Step\s+\d+\s*(?::[^\]]*)?\]\s*")


@dataclass(frozen=True)
class ReasoningChain:
    steps: tuple[str, ...]
    answer: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise EmptyChain("a reasoning chain needs at least one step")
        if any(not s.strip() for s in self.steps):
            raise ValidationError("reasoning steps must be non-empty")

    @property
    def L(self) -> int:
        return len(self.steps)

    def text(self) -> str:
        return STEP_SEPARATOR.join(self.steps)


def _has_cue(segment: str) -> bool:
    low = segment.lower()
    return any(c in low for c in CONCLUSION_CUES)


def _split_marked(text: str) -> tuple[list[str], int | None]:
    """Segments ended by ``(s_k)``/``(a)`` markers, and the index of the answer segment."""
    segments: list[str] = []
    answer_at = None
    start = 0
    for m in _ANY_MARK.finditer(text):
        piece = _STEP_PREFIX.sub("", text[start : m.start()]).strip()
        if piece:
            if _ANSWER_MARK.fullmatch(m.group()):
                answer_at = len(segments)
            segments.append(piece)
        start = m.end()
    tail = _STEP_PREFIX.sub("", text[start:]).strip()
    if tail:
        segments.append(tail)
    return segments, answer_at


def _split_prefixed(text: str) -> list[str]:
    pieces = _STEP_PREFIX.split(text)
    return [p.strip() for p in pieces if p.strip()]


def segment_chain(c: str, abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS) -> ReasoningChain:
    """Split chain text into steps and a final answer.

    Explicit step markers win, then ``[Step k: ...]`` prefixes, then
    sentence boundaries.  The answer is the segment tagged ``(a)`` if any;
    otherwise the last segment carrying a conclusion cue; otherwise the
    last segment.  A chain with a single segment uses it as both its only
    step and its answer.
    """
    if not c or not c.strip():
        raise EmptyChain("chain text is empty")
    answer_at = None
    if _ANY_MARK.search(c):
        segments, answer_at = _split_marked(c)
    elif _STEP_PREFIX.search(c):
        segments = _split_prefixed(c)
    else:
        segments = split_sentences(c.strip(), frozenset(abbreviations))
    if not segments:
        raise EmptyChain("chain contains no text besides markers")
    if len(segments) == 1:
        return ReasoningChain((segments[0],), segments[0])
    if answer_at is None:
        cued = [i for i, s in enumerate(segments) if _has_cue(s)]
        answer_at = cued[-1] if cued else len(segments) - 1
    steps = segments[:answer_at] + segments[answer_at + 1 :]
    return ReasoningChain(tuple(steps), segments[answer_at])


@dataclass(frozen=True)
class SftSample:
    case_ref: str
    question: str
    context: tuple[str, ...]
    target_steps: tuple[str, ...]
    target_answer: str
    m: int
    L: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "context", tuple(self.context))
        object.__setattr__(self, "target_steps", tuple(self.target_steps))
        if not 1 <= self.m <= self.L:
            raise ValidationError(f"truncation index m={self.m} outside 1..{self.L}")
        if len(self.context) != self.m - 1 or len(self.target_steps) != self.L - self.m + 1:
            raise ValidationError("context and target lengths disagree with m and L")

    @property
    def steps(self) -> tuple[str, ...]:
        return self.context + self.target_steps

    def context_text(self) -> str:
        return STEP_SEPARATOR.join(self.context)

    def target_text(self) -> str:
        """Remaining steps followed by the answer, as the model must produce them."""
        return STEP_SEPARATOR.join(self.target_steps + (self.target_answer,))

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_ref": self.case_ref,
            "question": self.question,
            "context": list(self.context),
            "target_steps": list(self.target_steps),
            "target_answer": self.target_answer,
            "m": self.m,
            "L": self.L,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SftSample":
        return cls(
            case_ref=str(d["case_ref"]),
            question=str(d["question"]),
            context=tuple(str(s) for s in d["context"]),
            target_steps=tuple(str(s) for s in d["target_steps"]),
            target_answer=str(d["target_answer"]),
            m=int(d["m"]),
            L=int(d["L"]),
        )


def augment_trajectories(
    chain: ReasoningChain,
    case_ref: str,
    question: str,
    sample_k: int | None = None,
    seed: int | None = None,
) -> list[SftSample]:
    """One sample per truncation index m = 1..L, in ascending m.

    With ``sample_k`` only that many distinct m values are drawn (seeded),
    still returned in ascending order.
    """
    ms = list(range(1, chain.L + 1))
    if sample_k is not None:
        if sample_k < 1:
            raise ValidationError("sample_k must be >= 1")
        ms = sorted(random.Random(seed).sample(ms, min(sample_k, chain.L)))
    return [
        SftSample(case_ref, question, chain.steps[: m - 1], chain.steps[m - 1 :], chain.answer, m, chain.L)
        for m in ms
    ]


def dumps_sample(s: SftSample) -> str:
    return json.dumps(s.to_dict(), ensure_ascii=False)


def emit_corpus(samples: Sequence[SftSample], path: str | Path) -> int:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for s in samples:
                f.write(dumps_sample(s) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write corpus to {path}: {exc}") from exc
    return len(samples)


def load_corpus(path: str | Path) -> list[SftSample]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read corpus {path}: {exc}") from exc
    out = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(SftSample.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"{path}:{no}: {exc}") from exc
    return out
