"""Knowledge-constrained triplet generation and the three-check quality filter."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import GenerationFailed, JudgeFailed, NoPaths, ServiceError, UnparseableResponse
from .prompts import slots
from .reasoning import AnchoredEntity, PathRole, ReasoningPath
from .rewards import parse_structured
from .services import LlmClient, Role, llm_request, register_mock_rule
from .text import answers_align, split_sentences

log = logging.getLogger(__name__)

DEFAULT_QUESTION = "What is the most likely diagnosis?"

GENERATION_TEMPLATES: dict[str, str] = {
    "Option1": (
        "You are an expert AI pathologist. Carefully analyze the provided whole slide image (WSI) to answer the following question.\n"
        "Follow these steps:\n"
        "1. Observe and describe key histopathological findings relevant to the question.\n"
        "2. Perform step-by-step clinical reasoning to connect findings with your conclusion.\n"
        "3. Provide the final concise answer.\n"
        "Please respond in the exact format below:\n"
        "<observe> Histopathological Findings: ... </observe>\n"
        "<think> Clinical Reasoning: ... </think>\n"
        "<answer> Final Answer: ... </answer>\n"
        "Question: {Input_question}"
    ),
    "Option2": (
        "You are an AI pathology assistant. Answer the following question based on the provided WSI. "
        "Please structure your reasoning clearly and respond in this exact format:\n"
        "<observe> Histopathological Findings: Describe key findings. </observe>\n"
        "<think> Clinical Reasoning: Explain your diagnostic reasoning step-by-step. </think>\n"
        "<answer> Final Answer: Provide the short, conclusive answer. </answer>\n"
        "Question: {Input_question}"
    ),
    "Option3": (
        "You are a digital pathology consultant. Analyze the provided WSI and answer the question using structured reasoning. "
        "Respond strictly in this format:\n"
        "<observe> ... </observe> <think> ... </think> <answer> ... </answer>\n"
        "Question: {Input_question}"
    ),
}

PATH_SECTION = "Knowledge Graph Reasoning Paths"
ENTITY_SECTION = "Anchored Entities"
GROUNDING_RULE = (
    "Ground every finding and every inference strictly in the reasoning paths above. "
    "Do not introduce entities or relations that do not appear in them. "
    "State how the evidence supports the final diagnosis and how the alternatives are excluded."
)

_SECTION_PREFIXES = ("Histopathological Findings:", "Clinical Reasoning:", "Final Answer:")


def _one_line(text: str) -> str:
    return " ".join(text.split())


def build_generation_prompt(
    paths: Sequence[ReasoningPath],
    entities: Sequence[AnchoredEntity] = (),
    template: str = "Option1",
    question: str = DEFAULT_QUESTION,
) -> str:
    """Fill a response-format template and append the serialized graph evidence."""
    if not paths:
        raise NoPaths("a knowledge-constrained prompt needs at least one reasoning path")
    if template not in GENERATION_TEMPLATES:
        raise ValueError(f"unknown template {template!r}; expected one of {sorted(GENERATION_TEMPLATES)}")
    lines = [GENERATION_TEMPLATES[template].replace("{Input_question}", _one_line(question)), "", f"{PATH_SECTION}:"]
    for i, p in enumerate(paths, 1):
        lines.append(f"Path {i} ({p.role.value}): {p.render()}")
    if entities:
        lines += ["", f"{ENTITY_SECTION}:"]
        for e in entities:
            where = e.node_id if e.node_id is not None else "not in graph"
            lines.append(f"- {_one_line(e.mention.text)} [{e.mention.schema_kind.value}] -> {where}")
    lines += ["", GROUNDING_RULE]
    return "\n".join(lines)


_QUESTION_LINE = re.compile(r"^Question:[ \t]*(.*)$", re.M)


def question_from_prompt(prompt: str) -> str:
    found = _QUESTION_LINE.findall(prompt)
    return found[-1].strip() if found else ""


# ---------------------------------------------------------------------------
# triplets
# ---------------------------------------------------------------------------


@dataclass
class Triplet:
    question: str
    answer: str
    chain: str
    anchored_entities: list[AnchoredEntity] = field(default_factory=list)
    paths: list[ReasoningPath] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def eligible(self) -> bool:
        return bool(self.question.strip() and self.answer.strip() and self.chain.strip())

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "answer": self.answer,
            "chain": self.chain,
            "entities": [e.to_dict() for e in self.anchored_entities],
            "paths": [p.to_dict() for p in self.paths],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Triplet":
        return cls(
            question=str(d["question"]),
            answer=str(d["answer"]),
            chain=str(d["chain"]),
            anchored_entities=[AnchoredEntity.from_dict(e) for e in d.get("entities", [])],
            paths=[ReasoningPath.from_dict(p) for p in d.get("paths", [])],
            meta=dict(d.get("meta", {})),
        )


def _strip_prefix(text: str) -> str:
    for p in _SECTION_PREFIXES:
        if text.startswith(p):
            return text[len(p) :].strip()
    return text


def _path_names(paths: Iterable[ReasoningPath]) -> dict[str, str]:
    names: dict[str, str] = {}
    for p in paths:
        for nid, name in zip(p.nodes, p.names):
            names.setdefault(nid, name)
    return names


def synthesize_triplet(
    prompt: str,
    generator: LlmClient,
    meta: Mapping[str, Any] | None = None,
    entities: Sequence[AnchoredEntity] = (),
    paths: Sequence[ReasoningPath] = (),
    question: str | None = None,
) -> Triplet:
    """Ask the generator for a tagged response and turn it into a triplet.

    The chain is the observe block followed by the think block; the answer
    is the answer block.  Anchored entities that occur on the paths but are
    never named in the chain are listed under ``meta["missing_entities"]``.
    """
    try:
        reply = llm_request(generator, prompt)
    except ServiceError as exc:
        raise GenerationFailed(f"generation request failed: {exc}") from exc
    r = parse_structured(reply)
    if not r.well_formed:
        raise UnparseableResponse("generator reply lacks a well-formed observe/think/answer block")
    chain = f"{_strip_prefix(r.observe)} {_strip_prefix(r.think)}".strip()
    answer = _strip_prefix(r.answer)
    q = question if question is not None else question_from_prompt(prompt)

    on_paths = _path_names(paths)
    missing = []
    for e in entities:
        if e.node_id is not None and e.node_id in on_paths and not answers_align(chain, on_paths[e.node_id]):
            if on_paths[e.node_id] not in missing:
                missing.append(on_paths[e.node_id])
    out_meta = dict(meta or {})
    out_meta["missing_entities"] = missing
    return Triplet(q, answer, chain, list(entities), list(paths), out_meta)


# ---------------------------------------------------------------------------
# offline generator
# ---------------------------------------------------------------------------

_PATH_LINE = re.compile(r"^Path \d+ \((\w+)\): (.+)$", re.M)
_HOP = re.compile(r"\[([^\]]+)\] (?:--(\S+?)-->|<--(\S+?)--) (?=\[)")


def _parse_rendered(rendered: str) -> tuple[list[str], list[tuple[str, bool]]]:
    names = re.findall(r"\[([^\]]+)\]", rendered)
    hops = [(m.group(2) or m.group(3), m.group(2) is not None) for m in _HOP.finditer(rendered)]
    return names, hops


def _relation_words(rel: str) -> str:
    return re.sub(r"(?<=[a-z])(?=[A-Z])", " ", rel).lower()


def _mock_generation(prompt: str) -> str:
    parsed = [(PathRole(role), *_parse_rendered(text)) for role, text in _PATH_LINE.findall(prompt)]
    findings: list[str] = []
    sentences: list[str] = []
    for role, names, hops in parsed:
        if names and names[0] not in findings:
            findings.append(names[0])
        steps = []
        for (rel, fwd), a, b in zip(hops, names, names[1:]):
            src, dst = (a, b) if fwd else (b, a)
            steps.append(f"{src} {_relation_words(rel)} {dst}")
        if steps:
            sentences.append(f"{role.value} evidence: " + "; ".join(steps) + ".")
    supports = [names for role, names, _ in parsed if role is PathRole.SUPPORT and names]
    dx = supports[0][-1] if supports else (parsed[0][1][-1] if parsed and parsed[0][1] else "undetermined")
    observe = "Histopathological Findings: " + ", ".join(findings) + "."
    think = "Clinical Reasoning: " + " ".join(sentences) + f" Therefore, the final diagnosis is {dx}."
    return f"<observe>{observe}</observe>\n<think>{think}</think>\n<answer>Final Answer: {dx}</answer>"


register_mock_rule(Role.GENERATOR, PATH_SECTION, _mock_generation)


# ---------------------------------------------------------------------------
# quality filter
# ---------------------------------------------------------------------------

CONSISTENCY_PROMPT = """TASK: logical-consistency check
You are reviewing a pathology reasoning chain together with the answer it is meant to justify. Decide whether the conclusion stated at the end of the reasoning agrees with the answer or contradicts it.

Reasoning: <<<{chain}>>>
Answer: <<<{answer}>>>

Reply with exactly one word: CONSISTENT or CONTRADICTS."""

BLIND_PROMPT = """TASK: blind answer prediction
You cannot see the slide and you are given no reasoning. Using only the wording of the question below, give your best guess at its answer in a few words.

Question: <<<{question}>>>"""

SUFFICIENCY_PROMPT = """TASK: answer from reasoning only
Read the reasoning below and state, in a few words, the answer it leads to. Use nothing except the reasoning itself.

Reasoning: <<<{chain}>>>"""

CHECKS = ("consistency", "visual_dependency", "sufficiency")


def _slot(text: str) -> str:
    return text.replace("<<<", "« ").replace(">>>", " »")


def _ask(judge: LlmClient, prompt: str, check: str) -> str:
    try:
        return llm_request(judge, prompt)
    except ServiceError as exc:
        raise JudgeFailed(f"{check} judge call failed: {exc}") from exc


def _require(t: Triplet, *fields_: str) -> None:
    for f in fields_:
        if not getattr(t, f).strip():
            raise JudgeFailed(f"triplet has an empty {f}")


def check_consistency(t: Triplet, judge: LlmClient) -> bool:
    """False when the judge finds the chain's conclusion contradicting the answer."""
    _require(t, "question", "answer", "chain")
    reply = _ask(judge, CONSISTENCY_PROMPT.format(chain=_slot(t.chain), answer=_slot(t.answer)), "consistency")
    word = reply.strip().split()[0].strip(".,:;!").upper() if reply.strip() else ""
    if word.startswith("CONSISTENT"):
        return True
    if word.startswith("CONTRADICT"):
        return False
    raise JudgeFailed(f"consistency judge gave an unusable verdict: {reply!r}")


def check_visual_dependency(t: Triplet, judge: LlmClient) -> bool:
    """False when a question-only guess already matches the answer."""
    _require(t, "question", "answer", "chain")
    guess = _ask(judge, BLIND_PROMPT.format(question=_slot(t.question)), "visual_dependency")
    return not answers_align(guess, t.answer)


def check_sufficiency(t: Triplet, judge: LlmClient) -> bool:
    """True when the answer inferred from the chain alone aligns with the stated answer."""
    _require(t, "question", "answer", "chain")
    inferred = _ask(judge, SUFFICIENCY_PROMPT.format(chain=_slot(t.chain)), "sufficiency")
    return answers_align(inferred, t.answer)


def _mock_consistency(prompt: str) -> str:
    chain, answer = slots(prompt)[:2]
    sentences = split_sentences(chain)
    final = sentences[-1] if sentences else ""
    return "CONSISTENT" if answers_align(final, answer) else "CONTRADICTS"


def _mock_echo(prompt: str) -> str:
    (text,) = slots(prompt)[:1]
    return text


register_mock_rule(Role.JUDGE, "TASK: logical-consistency check", _mock_consistency)
register_mock_rule(Role.JUDGE, "TASK: blind answer prediction", _mock_echo)
register_mock_rule(Role.JUDGE, "TASK: answer from reasoning only", _mock_echo)


@dataclass(frozen=True)
class FilterVerdict:
    consistency: bool
    visual_dependency: bool
    sufficiency: bool
    reasons: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "reasons", tuple(self.reasons))

    @property
    def kept(self) -> bool:
        return self.consistency and self.visual_dependency and self.sufficiency

    def to_dict(self) -> dict[str, Any]:
        return {
            "kept": self.kept,
            "consistency": self.consistency,
            "visual_dependency": self.visual_dependency,
            "sufficiency": self.sufficiency,
            "reasons": list(self.reasons),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FilterVerdict":
        v = cls(bool(d["consistency"]), bool(d["visual_dependency"]), bool(d["sufficiency"]), tuple(d.get("reasons", ())))
        if "kept" in d and bool(d["kept"]) != v.kept:
            raise ValueError("verdict 'kept' disagrees with its three checks")
        return v


_CHECK_FNS = {
    "consistency": check_consistency,
    "visual_dependency": check_visual_dependency,
    "sufficiency": check_sufficiency,
}


def judge_triplet(t: Triplet, judge: LlmClient) -> FilterVerdict:
    """Run all three checks; a failed judge call counts as a failed check."""
    flags: dict[str, bool] = {}
    reasons: list[str] = []
    for name in CHECKS:
        try:
            flags[name] = _CHECK_FNS[name](t, judge)
        except JudgeFailed as exc:
            log.warning("%s check failed for %s: %s", name, t.meta.get("case_id", "?"), exc)
            flags[name] = False
            reasons.append(f"{name}:judge_failed: {exc}")
            continue
        if not flags[name]:
            reasons.append(name)
    return FilterVerdict(flags["consistency"], flags["visual_dependency"], flags["sufficiency"], tuple(reasons))


@dataclass
class FilterResult:
    kept: list[Triplet]
    dropped: list[tuple[Triplet, FilterVerdict]]
    verdicts: list[FilterVerdict]


def filter_corpus(ts: Sequence[Triplet], judge: LlmClient, jobs: int = 1) -> FilterResult:
    """Judge every triplet and split the batch into kept and dropped, preserving order.

    With ``jobs > 1`` triplets are judged concurrently; the judge client's
    own in-flight cap still bounds simultaneous requests.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    if jobs == 1 or len(ts) < 2:
        verdicts = [judge_triplet(t, judge) for t in ts]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            verdicts = list(pool.map(lambda t: judge_triplet(t, judge), ts))
    kept = [t for t, v in zip(ts, verdicts) if v.kept]
    dropped = [(t, v) for t, v in zip(ts, verdicts) if not v.kept]
    return FilterResult(kept, dropped, verdicts)
