"""Small text utilities shared by the pipeline stages."""

from __future__ import annotations

import re
import string

DEFAULT_ABBREVIATIONS: frozenset[str] = frozenset({"e.g.", "i.e.", "vs.", "Dr.", "No."})

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")
_BOUNDARY = re.compile(r"[.?!](\s+)(?=[A-Z])")
_TOKEN = re.compile(r"[a-z0-9]+")


def normalize_answer(text: str) -> str:
    """Lowercase, replace punctuation with spaces, collapse whitespace."""
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def answers_align(candidate: str, answer: str) -> bool:
    """Whether the normalized ``answer`` occurs inside the normalized ``candidate``.

    Matching is on whole tokens, so "carcinoma" does not match inside
    "adenocarcinoma".
    """
    a = normalize_answer(answer)
    c = normalize_answer(candidate)
    if not a or not c:
        return False
    return f" {a} " in f" {c} "


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def split_sentences(text: str, abbreviations: frozenset[str] | set[str] = DEFAULT_ABBREVIATIONS) -> list[str]:
    """Split on ``.``, ``?`` or ``!`` followed by whitespace and a capital letter.

    A boundary is ignored when the word ending there is a listed abbreviation.
    """
    out: list[str] = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        end = m.start() + 1
        word = text[:end].split()[-1] if text[:end].split() else ""
        if word in abbreviations:
            continue
        piece = text[start:end].strip()
        if piece:
            out.append(piece)
        start = m.end()
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out
