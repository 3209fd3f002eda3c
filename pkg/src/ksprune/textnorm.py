"""Deterministic tokenization, lemmatization and stopword filtering.

Every similarity channel goes through this module, so everything in here is
pure, locale-independent and rule-driven: the same bytes in always produce
the same tokens out, on every platform. The rule tables (stopwords, lemma
exceptions, verb stems) ship as frozen plain-text resources; editing them
changes similarity scores.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from pathlib import Path

# Token sequences are plain list[str] (ordered, with repeats); token sets
# are plain set[str]. No wrapper types.

# Possessive 's (straight or curly apostrophe) after a letter, not followed
# by another word character: "dog's" -> "dog", "1990's" untouched.
_POSSESSIVE_RE = re.compile(r"(?<=[^\W\d_])['’]s(?![^\W_])", re.UNICODE)
# Maximal runs of Unicode letters/digits (underscore excluded).
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

_VOWELS = frozenset("aeiou")

# Nouns ending in -men that are not plurals of -man.
_MEN_KEEP = frozenset({
    "acumen", "regimen", "specimen", "abdomen", "omen", "semen", "lumen",
    "hymen", "ramen", "stamen", "bitumen", "albumen", "amen",
})


def _read_resource(name: str) -> list[str]:
    text = resources.files("ksprune.resources").joinpath(name).read_text("utf-8")
    lines = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


def _load_exceptions() -> dict[str, str]:
    table = {}
    for line in _read_resource("lemma_exceptions.txt"):
        surface, lemma = line.split("\t")
        table[surface] = lemma
    return table


LEMMA_EXCEPTIONS: dict[str, str] = _load_exceptions()
LEMMA_UNCHANGED: frozenset = frozenset(_read_resource("lemma_unchanged.txt"))
VERB_STEMS: frozenset = frozenset(_read_resource("verb_stems.txt"))
DEFAULT_STOPWORDS: frozenset = frozenset(_read_resource("stopwords.txt"))


def load_stopwords(path: str | Path | None = None) -> frozenset:
    """Stopword set from an override file, or the embedded default list."""
    if path is None:
        return DEFAULT_STOPWORDS
    words = set()
    for line in Path(path).read_text("utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


def tokenize(text: str) -> list[str]:
    """Split text into lowercase alphanumeric tokens.

    Tokens are maximal runs of Unicode letters/digits; possessive 's is
    stripped first so "gland's" yields just "gland". Empty text gives [].
    """
    lowered = text.lower()
    stripped = _POSSESSIVE_RE.sub("", lowered)
    return _TOKEN_RE.findall(stripped)


def _is_cvc(base: str) -> bool:
    # consonant-vowel-consonant tail: the pattern that doubles its final
    # consonant when suffixed, so an undoubled surface implies a silent e.
    if len(base) < 3:
        return False
    a, b, c = base[-3], base[-2], base[-1]
    return c not in _VOWELS and c not in "wxy" and b in _VOWELS and a not in _VOWELS


def _reduce_verb(base: str) -> str | None:
    if len(base) < 2:
        return None
    if _is_cvc(base) and base + "e" in VERB_STEMS:
        return base + "e"
    if base in VERB_STEMS:
        return base
    if base + "e" in VERB_STEMS:
        return base + "e"
    if len(base) >= 3 and base[-1] == base[-2] and base[:-1] in VERB_STEMS:
        return base[:-1]
    return None


@lru_cache(maxsize=262144)
def lemmatize_token(tok: str) -> str:
    """Map one lowercase token to its lemma. Idempotent by construction."""
    if tok in LEMMA_EXCEPTIONS:
        return LEMMA_EXCEPTIONS[tok]
    if tok in LEMMA_UNCHANGED or len(tok) < 3:
        return tok

    # Regular verb endings, accepted only when a candidate stem is listed.
    if tok.endswith("ing") and len(tok) >= 5:
        reduced = _reduce_verb(tok[:-3])
        if reduced is not None:
            return reduced
        return tok
    if tok.endswith("ied") and len(tok) >= 5 and tok[:-3] + "y" in VERB_STEMS:
        return tok[:-3] + "y"
    if tok.endswith("ed") and len(tok) >= 4:
        reduced = _reduce_verb(tok[:-2])
        if reduced is not None:
            return reduced
        # not a listed verb; fall through (covers nouns like "bed", "seed")

    if tok.endswith("men") and len(tok) > 4 and tok not in _MEN_KEEP:
        return tok[:-3] + "man"

    if not tok.endswith("s"):
        return tok
    # Plural nouns (and 3rd-person verbs, which share the surface rules).
    if tok.endswith("ies") and len(tok) > 4:
        return tok[:-3] + "y"
    if tok.endswith(("ches", "shes", "sses", "xes")) and len(tok) > 4:
        return tok[:-2]
    if tok.endswith("oes") and len(tok) > 4:
        return tok[:-2]
    if tok.endswith("uses") and len(tok) > 5 and tok[-5] not in _VOWELS:
        return tok[:-2]
    if tok.endswith(("ss", "us", "is")):
        return tok
    if len(tok) > 3:
        return tok[:-1]
    return tok


def lemmatize(seq: list[str]) -> list[str]:
    """Lemmatize a token sequence, preserving order and multiplicity."""
    return [lemmatize_token(tok) for tok in seq]


def content_set(seq: list[str], drop_stopwords: bool = True,
                stopwords: frozenset | None = None) -> set[str]:
    """Unique tokens of a sequence, optionally with stopwords removed."""
    if not drop_stopwords:
        return set(seq)
    stop = DEFAULT_STOPWORDS if stopwords is None else stopwords
    return {tok for tok in seq if tok not in stop}


def norm_tokens(text: str) -> list[str]:
    """tokenize + lemmatize in one step (the shape every channel consumes)."""
    return lemmatize(tokenize(text))
