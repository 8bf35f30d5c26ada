"""Symptom query patterns and the matcher that decides WSSCI status.

A pattern is one phrase (single) or a main phrase plus a facet phrase
(double). All terms of a pattern must be found in the query; order does not
matter. A term ending in ``%`` is a prefix match.

Pattern file format (UTF-8, one record per line)::

    # comments and blank lines are ignored
    @mode token              # or: substring (for delimiter-free scripts)
    s-likely-corona | single | likely to be corona
    d-corona-cough  | double | corona% | cough

Fields are separated by ``|``; ``%`` is only allowed as the final character
of a term.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

SINGLE_PHRASES = (
    "likely to be corona",
    "likely to be corona-virus",
    "likely to be new type pneumonia",
)
MAIN_TERMS = ("corona%", "new type", "new type pneumonia")
FACET_TERMS = (
    "cough",
    "diarrhea",
    "coughing up phlegm",
    "slight fever",
    "headache",
    "cold",
    "fevered",
    "no fever",
    "without fever",
    "high fever",
    "develop fever",
    "runny nose",
    "chills",
    "throat",
    "chest",
    "phlegm",
    "feel tired",
    "weariness",
    "designated hospitals",
    "advice",
)

TOKEN_MODE = "token"
SUBSTRING_MODE = "substring"
_MODES = (TOKEN_MODE, SUBSTRING_MODE)
WILDCARD = "%"


class PatternError(ValueError):
    pass


class PatternFileError(PatternError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<patterns>'}:{line}: " if line is not None else ""
        super().__init__(where + message)


class DuplicatePatternIdError(PatternFileError):
    pass


class WildcardPositionError(PatternFileError):
    pass


def normalize_query(raw: str) -> str:
    """NFKC-normalize, casefold, trim and collapse internal whitespace."""
    return " ".join(unicodedata.normalize("NFKC", raw).casefold().split())


@dataclass(frozen=True)
class PatternTerm:
    text: str
    wildcard: bool = False

    def __post_init__(self):
        if not self.text:
            raise PatternError("pattern term text is empty")
        if WILDCARD in self.text:
            raise PatternError(f"term text {self.text!r} contains a raw wildcard")
        if normalize_query(self.text) != self.text:
            raise PatternError(f"term text {self.text!r} is not normalized")

    @classmethod
    def parse(cls, raw: str) -> "PatternTerm":
        text = normalize_query(raw)
        wildcard = text.endswith(WILDCARD)
        if wildcard:
            text = text[:-1].rstrip()
        if WILDCARD in text:
            raise PatternError(f"wildcard only allowed as trailing marker: {raw!r}")
        return cls(text, wildcard)

    @property
    def n_words(self) -> int:
        return self.text.count(" ") + 1

    def render(self) -> str:
        return self.text + (WILDCARD if self.wildcard else "")


@dataclass(frozen=True)
class QueryPattern:
    id: str
    kind: str
    terms: tuple[PatternTerm, ...]

    def __post_init__(self):
        expected = {"single": 1, "double": 2}.get(self.kind)
        if expected is None:
            raise PatternError(f"pattern {self.id!r}: kind must be single or double, got {self.kind!r}")
        if len(self.terms) != expected:
            raise PatternError(f"pattern {self.id!r}: {self.kind} patterns take {expected} term(s)")
        if sum(t.wildcard for t in self.terms) > 1:
            raise PatternError(f"pattern {self.id!r}: at most one wildcard term allowed")


@dataclass(frozen=True)
class MatchResult:
    pattern_ids: tuple[str, ...] = ()

    @property
    def matched(self) -> bool:
        return bool(self.pattern_ids)

    def __bool__(self) -> bool:
        return self.matched


@dataclass(frozen=True)
class PatternSet:
    patterns: tuple[QueryPattern, ...]
    source: str = "builtin"
    mode: str = TOKEN_MODE
    _max_words: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise PatternError(f"unknown matching mode {self.mode!r}")
        seen: set[str] = set()
        for pat in self.patterns:
            if pat.id in seen:
                raise PatternError(f"duplicate pattern id {pat.id!r}")
            seen.add(pat.id)
        words = [t.n_words for p in self.patterns for t in p.terms]
        object.__setattr__(self, "_max_words", max(words, default=1))

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.patterns]

    def with_patterns(self, extra: Iterable[QueryPattern]) -> "PatternSet":
        return PatternSet(self.patterns + tuple(extra), source=self.source, mode=self.mode)


def _slug(text: str) -> str:
    return text.replace(" ", "-")


def expand_default_patterns() -> PatternSet:
    """The builtin 63-pattern set: 3 single phrases plus 3 mains x 20 facets."""
    pats = [
        QueryPattern(f"s-{_slug(phrase)}", "single", (PatternTerm.parse(phrase),))
        for phrase in SINGLE_PHRASES
    ]
    for main in MAIN_TERMS:
        m = PatternTerm.parse(main)
        for facet in FACET_TERMS:
            pats.append(QueryPattern(f"d-{_slug(main)}+{_slug(facet)}", "double", (m, PatternTerm.parse(facet))))
    return PatternSet(tuple(pats), source="builtin")


def _ngrams(tokens: Sequence[str], max_n: int) -> dict[int, set[str]]:
    grams: dict[int, set[str]] = {}
    for n in range(1, min(max_n, len(tokens)) + 1):
        grams[n] = {" ".join(tokens[k : k + n]) for k in range(len(tokens) - n + 1)}
    return grams


def _term_matches(term: PatternTerm, grams: dict[int, set[str]]) -> bool:
    candidates = grams.get(term.n_words)
    if not candidates:
        return False
    if term.wildcard:
        return any(g.startswith(term.text) for g in candidates)
    return term.text in candidates


def match_query(patterns: PatternSet, query: str) -> MatchResult:
    """Evaluate every pattern against an already-normalized query."""
    if patterns.mode == SUBSTRING_MODE:
        hits = [p.id for p in patterns if all(t.text in query for t in p.terms)]
        return MatchResult(tuple(hits))
    grams = _ngrams(query.split(), patterns._max_words)
    hits = [p.id for p in patterns if all(_term_matches(t, grams) for t in p.terms)]
    return MatchResult(tuple(hits))


def dump_patterns(patterns: PatternSet) -> str:
    lines = [
        "# wssci pattern file v1",
        f"# source: {patterns.source}; {len(patterns)} patterns",
        f"@mode {patterns.mode}",
    ]
    for p in patterns:
        lines.append(" | ".join([p.id, p.kind, *(t.render() for t in p.terms)]))
    return "\n".join(lines) + "\n"


def parse_patterns(text: str, source: str = "<string>") -> PatternSet:
    mode = TOKEN_MODE
    pats: list[QueryPattern] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("@"):
            key, _, value = line[1:].partition(" ")
            if key != "mode" or value.strip() not in _MODES:
                raise PatternFileError(f"unknown directive {line!r}", lineno, source)
            mode = value.strip()
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) < 3:
            raise PatternFileError("expected 'id | kind | term [| term]'", lineno, source)
        pid, kind, *raw_terms = fields
        if not pid:
            raise PatternFileError("empty pattern id", lineno, source)
        if pid in seen:
            raise DuplicatePatternIdError(f"duplicate pattern id {pid!r} (first on line {seen[pid]})", lineno, source)
        terms = []
        for rt in raw_terms:
            if WILDCARD in rt.rstrip()[:-1]:
                raise WildcardPositionError(f"wildcard only allowed as trailing marker: {rt!r}", lineno, source)
            try:
                terms.append(PatternTerm.parse(rt))
            except PatternError as exc:
                raise PatternFileError(str(exc), lineno, source) from None
        try:
            pats.append(QueryPattern(pid, kind, tuple(terms)))
        except PatternError as exc:
            raise PatternFileError(str(exc), lineno, source) from None
        seen[pid] = lineno
    return PatternSet(tuple(pats), source=source, mode=mode)


def load_pattern_file(path: str | Path) -> PatternSet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise PatternFileError(f"not valid UTF-8: {exc}", None, str(path)) from None
    return parse_patterns(text, source=str(path))
