"""Phenotype ontology subset and lexicon-based concept extraction.

Parses an OBO-like stanza file into an ontology, builds a token-trie matcher
from term names, synonyms and a supplementary lexicon (abbreviations and
contextual synonyms), and extracts phenotype mentions from note text with
sentence-scoped negation cues.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, TextIO

__all__ = [
    "OntologyError",
    "LexiconError",
    "HpoTerm",
    "Ontology",
    "PhenotypeMention",
    "ExtractionResult",
    "Matcher",
    "parse_obo",
    "load_lexicon_file",
    "build_matcher",
    "default_matcher",
    "DEFAULT_NEGATION_CUES",
]


class OntologyError(ValueError):
    """Bad ontology input: malformed stanza or cyclic is_a graph."""


class LexiconError(ValueError):
    """Bad lexicon input: empty phrase or one phrase mapping to two ids."""


_HPO_ID_RE = re.compile(r"^HP:\d{7}$")
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")
_SENTENCE_SPLIT_RE = re.compile(r"[.;\n]")
_SYNONYM_RE = re.compile(r'"([^"]*)"')

DEFAULT_NEGATION_CUES = (
    "no",
    "not",
    "denies",
    "without",
    "no evidence of",
    "negative for",
)


@dataclass(frozen=True)
class HpoTerm:
    id: str
    name: str
    synonyms: tuple[str, ...] = ()
    parents: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not _HPO_ID_RE.match(self.id):
            raise OntologyError(f"invalid HPO id {self.id!r}")
        if not self.name:
            raise OntologyError(f"term {self.id}: empty name")


class Ontology:
    """Term table with resolved, acyclic parent references.

    Parent ids pointing outside the term set (a subset of a larger ontology
    was loaded) are dropped at construction so every stored reference
    resolves.
    """

    def __init__(self, terms: Iterable[HpoTerm]):
        self.terms: dict[str, HpoTerm] = {}
        staged = list(terms)
        known = {t.id for t in staged}
        for term in staged:
            if term.id in self.terms:
                raise OntologyError(f"duplicate term id {term.id}")
            if term.id in term.parents:
                raise OntologyError(f"is_a cycle involving {term.id}")
            kept = tuple(p for p in term.parents if p in known)
            if kept != term.parents:
                term = HpoTerm(term.id, term.name, term.synonyms, kept)
            self.terms[term.id] = term
        self._check_cycles()

    def __contains__(self, term_id: str) -> bool:
        return term_id in self.terms

    def __getitem__(self, term_id: str) -> HpoTerm:
        return self.terms[term_id]

    def __len__(self) -> int:
        return len(self.terms)

    def _check_cycles(self) -> None:
        WHITE, GRAY, BLACK = 0, 1, 2
        color = {tid: WHITE for tid in self.terms}
        for start in self.terms:
            if color[start] != WHITE:
                continue
            stack: list[tuple[str, int]] = [(start, 0)]
            color[start] = GRAY
            while stack:
                node, idx = stack[-1]
                parents = self.terms[node].parents
                if idx < len(parents):
                    stack[-1] = (node, idx + 1)
                    nxt = parents[idx]
                    if color[nxt] == GRAY:
                        raise OntologyError(f"is_a cycle involving {nxt}")
                    if color[nxt] == WHITE:
                        color[nxt] = GRAY
                        stack.append((nxt, 0))
                else:
                    color[node] = BLACK
                    stack.pop()

    def ancestors(self, term_id: str) -> set[str]:
        seen: set[str] = set()
        frontier = list(self.terms[term_id].parents)
        while frontier:
            node = frontier.pop()
            if node in seen:
                continue
            seen.add(node)
            frontier.extend(self.terms[node].parents)
        return seen


def parse_obo(stream: Iterable[str] | TextIO) -> Ontology:
    """Parse the OBO-like stanza grammar: ``[Term]`` stanzas with ``id:``,
    ``name:``, ``synonym: "..."`` and ``is_a:`` lines; unknown lines ignored."""
    terms: list[HpoTerm] = []
    cur: dict | None = None

    def finish(stanza: dict | None) -> None:
        if stanza is None:
            return
        if "id" not in stanza or "name" not in stanza:
            raise OntologyError(
                f"stanza missing id or name (near {stanza.get('id', stanza.get('name', '?'))!r})"
            )
        terms.append(
            HpoTerm(
                id=stanza["id"],
                name=stanza["name"],
                synonyms=tuple(stanza.get("synonyms", [])),
                parents=tuple(stanza.get("parents", [])),
            )
        )

    for raw in stream:
        line = raw.strip()
        if line == "[Term]":
            finish(cur)
            cur = {}
            continue
        if cur is None or not line or line.startswith("!"):
            continue
        key, _, rest = line.partition(":")
        rest = rest.strip()
        key = key.strip()
        if key == "id":
            cur["id"] = rest
        elif key == "name":
            cur["name"] = rest
        elif key == "synonym":
            m = _SYNONYM_RE.search(rest)
            if m and m.group(1):
                cur.setdefault("synonyms", []).append(m.group(1))
        elif key == "is_a":
            parent = rest.split("!")[0].strip()
            cur.setdefault("parents", []).append(parent)
    finish(cur)
    return Ontology(terms)


def load_obo_file(path) -> Ontology:
    with open(path, encoding="utf-8") as fh:
        return parse_obo(fh)


def load_lexicon_file(path) -> dict[str, str]:
    """Read ``phrase<TAB>HP:NNNNNNN`` lines into a phrase -> id map."""
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            try:
                phrase, hpo_id = line.split("\t")
            except ValueError:
                raise LexiconError(f"line {lineno}: expected phrase<TAB>id") from None
            if not phrase.strip():
                raise LexiconError(f"line {lineno}: empty phrase")
            entries[phrase.strip()] = hpo_id.strip()
    return entries


def _tokenize(text: str) -> list[tuple[str, int, int]]:
    """Case-folded word tokens with their character spans."""
    return [(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


@dataclass(frozen=True)
class PhenotypeMention:
    hpo_id: str
    start: int
    end: int
    matched_text: str
    negated: bool


@dataclass(frozen=True)
class ExtractionResult:
    mentions: tuple[PhenotypeMention, ...]
    present_ids: frozenset[str]


class Matcher:
    """Token-trie phrase matcher with longest-match-wins extraction.

    Immutable after construction; extraction is read-only and safe for
    concurrent use across notes.
    """

    def __init__(
        self,
        phrase_map: dict[str, str],
        negation_cues: Iterable[str] = DEFAULT_NEGATION_CUES,
        negation_window: int = 5,
        ancestor_map: dict[str, frozenset[str]] | None = None,
    ):
        # trie node: {token: child}, "$" key holds the hpo id of a complete phrase
        self._trie: dict = {}
        self._sources: dict[tuple[str, ...], str] = {}
        self.negation_window = negation_window
        self.negation_cues = tuple(tuple(t for t, _, _ in _tokenize(c)) for c in negation_cues)
        # when set, extracted ids imply their ontology ancestors (off by default)
        self.ancestor_map = ancestor_map
        for phrase, hpo_id in phrase_map.items():
            tokens = tuple(t for t, _, _ in _tokenize(phrase))
            if not tokens:
                raise LexiconError(f"phrase {phrase!r} has no tokens")
            prior = self._sources.get(tokens)
            if prior is not None and prior != hpo_id:
                raise LexiconError(
                    f"phrase {phrase!r} maps to both {prior} and {hpo_id}"
                )
            self._sources[tokens] = hpo_id
            node = self._trie
            for tok in tokens:
                node = node.setdefault(tok, {})
            node["$"] = hpo_id
        targets = set(self._sources.values())
        if ancestor_map:
            for hpo_id in list(targets):
                targets |= ancestor_map.get(hpo_id, frozenset())
        self.target_ids: frozenset[str] = frozenset(targets)

    def _longest_match(self, tokens: list[str], start: int) -> tuple[int, str] | None:
        """Longest phrase starting at token index ``start``; returns
        (token count, hpo id)."""
        node = self._trie
        best: tuple[int, str] | None = None
        for i in range(start, len(tokens)):
            node = node.get(tokens[i])
            if node is None:
                break
            if "$" in node:
                best = (i - start + 1, node["$"])
        return best

    def extract(self, note_text: str) -> ExtractionResult:
        """Scan sentence by sentence; a mention is negated when a cue ends at
        most ``negation_window`` tokens before the match start within the same
        sentence. The returned id set excludes negated mentions."""
        mentions: list[PhenotypeMention] = []
        present: set[str] = set()
        offset = 0
        for sentence in _SENTENCE_SPLIT_RE.split(note_text):
            toks = _tokenize(sentence)
            words = [t for t, _, _ in toks]
            cue_ends: list[int] = []
            for cue in self.negation_cues:
                for i in range(len(words) - len(cue) + 1):
                    if tuple(words[i : i + len(cue)]) == cue:
                        cue_ends.append(i + len(cue))
            i = 0
            while i < len(words):
                hit = self._longest_match(words, i)
                if hit is None:
                    i += 1
                    continue
                length, hpo_id = hit
                start = offset + toks[i][1]
                end = offset + toks[i + length - 1][2]
                negated = any(0 <= i - ce <= self.negation_window for ce in cue_ends)
                mentions.append(
                    PhenotypeMention(
                        hpo_id=hpo_id,
                        start=start,
                        end=end,
                        matched_text=note_text[start:end],
                        negated=negated,
                    )
                )
                if not negated:
                    present.add(hpo_id)
                i += length
            offset += len(sentence) + 1
        if self.ancestor_map:
            for hpo_id in list(present):
                present |= self.ancestor_map.get(hpo_id, frozenset())
        return ExtractionResult(tuple(mentions), frozenset(present))


def build_matcher(
    ontology: Ontology,
    extra: dict[str, str] | None = None,
    negation_cues: Iterable[str] = DEFAULT_NEGATION_CUES,
    negation_window: int = 5,
    propagate_ancestors: bool = False,
) -> Matcher:
    """Matcher over every ontology name and synonym plus the supplementary
    lexicon entries. Raises LexiconError when one phrase maps to two ids.

    With ``propagate_ancestors`` every extracted id also implies its is-a
    ancestors in the returned id set (off by default: an extracted child does
    not imply its parent as a feature)."""
    phrase_map: dict[str, str] = {}

    def add(phrase: str, hpo_id: str) -> None:
        key = " ".join(t for t, _, _ in _tokenize(phrase))
        if not key:
            raise LexiconError(f"phrase {phrase!r} has no tokens")
        prior = phrase_map.get(key)
        if prior is not None and prior != hpo_id:
            raise LexiconError(f"phrase {phrase!r} maps to both {prior} and {hpo_id}")
        phrase_map[key] = hpo_id

    for term in ontology.terms.values():
        add(term.name, term.id)
        for syn in term.synonyms:
            add(syn, term.id)
    for phrase, hpo_id in (extra or {}).items():
        add(phrase, hpo_id)
    ancestor_map = None
    if propagate_ancestors:
        ancestor_map = {
            tid: frozenset(ontology.ancestors(tid)) for tid in ontology.terms
        }
    return Matcher(
        phrase_map,
        negation_cues=negation_cues,
        negation_window=negation_window,
        ancestor_map=ancestor_map,
    )


def default_matcher() -> Matcher:
    """Matcher over the shipped fixture ontology and lexicon."""
    data = resources.files("phenoloop.data")
    ontology = parse_obo(data.joinpath("hpo_subset.obo").read_text(encoding="utf-8").splitlines())
    lexicon = {}
    for raw in data.joinpath("lexicon.tsv").read_text(encoding="utf-8").splitlines():
        if not raw.strip() or raw.startswith("#"):
            continue
        phrase, hpo_id = raw.split("\t")
        lexicon[phrase.strip()] = hpo_id.strip()
    return build_matcher(ontology, lexicon)


def default_ontology() -> Ontology:
    data = resources.files("phenoloop.data")
    return parse_obo(data.joinpath("hpo_subset.obo").read_text(encoding="utf-8").splitlines())
