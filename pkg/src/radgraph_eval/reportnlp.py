"""Report-to-entity-graph pipeline.

Free text goes through four stages: sentence/token splitting, finding-mention
lookup against a synonym lexicon, rule-based polarity (negation/uncertainty)
detection, and attribute extraction from dependency parses (with a shallow
window-based fallback when no parse is available).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources

from .chestkg import ChestGraph
from .conllu import ParsedSentence

POSITIVE = "positive"
NEGATIVE = "negative"
UNCERTAIN = "uncertain"

_SENT_TERMINALS = ".?!"
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:\.[a-z0-9]+)*\.?|[^\sa-z0-9]")


class ReportError(ValueError):
    """Raised on malformed pipeline input (count mismatches, bad lexicon)."""


# ---------------------------------------------------------------------------
# tokenization


def _is_initial_dot(text: str, dot_index: int) -> bool:
    # single-letter initials like "j." keep their period inside the sentence
    if dot_index == 0 or not text[dot_index - 1].isalpha():
        return False
    return dot_index < 2 or not text[dot_index - 2].isalpha()


def _sentence_spans(text: str) -> list[tuple[int, int, bool]]:
    """(start, end, ends_with_terminal) spans over the raw text."""
    spans = []
    start, i, n = 0, 0, len(text)
    while i < n:
        ch = text[i]
        if ch in _SENT_TERMINALS and (i + 1 == n or text[i + 1].isspace()):
            if ch == "." and _is_initial_dot(text, i):
                i += 1
                continue
            spans.append((start, i + 1, True))
            i += 1
            while i < n and text[i].isspace():
                i += 1
            start = i
            continue
        i += 1
    if start < n and text[start:].strip():
        spans.append((start, n, False))
    return spans


def tokenize(text: str) -> list[list[str]]:
    """Lowercased sentences of tokens; punctuation stands alone except
    periods inside decimals, dotted abbreviations, and single-letter
    initials. Empty input gives an empty list."""
    sentences = []
    for start, end, has_terminal in _sentence_spans(text):
        chunk = text[start:end].lower()
        if has_terminal:
            body, terminal = chunk[:-1], chunk[-1]
        else:
            body, terminal = chunk, None
        tokens = _TOKEN_RE.findall(body)
        if terminal is not None:
            tokens.append(terminal)
        if tokens:
            sentences.append(tokens)
    return sentences


def tokenize_phrase(phrase: str) -> list[str]:
    return _TOKEN_RE.findall(phrase.lower())


def strip_plural(token: str) -> str:
    """Light plural normalization; deliberately no lemmatization."""
    if len(token) > 3 and token.endswith("s") and not token.endswith(("ss", "is", "us")):
        return token[:-1]
    return token


# ---------------------------------------------------------------------------
# lexicon


@dataclass(frozen=True)
class Lexicon:
    """Surface phrase (1-4 tokens) to finding-category lookup table.

    Keys are plural-stripped token tuples; lookup is longest-match and
    therefore deterministic for a fixed table.
    """

    entries: dict[tuple[str, ...], str]
    sources: dict[tuple[str, ...], str]
    max_phrase_len: int

    @staticmethod
    def from_pairs(pairs: list[tuple[str, str]], source: str = "inline") -> "Lexicon":
        entries: dict[tuple[str, ...], str] = {}
        sources: dict[tuple[str, ...], str] = {}
        for phrase, category in pairs:
            tokens = tuple(strip_plural(t) for t in tokenize_phrase(phrase))
            if not tokens:
                raise ReportError(f"empty lexicon phrase for category '{category}'")
            if len(tokens) > 4:
                raise ReportError(f"lexicon phrase '{phrase}' longer than 4 tokens")
            entries[tokens] = category.strip().lower()
            sources[tokens] = source
        if not entries:
            raise ReportError("empty lexicon")
        return Lexicon(entries=entries, sources=sources,
                       max_phrase_len=max(len(k) for k in entries))

    def validate(self, graph: ChestGraph) -> None:
        for key, category in self.entries.items():
            if not graph.has_category(category):
                raise ReportError(
                    f"lexicon phrase {' '.join(key)!r} targets unknown category '{category}'")

    def lookup(self, key: tuple[str, ...]) -> str | None:
        return self.entries.get(key)


def load_lexicon(path: str) -> Lexicon:
    """Tab-separated `phrase<TAB>category` lines; '#' starts a comment."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ReportError(f"{path}:{lineno}: expected 'phrase<TAB>category'")
            pairs.append((parts[0].strip(), parts[1].strip()))
    return Lexicon.from_pairs(pairs, source=path)


def default_lexicon() -> Lexicon:
    text = resources.files("radgraph_eval.data").joinpath("lexicon.tsv").read_text()
    pairs = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        phrase, category = line.split("\t")
        pairs.append((phrase.strip(), category.strip()))
    return Lexicon.from_pairs(pairs, source="default")


# ---------------------------------------------------------------------------
# entities


@dataclass(frozen=True)
class Entity:
    word: str
    category: str
    polarity: str
    attributes: frozenset[str]
    sentence_index: int
    span: tuple[int, int]


@dataclass
class EntityGraph:
    """Per-report sub-graph: raw mentions plus a per-category resolution."""

    entities: tuple[Entity, ...]
    summary: dict[str, tuple[str, frozenset[str]]] = field(default_factory=dict)

    def to_records(self) -> list[list]:
        return [[e.word, e.category, e.polarity, sorted(e.attributes)]
                for e in self.entities]

    def serialize(self) -> str:
        return "".join(json.dumps(rec) + "\n" for rec in self.to_records())


def extract_entities(sentences: list[list[str]], lexicon: Lexicon) -> list[Entity]:
    """Longest-match, left-to-right, non-overlapping lexicon hits.

    Polarity starts as a positive placeholder; `word` keeps the surface form.
    """
    entities = []
    for s_idx, tokens in enumerate(sentences):
        normalized = [strip_plural(t) for t in tokens]
        i = 0
        while i < len(tokens):
            hit = None
            longest = min(lexicon.max_phrase_len, len(tokens) - i)
            for length in range(longest, 0, -1):
                category = lexicon.lookup(tuple(normalized[i:i + length]))
                if category is not None:
                    hit = (length, category)
                    break
            if hit is None:
                i += 1
                continue
            length, category = hit
            entities.append(Entity(
                word=" ".join(tokens[i:i + length]),
                category=category,
                polarity=POSITIVE,
                attributes=frozenset(),
                sentence_index=s_idx,
                span=(i, i + length),
            ))
            i += length
    return entities


# ---------------------------------------------------------------------------
# polarity


@dataclass(frozen=True)
class PolarityRules:
    pre_negation: tuple[tuple[str, ...], ...]
    post_negation: tuple[tuple[str, ...], ...]
    pre_uncertainty: tuple[tuple[str, ...], ...]
    post_uncertainty: tuple[tuple[str, ...], ...]
    cut_tokens: tuple[str, ...]
    window: int

    def trigger_tokens(self) -> frozenset[str]:
        out = set()
        for group in (self.pre_negation, self.post_negation,
                      self.pre_uncertainty, self.post_uncertainty):
            for phrase in group:
                out.update(phrase)
        return frozenset(out)


DEFAULT_RULES = PolarityRules(
    pre_negation=(("no",), ("without",), ("free", "of"), ("negative", "for"),
                  ("clear", "of"), ("absence", "of"), ("rather", "than")),
    post_negation=(("is", "absent"), ("are", "absent"),
                   ("has", "resolved"), ("have", "resolved")),
    pre_uncertainty=(("may",), ("possible",), ("cannot", "exclude"),
                     ("suspicious", "for"), ("question", "of")),
    post_uncertainty=(("cannot", "be", "excluded"),),
    cut_tokens=("but", "however", ";"),
    window=6,
)


def _find_phrases(tokens: list[str], phrases: tuple[tuple[str, ...], ...]):
    hits = []
    for phrase in phrases:
        k = len(phrase)
        for i in range(len(tokens) - k + 1):
            if tuple(tokens[i:i + k]) == phrase:
                hits.append((i, i + k))
    return hits


def _cut_between(tokens: list[str], lo: int, hi: int, rules: PolarityRules) -> bool:
    return any(t in rules.cut_tokens for t in tokens[lo:hi])


def _span_head(parse: ParsedSentence, span: tuple[int, int]) -> int:
    for i in range(span[0], span[1]):
        head = parse.heads[i]
        if head == 0 or not (span[0] <= head - 1 < span[1]):
            return i
    return span[1] - 1


def _governs(parse: ParsedSentence, trigger: tuple[int, int], span: tuple[int, int]) -> bool:
    """A trigger governs a span when one of its tokens sits on the span
    head's ancestor chain, or hangs directly off a node of that chain."""
    head = _span_head(parse, span)
    chain = set(parse.ancestors(head))
    chain.add(head)
    for t in range(trigger[0], trigger[1]):
        if t in chain:
            return True
        if parse.heads[t] != 0 and (parse.heads[t] - 1) in chain:
            return True
    return False


def detect_polarity(entity: Entity, sentence: list[str] | None = None,
                    parse: ParsedSentence | None = None,
                    rules: PolarityRules = DEFAULT_RULES) -> str:
    """Polarity of one mention from trigger phrases in its sentence.

    Raw-token mode uses a +-`window` token scope; parse mode requires the
    trigger on (or directly off) the span head's dependency path. "but",
    "however" and ";" between trigger and span cut the scope in both modes.
    """
    if parse is not None:
        tokens = [t.lower() for t in parse.tokens]
    elif sentence is not None:
        tokens = sentence
    else:
        raise ReportError("detect_polarity needs sentence tokens or a parse")
    start, end = entity.span

    def pre_applies(trigger: tuple[int, int]) -> bool:
        if trigger[1] > start:
            return False
        if _cut_between(tokens, trigger[1], start, rules):
            return False
        if parse is not None:
            return _governs(parse, trigger, entity.span)
        return start - trigger[1] <= rules.window

    def post_applies(trigger: tuple[int, int]) -> bool:
        if trigger[0] < end:
            return False
        if _cut_between(tokens, end, trigger[0], rules):
            return False
        if parse is not None:
            return _governs(parse, trigger, entity.span)
        return trigger[0] - end <= rules.window

    for hit in _find_phrases(tokens, rules.pre_negation):
        if pre_applies(hit):
            return NEGATIVE
    for hit in _find_phrases(tokens, rules.post_negation):
        if post_applies(hit):
            return NEGATIVE
    for hit in _find_phrases(tokens, rules.pre_uncertainty):
        if pre_applies(hit):
            return UNCERTAIN
    for hit in _find_phrases(tokens, rules.post_uncertainty):
        if post_applies(hit):
            return UNCERTAIN
    return POSITIVE


# ---------------------------------------------------------------------------
# attributes

_ATTRIBUTE_RELATIONS = frozenset({"amod", "nmod", "vmod", "neg", "dobj", "nsubj", "compound"})
_CHAIN_RELATIONS = frozenset({"nmod", "vmod", "prep", "pobj", "obl"})

_FUNCTION_WORDS = frozenset({
    "the", "a", "an", "is", "are", "was", "were", "be", "been", "being", "am",
    "there", "of", "in", "at", "on", "with", "within", "and", "or", "to",
    "for", "by", "from", "this", "that", "these", "those", "it", "its", "as",
    "has", "have", "had", "which", "than", "then", "but", "however",
})
_PREPOSITIONS = frozenset({
    "in", "of", "at", "on", "with", "without", "near", "along", "behind",
    "under", "over", "above", "below", "to", "from", "by",
})
_VERBISH = frozenset({
    "is", "are", "was", "were", "be", "been", "shows", "show", "seen", "noted",
    "demonstrates", "demonstrate", "reveals", "reveal", "appears", "appear",
    "remains", "remain", "suggests", "suggest",
})
_ADJ_HINTS = frozenset({
    "small", "large", "mild", "moderate", "severe", "minimal", "patchy",
    "diffuse", "focal", "acute", "chronic", "low", "dense", "left", "right",
    "upper", "lower", "bilateral", "increased", "decreased", "stable", "new",
    "old", "prominent", "subtle", "trace", "tiny", "extensive",
})
_ADJ_SUFFIXES = ("al", "y", "ic", "ous", "ive", "ed", "ing", "ar",
                 "ate", "ent", "ant", "oid", "ile", "ular")


def _is_content_token(token: str) -> bool:
    return token.isalnum() and token not in _FUNCTION_WORDS


def _looks_adjectival(token: str) -> bool:
    if not token.isalpha() or token in _FUNCTION_WORDS:
        return False
    return token in _ADJ_HINTS or token.endswith(_ADJ_SUFFIXES)


def _clean_attribute(token: str) -> str:
    return strip_plural(token.lower())


def extract_attributes(entity: Entity, sentence: list[str],
                       parse: ParsedSentence | None = None,
                       rules: PolarityRules = DEFAULT_RULES) -> frozenset[str]:
    """Modifier words of one mention.

    Parse mode: dependents of the span head under the modifier relations,
    plus nouns at the end of prepositional/nominal chains up to two hops.
    Fallback mode: adjectival tokens in the three positions before the span
    and the head noun of an immediately following "in/of/at the X" phrase.
    Entity tokens and polarity-trigger words never become attributes.
    """
    start, end = entity.span
    exclude = set(range(start, end))
    trigger_words = rules.trigger_tokens()
    attrs: set[str] = set()

    if parse is not None:
        tokens = [t.lower() for t in parse.tokens]
        head = _span_head(parse, entity.span)
        candidates: set[int] = set()
        for child in parse.children(head):
            if parse.relation(child) in _ATTRIBUTE_RELATIONS:
                candidates.add(child)
        frontier = [c for c in parse.children(head)
                    if parse.relation(c) in _CHAIN_RELATIONS]
        depth = 1
        while frontier and depth <= 2:
            candidates.update(frontier)
            frontier = [gc for node in frontier for gc in parse.children(node)
                        if parse.relation(gc) in _CHAIN_RELATIONS]
            depth += 1
        for idx in candidates:
            word = tokens[idx]
            if idx in exclude or word in trigger_words or not _is_content_token(word):
                continue
            attrs.add(_clean_attribute(word))
        return frozenset(attrs)

    tokens = sentence
    for idx in range(max(0, start - 3), start):
        word = tokens[idx]
        if word in trigger_words or not _looks_adjectival(word):
            continue
        attrs.add(_clean_attribute(word))
    if end < len(tokens) and tokens[end] in ("in", "of", "at"):
        j = end + 1
        while j < len(tokens) and tokens[j] in ("the", "a", "an"):
            j += 1
        run = []
        while j < len(tokens):
            word = tokens[j]
            if (not word.isalnum() or word in _PREPOSITIONS or word in _VERBISH
                    or word in ("and", "or") or word in trigger_words):
                break
            run.append(word)
            j += 1
        if run:
            attrs.add(_clean_attribute(run[-1]))
    return frozenset(attrs)


# ---------------------------------------------------------------------------
# full pipeline


def _resolve_category(mentions: list[Entity]) -> tuple[str, frozenset[str]]:
    polarities = {m.polarity for m in mentions}
    if POSITIVE in polarities:
        resolved = POSITIVE
    elif UNCERTAIN in polarities:
        resolved = UNCERTAIN
    else:
        resolved = NEGATIVE
    merged: set[str] = set()
    for m in mentions:
        if m.polarity == resolved:
            merged.update(m.attributes)
    return resolved, frozenset(merged)


def parse_report(text: str, lexicon: Lexicon,
                 parses: list[ParsedSentence] | None = None,
                 rules: PolarityRules = DEFAULT_RULES) -> EntityGraph:
    """Tokenize, extract mentions, attach polarity and attributes, and
    resolve one record per category (positive beats uncertain beats
    negative; attributes merge across mentions of the resolved polarity)."""
    sentences = tokenize(text)
    if parses is not None and len(parses) != len(sentences):
        raise ReportError(
            f"parse count {len(parses)} != sentence count {len(sentences)}")
    if parses is not None:
        for i, (sent, parse) in enumerate(zip(sentences, parses)):
            if [t.lower() for t in parse.tokens] != sent:
                raise ReportError(f"parse tokens disagree with tokenizer at sentence {i}")

    raw = extract_entities(sentences, lexicon)
    entities = []
    for ent in raw:
        sent = sentences[ent.sentence_index]
        parse = parses[ent.sentence_index] if parses is not None else None
        polarity = detect_polarity(ent, sent, parse=parse, rules=rules)
        attributes = extract_attributes(ent, sent, parse=parse, rules=rules)
        entities.append(Entity(
            word=ent.word, category=ent.category, polarity=polarity,
            attributes=attributes, sentence_index=ent.sentence_index, span=ent.span,
        ))

    by_category: dict[str, list[Entity]] = {}
    for ent in entities:
        by_category.setdefault(ent.category, []).append(ent)
    summary = {cat: _resolve_category(mentions)
               for cat, mentions in sorted(by_category.items())}
    return EntityGraph(entities=tuple(entities), summary=summary)
