"""Deterministic shallow dependency parser over pre-tokenized sentences.

Heads are assigned by noun-phrase chunking with adjacency attachment:
modifiers attach forward to their chunk's head noun, chunk heads attach to
the main verb or backward through prepositions as nominal modifiers. The
label inventory matches what the core attribute extractor consumes (amod,
compound, nmod, neg, nsubj, dobj, case, det). Output is always a valid
single-root tree; a flat tree is the last resort.
"""

from __future__ import annotations

import re

from radgraph_eval.conllu import ParsedSentence, ParseValidationError

DETERMINERS = frozenset({
    "the", "a", "an", "this", "that", "these", "those", "any", "some",
    "each", "both", "either", "its",
})
PREPOSITIONS = frozenset({
    "in", "of", "at", "on", "with", "without", "for", "to", "from", "by",
    "near", "under", "over", "above", "below", "along", "behind", "within",
    "during", "into", "upon", "throughout",
})
AUXILIARIES = frozenset({
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have",
    "had", "does", "do", "did", "may", "might", "can", "cannot", "could",
    "should", "would", "will", "must",
})
VERBS = frozenset({
    "shows", "show", "showed", "seen", "appears", "appear", "appeared",
    "noted", "demonstrates", "demonstrate", "demonstrated", "reveals",
    "reveal", "revealed", "suggests", "suggest", "suggested", "remains",
    "remain", "remained", "identified", "visualized", "resolved", "improved",
    "worsened", "compared", "excluded", "exclude", "measures", "measuring",
})
NEGATORS = frozenset({"no", "not", "never"})
EXPLETIVES = frozenset({"there"})
CONJUNCTIONS = frozenset({"and", "or", "but", "however", "nor"})

ADJ_HINTS = frozenset({
    "small", "large", "mild", "moderate", "severe", "minimal", "patchy",
    "diffuse", "focal", "acute", "chronic", "low", "dense", "left", "right",
    "upper", "lower", "bilateral", "stable", "new", "old", "prominent",
    "subtle", "trace", "tiny", "extensive", "free", "clear", "normal",
    "unremarkable", "intact", "possible", "probable", "mildly", "grossly",
})
ADJ_SUFFIXES = ("al", "ous", "ic", "ive", "able", "ible", "ant", "ent",
                "ary", "oid", "ile", "ular", "ed", "ful", "less")

_NUM_RE = re.compile(r"^\d+(\.\d+)?$")

NOMINAL_POS = ("DET", "ADJ", "NUM", "NOUN", "NEG")


def tag(token: str) -> str:
    if not any(ch.isalnum() for ch in token):
        return "PUNCT"
    if _NUM_RE.match(token):
        return "NUM"
    if token in NEGATORS:
        return "NEG"
    if token in DETERMINERS:
        return "DET"
    if token in PREPOSITIONS:
        return "ADP"
    if token in AUXILIARIES:
        return "AUX"
    if token in VERBS:
        return "VERB"
    if token in EXPLETIVES:
        return "EXPL"
    if token in CONJUNCTIONS:
        return "CONJ"
    if token in ADJ_HINTS or token.endswith(ADJ_SUFFIXES):
        return "ADJ"
    return "NOUN"


def _noun_runs(pos: list[str]) -> list[tuple[int, int]]:
    runs = []
    i = 0
    while i < len(pos):
        if pos[i] in NOMINAL_POS:
            j = i
            while j + 1 < len(pos) and pos[j + 1] in NOMINAL_POS:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    return runs


def _run_head(run: tuple[int, int], pos: list[str]) -> int:
    nouns = [k for k in range(run[0], run[1] + 1) if pos[k] == "NOUN"]
    return nouns[-1] if nouns else run[1]


def _flat_tree(tokens: list[str]) -> tuple[list[int], list[str]]:
    heads = [1] * len(tokens)
    rels = ["dep"] * len(tokens)
    heads[0] = 0
    rels[0] = "root"
    return heads, rels


class RuleChainBackend:
    """Built-in backend; always available."""

    name = "rulechain"

    def probe(self) -> None:
        return None

    def parse(self, tokens: list[str]) -> tuple[list[str], list[int], list[str]]:
        heads, rels = self._attach(tokens)
        try:
            ParsedSentence(tuple(tokens), tuple(heads), tuple(rels))
        except ParseValidationError:
            heads, rels = _flat_tree(tokens)
        return list(tokens), heads, rels

    def _attach(self, tokens: list[str]) -> tuple[list[int], list[str]]:
        n = len(tokens)
        if n == 1:
            return [0], ["root"]
        pos = [tag(t) for t in tokens]
        heads: list[int | None] = [None] * n
        rels: list[str | None] = [None] * n
        runs = _noun_runs(pos)
        run_heads = [_run_head(r, pos) for r in runs]

        verb = next((i for i, p in enumerate(pos) if p in ("AUX", "VERB")), None)
        if verb is not None:
            root = verb
        elif run_heads:
            root = run_heads[0]
        else:
            root = next((i for i, p in enumerate(pos) if p != "PUNCT"), 0)
        heads[root] = 0
        rels[root] = "root"
        has_expletive = any(p == "EXPL" for p in pos)

        for run, head in zip(runs, run_heads):
            for k in range(run[0], run[1] + 1):
                if k == head or heads[k] is not None:
                    continue
                label = {"DET": "det", "ADJ": "amod", "NUM": "nummod",
                         "NEG": "neg", "NOUN": "compound"}[pos[k]]
                heads[k] = head + 1
                rels[k] = label
            if heads[head] is not None:
                continue
            prev = run[0] - 1
            if prev >= 0 and pos[prev] == "ADP":
                heads[prev] = head + 1
                rels[prev] = "case"
                anchor = next((h for h in reversed(run_heads) if h < prev), None)
                if anchor is not None:
                    heads[head] = anchor + 1
                    rels[head] = "nmod"
                else:
                    heads[head] = root + 1
                    rels[head] = "nmod"
            elif verb is not None and head < verb:
                heads[head] = root + 1
                rels[head] = "nsubj"
            elif verb is not None:
                heads[head] = root + 1
                rels[head] = "nsubj" if has_expletive else "dobj"
            else:
                heads[head] = root + 1
                rels[head] = "dep"

        for i in range(n):
            if heads[i] is not None:
                continue
            label = {"EXPL": "expl", "PUNCT": "punct", "CONJ": "cc",
                     "AUX": "aux", "VERB": "dep", "ADP": "case"}.get(pos[i], "dep")
            heads[i] = root + 1
            rels[i] = label
        return heads, rels  # type: ignore[return-value]
