"""CoNLL-U ingestion for dependency-parsed sentences.

Only ID, FORM, HEAD and DEPREL are consumed; multi-word-token ranges
(`1-2`) and empty nodes (`1.1`) are skipped; sentences end at blank lines.
"""

from __future__ import annotations

from dataclasses import dataclass


class ParseValidationError(ValueError):
    """Raised when a dependency tree violates its structural invariants."""


@dataclass(frozen=True)
class ParsedSentence:
    """One dependency tree: token forms, 1-based head indices (0 = root),
    and relation labels."""

    tokens: tuple[str, ...]
    heads: tuple[int, ...]
    deprels: tuple[str, ...]

    def __post_init__(self):
        n = len(self.tokens)
        if len(self.heads) != n or len(self.deprels) != n:
            raise ParseValidationError("tokens, heads and deprels differ in length")
        if n == 0:
            raise ParseValidationError("empty sentence")
        roots = [i for i, h in enumerate(self.heads) if h == 0]
        if len(roots) != 1:
            raise ParseValidationError(f"expected exactly one root, found {len(roots)}")
        for i, h in enumerate(self.heads):
            if not 0 <= h <= n:
                raise ParseValidationError(f"head index {h} out of range at token {i + 1}")
            if h == i + 1:
                raise ParseValidationError(f"token {i + 1} is its own head")
        self._check_acyclic()

    def _check_acyclic(self):
        n = len(self.tokens)
        for start in range(n):
            seen = set()
            node = start
            while self.heads[node] != 0:
                if node in seen:
                    raise ParseValidationError(f"cycle through token {start + 1}")
                seen.add(node)
                node = self.heads[node] - 1

    def children(self, index: int) -> list[int]:
        """0-based indices of tokens headed by `index` (0-based)."""
        return [i for i, h in enumerate(self.heads) if h == index + 1]

    def relation(self, index: int) -> str:
        """Base relation label with any subtype (after ':') dropped."""
        return self.deprels[index].split(":")[0].lower()

    def ancestors(self, index: int) -> list[int]:
        """0-based path from `index`'s head up to the root (exclusive of index)."""
        out = []
        node = index
        while self.heads[node] != 0:
            node = self.heads[node] - 1
            out.append(node)
        return out


def parse_conllu(text: str) -> list[ParsedSentence]:
    sentences: list[ParsedSentence] = []
    tokens: list[str] = []
    heads: list[int] = []
    deprels: list[str] = []

    def flush():
        nonlocal tokens, heads, deprels
        if tokens:
            sentences.append(ParsedSentence(tuple(tokens), tuple(heads), tuple(deprels)))
            tokens, heads, deprels = [], [], []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 8:
            raise ParseValidationError(f"line {lineno}: expected >= 8 tab-separated columns")
        token_id = cols[0]
        if "-" in token_id or "." in token_id:
            continue
        try:
            idx = int(token_id)
            head = int(cols[6])
        except ValueError as err:
            raise ParseValidationError(f"line {lineno}: non-integer ID or HEAD") from err
        if idx != len(tokens) + 1:
            raise ParseValidationError(f"line {lineno}: token IDs not consecutive")
        tokens.append(cols[1])
        heads.append(head)
        deprels.append(cols[7])
    flush()
    return sentences


def read_conllu(path: str) -> list[ParsedSentence]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_conllu(fh.read())


def format_conllu(sentences: list[ParsedSentence]) -> str:
    """Ten-column CoNLL-U text; unused columns hold '_'."""
    blocks = []
    for sent in sentences:
        lines = []
        for i, (form, head, rel) in enumerate(zip(sent.tokens, sent.heads, sent.deprels)):
            lines.append("\t".join([
                str(i + 1), form, "_", "_", "_", "_", str(head), rel, "_", "_",
            ]))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def write_conllu(path: str, sentences: list[ParsedSentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_conllu(sentences))
