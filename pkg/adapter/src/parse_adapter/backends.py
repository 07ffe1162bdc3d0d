"""Backend registry: any object with `name`, `probe()` and
`parse(tokens) -> (tokens, heads, deprels)` qualifies.

`probe()` raises BackendUnavailable (with an install hint) when the backend
cannot run; heads are 1-based with 0 for the root.
"""

from __future__ import annotations

from .rulechain import RuleChainBackend


class BackendUnavailable(RuntimeError):
    def __init__(self, message: str, hint: str = ""):
        super().__init__(message)
        self.hint = hint


class SpacyBackend:
    """Optional backend over a pretrained spaCy pipeline; the pipeline runs
    on the core's tokens so sentence and token boundaries never drift."""

    name = "spacy"

    def __init__(self, model: str = "en_core_web_sm"):
        self.model = model
        self._nlp = None

    def probe(self) -> None:
        try:
            import spacy
        except ImportError as err:
            raise BackendUnavailable(
                "spaCy is not installed",
                hint="pip install spacy && python -m spacy download en_core_web_sm",
            ) from err
        try:
            self._nlp = spacy.load(self.model)
        except OSError as err:
            raise BackendUnavailable(
                f"spaCy model '{self.model}' is not installed",
                hint=f"python -m spacy download {self.model}",
            ) from err

    def parse(self, tokens: list[str]):
        if self._nlp is None:
            self.probe()
        from spacy.tokens import Doc
        doc = Doc(self._nlp.vocab, words=list(tokens))
        for _, component in self._nlp.pipeline:
            doc = component(doc)
        heads = []
        rels = []
        for tok in doc:
            if tok.head is tok:
                heads.append(0)
                rels.append("root")
            else:
                heads.append(tok.head.i + 1)
                rels.append(tok.dep_.lower())
        return [t.text for t in doc], heads, rels


_REGISTRY = {
    "rulechain": RuleChainBackend,
    "spacy": SpacyBackend,
}


def available_backends() -> list[str]:
    return sorted(_REGISTRY)


def get_backend(name: str):
    if name not in _REGISTRY:
        raise KeyError(name)
    return _REGISTRY[name]()
