"""Preprocessing tool that dependency-parses report files into per-sentence
CoNLL-U consumed by the core evaluator, with sentence and token boundaries
taken verbatim from the core tokenizer."""

from .backends import BackendUnavailable, available_backends, get_backend
from .rulechain import RuleChainBackend

__all__ = ["BackendUnavailable", "available_backends", "get_backend",
           "RuleChainBackend"]

__version__ = "0.1.0"
