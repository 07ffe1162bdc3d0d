"""Radiology report evaluation over a chest-finding knowledge graph.

Ships the graph-matching MIRQI metric next to standard captioning metrics,
the report-to-entity-graph pipeline that feeds them, and desk-scale
gradient-checked implementations of the graph neural components (node
attention, graph convolution, two-level decoder) working off ingested
feature maps.
"""

from .chestkg import (
    ChestGraph,
    FindingCategory,
    GraphValidationError,
    PropagationMatrix,
    load_graph,
    neighbors,
    normalized_propagation,
)
from .conllu import ParsedSentence, ParseValidationError, parse_conllu, read_conllu
from .mirqi import ConfusionCounts, MirqiScore, MirqiWeights, match_graphs, score_corpus, score_pair
from .reportnlp import (
    Entity,
    EntityGraph,
    Lexicon,
    default_lexicon,
    detect_polarity,
    extract_attributes,
    extract_entities,
    load_lexicon,
    parse_report,
    tokenize,
)

__all__ = [
    "ChestGraph", "FindingCategory", "GraphValidationError", "PropagationMatrix",
    "load_graph", "neighbors", "normalized_propagation",
    "ParsedSentence", "ParseValidationError", "parse_conllu", "read_conllu",
    "ConfusionCounts", "MirqiScore", "MirqiWeights", "match_graphs",
    "score_corpus", "score_pair",
    "Entity", "EntityGraph", "Lexicon", "default_lexicon", "detect_polarity",
    "extract_attributes", "extract_entities", "load_lexicon", "parse_report",
    "tokenize",
]

__version__ = "0.1.0"
