"""Graph-matching report quality metric.

A ground-truth and a generated entity graph are matched category by
category into keyword/attribute confusion counts, then combined into
weighted recall, precision and F1. Positive and negative mention accuracy
are weighted `w_pos` / `1 - w_pos`; matched attributes blend into the true
positive mass with weight `w_attr`.
"""

from __future__ import annotations

from dataclasses import dataclass

from .reportnlp import NEGATIVE, POSITIVE, UNCERTAIN, EntityGraph

DEFAULT_W_POS = 0.8
DEFAULT_W_ATTR = 0.2


class MirqiError(ValueError):
    pass


@dataclass(frozen=True)
class MirqiWeights:
    w_pos: float = DEFAULT_W_POS
    w_attr: float = DEFAULT_W_ATTR

    def __post_init__(self):
        if not 0.0 <= self.w_pos <= 1.0:
            raise MirqiError(f"w_pos {self.w_pos} outside [0, 1]")
        if not 0.0 <= self.w_attr <= 1.0:
            raise MirqiError(f"w_attr {self.w_attr} outside [0, 1]")

    @property
    def w_neg(self) -> float:
        return 1.0 - self.w_pos


@dataclass(frozen=True)
class ConfusionCounts:
    tp_keywords: int = 0
    tp_attributes: float = 0.0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp_keywords, self.tn, self.fp, self.fn) < 0 or self.tp_attributes < 0:
            raise MirqiError("negative confusion count")
        if self.tp_attributes > self.tp_keywords + 1e-12:
            raise MirqiError("tp_attributes exceeds tp_keywords")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp_keywords=self.tp_keywords + other.tp_keywords,
            tp_attributes=self.tp_attributes + other.tp_attributes,
            tn=self.tn + other.tn,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
        )

    def as_dict(self) -> dict:
        return {
            "tp_keywords": self.tp_keywords,
            "tp_attributes": self.tp_attributes,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
        }


@dataclass(frozen=True)
class MirqiScore:
    recall: float
    precision: float
    f1: float
    counts: ConfusionCounts


def _resolved_summary(graph: EntityGraph, uncertain_as: str) -> dict[str, tuple[str, frozenset[str]]]:
    if uncertain_as not in (POSITIVE, NEGATIVE):
        raise MirqiError(f"uncertain_as must be positive or negative, got {uncertain_as!r}")
    out = {}
    for category, (polarity, attributes) in graph.summary.items():
        if polarity == UNCERTAIN:
            polarity = uncertain_as
        out[category] = (polarity, attributes)
    return out


def match_graphs(gt: EntityGraph, gen: EntityGraph,
                 uncertain_as: str = POSITIVE,
                 categories: frozenset[str] | None = None) -> ConfusionCounts:
    """Node-by-node category matching.

    Matched positives earn keyword credit plus fractional attribute credit
    (share of ground-truth attributes recovered; 1 when there are none).
    Generated negatives for categories the ground truth never mentions are
    deliberately uncounted. With `categories` given, any summary key outside
    that shared set is an error.
    """
    gt_summary = _resolved_summary(gt, uncertain_as)
    gen_summary = _resolved_summary(gen, uncertain_as)
    if categories is not None:
        for side, summary in (("gt", gt_summary), ("gen", gen_summary)):
            unknown = set(summary) - categories
            if unknown:
                raise MirqiError(
                    f"{side} graph mentions categories outside the shared "
                    f"graph: {sorted(unknown)}")
    tp_kw, tp_attr, tn, fp, fn = 0, 0.0, 0, 0, 0
    for category in sorted(set(gt_summary) | set(gen_summary)):
        gt_entry = gt_summary.get(category)
        gen_entry = gen_summary.get(category)
        gt_pol = gt_entry[0] if gt_entry else None
        gen_pol = gen_entry[0] if gen_entry else None
        if gt_pol == POSITIVE and gen_pol == POSITIVE:
            tp_kw += 1
            gt_attrs, gen_attrs = gt_entry[1], gen_entry[1]
            if gt_attrs:
                tp_attr += len(gt_attrs & gen_attrs) / len(gt_attrs)
            else:
                tp_attr += 1.0
        elif gt_pol == NEGATIVE and gen_pol == NEGATIVE:
            tn += 1
        elif gen_pol == POSITIVE:
            fp += 1
        elif gt_pol == POSITIVE:
            fn += 1
        # gen negative with gt unmentioned: harmless, no count
    return ConfusionCounts(tp_keywords=tp_kw, tp_attributes=tp_attr, tn=tn, fp=fp, fn=fn)


def _ratio(numerator: float, denominator: float) -> float:
    # nothing to get right means nothing got wrong
    if denominator == 0.0:
        return 1.0
    return numerator / denominator


def score_counts(counts: ConfusionCounts, weights: MirqiWeights = MirqiWeights(),
                 f1_literal: bool = False) -> MirqiScore:
    tp = (1.0 - weights.w_attr) * counts.tp_keywords + weights.w_attr * counts.tp_attributes
    recall = (weights.w_pos * _ratio(tp, tp + counts.fn)
              + weights.w_neg * _ratio(counts.tn, counts.tn + counts.fp))
    precision = (weights.w_pos * _ratio(tp, tp + counts.fp)
                 + weights.w_neg * _ratio(counts.tn, counts.tn + counts.fn))
    if recall == 0.0 and precision == 0.0:
        f1 = 0.0
    elif f1_literal:
        f1 = recall * precision / (recall + precision)
    else:
        f1 = 2.0 * recall * precision / (recall + precision)
    return MirqiScore(recall=recall, precision=precision, f1=f1, counts=counts)


def score_pair(gt: EntityGraph, gen: EntityGraph,
               weights: MirqiWeights = MirqiWeights(),
               uncertain_as: str = POSITIVE,
               f1_literal: bool = False,
               categories: frozenset[str] | None = None) -> MirqiScore:
    counts = match_graphs(gt, gen, uncertain_as=uncertain_as, categories=categories)
    return score_counts(counts, weights=weights, f1_literal=f1_literal)


def score_corpus(pairs: list[tuple[EntityGraph, EntityGraph]],
                 weights: MirqiWeights = MirqiWeights(),
                 uncertain_as: str = POSITIVE,
                 f1_literal: bool = False) -> tuple[MirqiScore, list[MirqiScore]]:
    """Macro aggregate (mean of per-pair scores) plus the per-pair list in
    input order; counts in the aggregate are summed."""
    if not pairs:
        raise MirqiError("empty corpus")
    per_pair = [score_pair(gt, gen, weights=weights, uncertain_as=uncertain_as,
                           f1_literal=f1_literal) for gt, gen in pairs]
    n = len(per_pair)
    total_counts = ConfusionCounts()
    for s in per_pair:
        total_counts = total_counts + s.counts
    aggregate = MirqiScore(
        recall=sum(s.recall for s in per_pair) / n,
        precision=sum(s.precision for s in per_pair) / n,
        f1=sum(s.f1 for s in per_pair) / n,
        counts=total_counts,
    )
    return aggregate, per_pair
