"""Reference n-gram captioning metrics: BLEU-N, ROUGE-L, and CIDEr.

These exist for side-by-side comparison with the graph-matching metric, so
their inputs are token lists from the same tokenizer the entity pipeline
uses. BLEU is unsmoothed by default; CIDEr follows the consensus variant
with the gaussian length penalty (sigma=6) and the x10 scale.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0
MAX_NGRAM = 4


class MetricError(ValueError):
    pass


def ngram_counts(tokens: list[str], max_n: int = MAX_NGRAM) -> Counter:
    counts: Counter = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i:i + n])] += 1
    return counts


@dataclass(frozen=True)
class NGramProfile:
    counts: Counter
    length: int

    @staticmethod
    def from_tokens(tokens: list[str], max_n: int = MAX_NGRAM) -> "NGramProfile":
        return NGramProfile(counts=ngram_counts(tokens, max_n), length=len(tokens))


@dataclass(frozen=True)
class CorpusStats:
    """Document frequencies over a reference corpus (CIDEr IDF source)."""

    document_frequency: dict[tuple, int]
    document_count: int


def build_corpus_stats(references: list[list[list[str]]],
                       max_n: int = MAX_NGRAM) -> CorpusStats:
    """`references[i]` is the list of reference token-lists for document i."""
    df: dict[tuple, int] = defaultdict(int)
    for refs in references:
        seen = set()
        for ref in refs:
            seen.update(ngram_counts(ref, max_n).keys())
        for gram in seen:
            df[gram] += 1
    return CorpusStats(document_frequency=dict(df), document_count=len(references))


# ---------------------------------------------------------------------------
# BLEU


def _bleu_stats(candidate: list[str], references: list[list[str]], max_n: int):
    matches = [0] * max_n
    totals = [0] * max_n
    for n in range(1, max_n + 1):
        cand_counts = Counter(tuple(candidate[i:i + n])
                              for i in range(len(candidate) - n + 1))
        max_ref: Counter = Counter()
        for ref in references:
            ref_counts = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
            for gram, count in ref_counts.items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        matches[n - 1] = sum(min(count, max_ref[gram])
                             for gram, count in cand_counts.items())
        totals[n - 1] = max(0, len(candidate) - n + 1)
    closest_ref = min((abs(len(r) - len(candidate)), len(r)) for r in references)[1]
    return matches, totals, len(candidate), closest_ref


def _bleu_from_stats(matches, totals, cand_len, ref_len, max_n, smooth):
    scores = []
    log_sum = 0.0
    zeroed = False
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    for n in range(1, max_n + 1):
        m, t = matches[n - 1], totals[n - 1]
        if smooth and n > 1:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            zeroed = True
        if zeroed:
            scores.append(0.0)
            continue
        log_sum += math.log(m / t)
        scores.append(bp * math.exp(log_sum / n))
    return scores


def bleu(candidate: list[str], references: list[list[str]],
         max_n: int = 4, smooth: bool = False) -> list[float]:
    """Cumulative BLEU-1..max_n for one candidate.

    Unsmoothed by default: an order with zero matches pins that score (and
    all higher orders) to exactly 0. `smooth` applies add-one smoothing to
    orders above 1.
    """
    if not candidate:
        raise MetricError("empty candidate")
    if not references or any(not r for r in references):
        raise MetricError("empty reference")
    stats = _bleu_stats(candidate, references, max_n)
    return _bleu_from_stats(*stats, max_n=max_n, smooth=smooth)


def corpus_bleu(pairs: list[tuple[list[str], list[list[str]]]],
                max_n: int = 4, smooth: bool = False) -> list[float]:
    """Pooled-count BLEU over (candidate, references) pairs."""
    if not pairs:
        raise MetricError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for candidate, references in pairs:
        m, t, c, r = _bleu_stats(candidate, references, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        cand_len += c
        ref_len += r
    return _bleu_from_stats(matches, totals, cand_len, ref_len, max_n, smooth)


# ---------------------------------------------------------------------------
# ROUGE-L


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        row = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                row[j] = prev[j - 1] + 1
            else:
                row[j] = max(prev[j], row[j - 1])
        prev = row
    return prev[len(b)]


def rouge_l(candidate: list[str], reference: list[str],
            beta: float = ROUGE_BETA) -> float:
    """LCS F-measure; beta weights recall over precision."""
    if not candidate or not reference:
        raise MetricError("empty input")
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    recall = lcs / len(reference)
    precision = lcs / len(candidate)
    return (1.0 + beta ** 2) * recall * precision / (recall + beta ** 2 * precision)


# ---------------------------------------------------------------------------
# CIDEr


def _tfidf_vector(tokens: list[str], stats: CorpusStats, max_n: int):
    vec: list[dict] = [dict() for _ in range(max_n)]
    norms = [0.0] * max_n
    log_docs = math.log(max(stats.document_count, 1))
    for gram, count in ngram_counts(tokens, max_n).items():
        df = math.log(max(1.0, stats.document_frequency.get(gram, 0)))
        n = len(gram) - 1
        weight = count * (log_docs - df)
        vec[n][gram] = weight
        norms[n] += weight * weight
    return vec, [math.sqrt(x) for x in norms]


def cider_scores(candidates: list[list[str]], references: list[list[list[str]]],
                 stats: CorpusStats | None = None, max_n: int = MAX_NGRAM,
                 sigma: float = CIDER_SIGMA, variant: str = "d") -> list[float]:
    """Per-document CIDEr scores.

    variant="d": clipped TF-IDF similarity with the gaussian length penalty.
    variant="plain": pure cosine similarity, no penalty.
    """
    if not candidates or len(candidates) != len(references):
        raise MetricError("empty corpus or candidate/reference count mismatch")
    if variant not in ("d", "plain"):
        raise MetricError(f"unknown cider variant {variant!r}")
    if stats is None:
        stats = build_corpus_stats(references, max_n)
    out = []
    for cand, refs in zip(candidates, references):
        cand_vec, cand_norm = _tfidf_vector(cand, stats, max_n)
        score = 0.0
        for ref in refs:
            ref_vec, ref_norm = _tfidf_vector(ref, stats, max_n)
            per_n = [0.0] * max_n
            for n in range(max_n):
                acc = 0.0
                for gram, weight in cand_vec[n].items():
                    ref_weight = ref_vec[n].get(gram, 0.0)
                    if variant == "d":
                        acc += min(weight, ref_weight) * ref_weight
                    else:
                        acc += weight * ref_weight
                if cand_norm[n] != 0.0 and ref_norm[n] != 0.0:
                    acc /= cand_norm[n] * ref_norm[n]
                else:
                    acc = 0.0
                if variant == "d":
                    delta = float(len(cand) - len(ref))
                    acc *= math.exp(-(delta ** 2) / (2.0 * sigma ** 2))
                per_n[n] = acc
            score += sum(per_n) / max_n
        out.append(CIDER_SCALE * score / len(refs))
    return out


def cider(candidates: list[list[str]], references: list[list[list[str]]],
          stats: CorpusStats | None = None, max_n: int = MAX_NGRAM,
          sigma: float = CIDER_SIGMA, variant: str = "d") -> float:
    """Corpus CIDEr: mean of the per-document scores."""
    scores = cider_scores(candidates, references, stats, max_n, sigma, variant)
    return sum(scores) / len(scores)
