"""Two-level report decoder over graph node features.

A topic recurrence attends over the node features once per sentence and
emits a topic vector; a word-level LSTM conditioned on the topic and context
vectors emits tokens greedily until the end marker. Both levels run on the
in-package autodiff, so the whole decode path is gradient-checkable.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

PAD, START, END, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<start>", "<end>", "<unknown>")


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise VocabularyError(f"first four tokens must be {SPECIAL_TOKENS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabularyError("duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    @staticmethod
    def from_corpus(token_lists: list[list[str]], min_freq: int = 3) -> "Vocabulary":
        """Token inventory over a corpus, dropping rare tokens."""
        counts = Counter()
        for tokens in token_lists:
            counts.update(tokens)
        kept = sorted((t for t, c in counts.items()
                       if c >= min_freq and t not in SPECIAL_TOKENS),
                      key=lambda t: (-counts[t], t))
        return Vocabulary(tokens=SPECIAL_TOKENS + tuple(kept))

    def encode(self, tokens: list[str]) -> list[int]:
        idx = self.index
        return [idx.get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @staticmethod
    def load(path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return Vocabulary(tokens=tuple(tokens))


# ---------------------------------------------------------------------------
# parameters


@dataclass
class GraphAttentionParams:
    w_a: Tensor  # (1, k)
    w_v: Tensor  # (k, node_width)
    w_s: Tensor  # (k, hidden)

    @staticmethod
    def init(rng, k: int, node_width: int, hidden: int) -> "GraphAttentionParams":
        return GraphAttentionParams(
            w_a=Tensor(rng.standard_normal((1, k)) / np.sqrt(k)),
            w_v=Tensor(rng.standard_normal((k, node_width)) / np.sqrt(node_width)),
            w_s=Tensor(rng.standard_normal((k, hidden)) / np.sqrt(hidden)),
        )

    def named_tensors(self, prefix: str):
        return [(f"{prefix}.w_a", self.w_a), (f"{prefix}.w_v", self.w_v),
                (f"{prefix}.w_s", self.w_s)]


@dataclass
class TopicLstmParams:
    """Standard LSTM over context vectors plus the projections around it."""

    w_x: dict[str, Tensor]   # gate -> (hidden, node_width)
    w_h: dict[str, Tensor]   # gate -> (hidden, hidden)
    bias: dict[str, Tensor]  # gate -> (1, hidden)
    out_weight: Tensor       # (topic_width, hidden)
    out_bias: Tensor         # (1, topic_width)
    init_weight: Tensor      # (hidden, global_width)
    init_bias: Tensor        # (1, hidden)

    GATES = ("i", "f", "g", "o")

    @staticmethod
    def init(rng, node_width: int, hidden: int, topic_width: int,
             global_width: int) -> "TopicLstmParams":
        w_x = {g: Tensor(rng.standard_normal((hidden, node_width)) / np.sqrt(node_width))
               for g in TopicLstmParams.GATES}
        w_h = {g: Tensor(rng.standard_normal((hidden, hidden)) / np.sqrt(hidden))
               for g in TopicLstmParams.GATES}
        bias = {g: Tensor(np.zeros((1, hidden))) for g in TopicLstmParams.GATES}
        return TopicLstmParams(
            w_x=w_x, w_h=w_h, bias=bias,
            out_weight=Tensor(rng.standard_normal((topic_width, hidden)) / np.sqrt(hidden)),
            out_bias=Tensor(np.zeros((1, topic_width))),
            init_weight=Tensor(rng.standard_normal((hidden, global_width))
                               / np.sqrt(global_width)),
            init_bias=Tensor(np.zeros((1, hidden))),
        )

    def named_tensors(self, prefix: str):
        out = []
        for g in self.GATES:
            out.append((f"{prefix}.w_x_{g}", self.w_x[g]))
            out.append((f"{prefix}.w_h_{g}", self.w_h[g]))
            out.append((f"{prefix}.bias_{g}", self.bias[g]))
        out.extend([(f"{prefix}.out_weight", self.out_weight),
                    (f"{prefix}.out_bias", self.out_bias),
                    (f"{prefix}.init_weight", self.init_weight),
                    (f"{prefix}.init_bias", self.init_bias)])
        return out


@dataclass
class WordLstmParams:
    """Gate maps over topic, context, hidden and (default mode) previous
    token embedding; literal mode drops the embedding term so the gates
    follow the bare printed recurrences."""

    w_s: dict[str, Tensor]   # gate -> (hidden, topic_width)
    w_v: dict[str, Tensor]   # gate -> (hidden, node_width)
    w_h: dict[str, Tensor]   # gate -> (hidden, hidden)
    w_e: dict[str, Tensor]   # gate -> (hidden, embed_width)
    bias: dict[str, Tensor]  # gate -> (1, hidden)
    embedding: Tensor        # (vocab, embed_width)
    out_weight: Tensor       # (vocab, hidden)
    out_bias: Tensor         # (1, vocab)
    literal_gates: bool = False

    GATES = ("i", "f", "g", "o")

    @property
    def hidden(self) -> int:
        return self.w_h["i"].shape[0]

    @staticmethod
    def init(rng, topic_width: int, node_width: int, hidden: int,
             vocab_size: int, embed_width: int = 32,
             literal_gates: bool = False) -> "WordLstmParams":
        def gate_maps(width):
            return {g: Tensor(rng.standard_normal((hidden, width)) / np.sqrt(width))
                    for g in WordLstmParams.GATES}
        return WordLstmParams(
            w_s=gate_maps(topic_width),
            w_v=gate_maps(node_width),
            w_h=gate_maps(hidden),
            w_e=gate_maps(embed_width),
            bias={g: Tensor(np.zeros((1, hidden))) for g in WordLstmParams.GATES},
            embedding=Tensor(rng.standard_normal((vocab_size, embed_width))
                             / np.sqrt(embed_width)),
            out_weight=Tensor(rng.standard_normal((vocab_size, hidden)) / np.sqrt(hidden)),
            out_bias=Tensor(np.zeros((1, vocab_size))),
            literal_gates=literal_gates,
        )

    def named_tensors(self, prefix: str):
        out = []
        for g in self.GATES:
            for part in ("w_s", "w_v", "w_h", "w_e", "bias"):
                out.append((f"{prefix}.{part}_{g}", getattr(self, part)[g]))
        out.extend([(f"{prefix}.embedding", self.embedding),
                    (f"{prefix}.out_weight", self.out_weight),
                    (f"{prefix}.out_bias", self.out_bias)])
        return out


@dataclass
class DecoderParams:
    attention: GraphAttentionParams
    topic: TopicLstmParams
    word: WordLstmParams

    def named_tensors(self):
        return (self.attention.named_tensors("attention")
                + self.topic.named_tensors("topic")
                + self.word.named_tensors("word"))

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


def init_decoder(rng: np.random.Generator, node_width: int, vocab_size: int,
                 hidden: int = 64, k: int = 32, topic_width: int = 32,
                 global_width: int | None = None, embed_width: int = 32,
                 literal_gates: bool = False) -> DecoderParams:
    if global_width is None:
        global_width = node_width
    return DecoderParams(
        attention=GraphAttentionParams.init(rng, k, node_width, hidden),
        topic=TopicLstmParams.init(rng, node_width, hidden, topic_width, global_width),
        word=WordLstmParams.init(rng, topic_width, node_width, hidden, vocab_size,
                                 embed_width, literal_gates),
    )


# ---------------------------------------------------------------------------
# forward steps


@dataclass
class TopicState:
    hidden: Tensor  # (1, hidden)
    cell: Tensor    # (1, hidden)


def init_topic_state(global_feature: Tensor, params: TopicLstmParams) -> TopicState:
    """Hidden state seeded from the globally averaged backbone feature."""
    h = ad.tanh(ad.linear(global_feature, params.init_weight, params.init_bias))
    return TopicState(hidden=h, cell=Tensor(np.zeros(h.shape)))


def graph_attention(node_features: Tensor, h_prev: Tensor,
                    params: GraphAttentionParams):
    """Attention over node features given the previous topic hidden state.

    Returns ((N, 1) weights summing to 1, (1, node_width) context vector).
    """
    scores = ad.tanh(ad.add(ad.matmul(node_features, ad.transpose(params.w_v)),
                            ad.matmul(h_prev, ad.transpose(params.w_s))))
    logits = ad.matmul(scores, ad.transpose(params.w_a))  # (N, 1)
    alpha = ad.softmax(logits, axis=0)
    context = ad.matmul(ad.transpose(alpha), node_features)
    return alpha, context


def _lstm_gates(x: Tensor, h: Tensor, w_x, w_h, bias):
    pre = {}
    for g in ("i", "f", "g", "o"):
        pre[g] = ad.add(ad.add(ad.matmul(x, ad.transpose(w_x[g])),
                               ad.matmul(h, ad.transpose(w_h[g]))), bias[g])
    return pre


def topic_step(context: Tensor, state: TopicState,
               params: TopicLstmParams):
    """One topic-level LSTM step; the state advances once per sentence."""
    pre = _lstm_gates(context, state.hidden, params.w_x, params.w_h, params.bias)
    i, f, o = ad.sigmoid(pre["i"]), ad.sigmoid(pre["f"]), ad.sigmoid(pre["o"])
    g = ad.tanh(pre["g"])
    cell = ad.add(ad.mul(f, state.cell), ad.mul(i, g))
    hidden = ad.mul(o, ad.tanh(cell))
    topic = ad.linear(hidden, params.out_weight, params.out_bias)
    return topic, TopicState(hidden=hidden, cell=cell)


def word_step(topic: Tensor, context: Tensor, h_prev: Tensor, c_prev: Tensor,
              prev_token: int, params: WordLstmParams):
    """One word-level step: gates over topic, context and previous hidden
    (plus the previous-token embedding unless running literal gates);
    returns the new hidden, cell, and the token distribution."""
    pre = {}
    for g in WordLstmParams.GATES:
        acc = ad.add(ad.add(ad.matmul(topic, ad.transpose(params.w_s[g])),
                            ad.matmul(context, ad.transpose(params.w_v[g]))),
                     ad.matmul(h_prev, ad.transpose(params.w_h[g])))
        if not params.literal_gates:
            emb = ad.take_row(params.embedding, prev_token)
            acc = ad.add(acc, ad.matmul(emb, ad.transpose(params.w_e[g])))
        pre[g] = ad.add(acc, params.bias[g])
    i, f, o = ad.sigmoid(pre["i"]), ad.sigmoid(pre["f"]), ad.sigmoid(pre["o"])
    g = ad.tanh(pre["g"])
    cell = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    hidden = ad.mul(o, ad.tanh(cell))
    dist = ad.softmax(ad.linear(hidden, params.out_weight, params.out_bias), axis=1)
    return hidden, cell, dist


# ---------------------------------------------------------------------------
# generation and training


def generate_report(node_features: Tensor, global_feature: Tensor,
                    vocab: Vocabulary, params: DecoderParams,
                    max_sentences: int = 7, max_words: int = 30) -> list[list[str]]:
    """Greedy decode: one topic step per sentence, argmax words until the
    end token; an empty first sentence position terminates the report."""
    if len(vocab) == 0:
        raise VocabularyError("empty vocabulary")
    state = init_topic_state(global_feature, params.topic)
    report: list[list[str]] = []
    for _ in range(max_sentences):
        _, context = graph_attention(node_features, state.hidden, params.attention)
        topic, state = topic_step(context, state, params.topic)
        hidden = Tensor(np.zeros((1, params.word.hidden)))
        cell = Tensor(np.zeros((1, params.word.hidden)))
        prev = START
        words: list[str] = []
        for _ in range(max_words):
            hidden, cell, dist = word_step(topic, context, hidden, cell, prev, params.word)
            token_id = int(np.argmax(dist.values[0]))  # lowest id wins ties
            if token_id == END:
                break
            words.append(vocab.tokens[token_id])
            prev = token_id
        if not words:
            break
        report.append(words)
    return report


def _token_nll(dist: Tensor, target: int) -> Tensor:
    picked = ad.take_row(ad.transpose(dist), target)
    return ad.neg(ad.log(picked))


def teacher_forced_loss(params: DecoderParams, node_features: Tensor,
                        global_feature: Tensor,
                        sentences: list[list[int]]) -> Tensor:
    """Cross-entropy under teacher forcing, averaged over tokens.

    Every sentence is closed with the end token, and one trailing empty
    sentence teaches the report-level stop.
    """
    state = init_topic_state(global_feature, params.topic)
    total = None
    count = 0
    for sentence in list(sentences) + [[]]:
        _, context = graph_attention(node_features, state.hidden, params.attention)
        topic, state = topic_step(context, state, params.topic)
        hidden = Tensor(np.zeros((1, params.word.hidden)))
        cell = Tensor(np.zeros((1, params.word.hidden)))
        prev = START
        for target in list(sentence) + [END]:
            hidden, cell, dist = word_step(topic, context, hidden, cell, prev, params.word)
            nll = _token_nll(dist, target)
            total = nll if total is None else ad.add(total, nll)
            count += 1
            prev = target
    return ad.mul(ad.reshape(total, ()), Tensor(np.array(1.0 / count)))


def train_decoder(params: DecoderParams,
                  corpus: list[tuple[np.ndarray, np.ndarray, list[list[int]]]],
                  steps: int, learning_rate: float,
                  momentum: float = 0.0) -> list[float]:
    """Full-batch teacher-forced training; returns the per-step mean loss."""
    if not corpus:
        raise ValueError("empty corpus")
    tensors = params.tensors()
    velocity = [np.zeros_like(p.values) for p in tensors]
    samples = [(Tensor(e), Tensor(g), sents) for e, g, sents in corpus]
    inv = Tensor(np.array(1.0 / len(samples)))
    trace = []
    for _ in range(steps):
        for p in tensors:
            p.zero_grad()
        with Tape() as tape:
            total = None
            for node_feats, global_feat, sents in samples:
                loss = teacher_forced_loss(params, node_feats, global_feat, sents)
                total = loss if total is None else ad.add(total, loss)
            total = ad.mul(total, inv)
            tape.backward(total)
        value = float(total.values)
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite decoder loss at step {len(trace)}")
        trace.append(value)
        for p, v in zip(tensors, velocity):
            grad = p.grad if p.grad is not None else np.zeros_like(p.values)
            v *= momentum
            v += grad
            p.values -= learning_rate * v
    return trace
