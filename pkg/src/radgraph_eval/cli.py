"""Command-line surface: corpus scoring, entity-graph inspection, graph
dumps, gradient verification, and the desk-scale generation demo.

Exit codes: 0 success, 1 internal error, 2 input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import captionmetrics as cm
from . import chestkg, conllu, decoder, graphnn, mirqi, reportnlp, tensorio
from .autodiff import Tensor

GRADCHECK_TOLERANCE = 1e-4


class InputError(ValueError):
    """User-facing input problem; mapped to exit code 2."""


# ---------------------------------------------------------------------------
# corpus handling


@dataclass
class CorpusRecord:
    id: str
    gt: str
    gen: str
    gt_parse: str | None = None
    gen_parse: str | None = None


def read_corpus(path: str) -> list[CorpusRecord]:
    """Line-delimited records: JSON objects with id/gt/gen (+ optional
    gt_parse/gen_parse paths), or plain tab-separated id<TAB>gt<TAB>gen."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise InputError(f"cannot read corpus file {path}: {err}") from err
    records = []
    seen_ids = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("{"):
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as err:
                raise InputError(f"line {lineno}: invalid JSON record: {err}") from err
            for field in ("id", "gt", "gen"):
                if field not in doc:
                    raise InputError(f"line {lineno}: missing field '{field}'")
            rec = CorpusRecord(id=str(doc["id"]), gt=str(doc["gt"]), gen=str(doc["gen"]),
                               gt_parse=doc.get("gt_parse"), gen_parse=doc.get("gen_parse"))
        else:
            parts = line.split("\t")
            if len(parts) != 3:
                raise InputError(f"line {lineno}: expected id<TAB>gt<TAB>gen")
            rec = CorpusRecord(id=parts[0], gt=parts[1], gen=parts[2])
        if not rec.gt.strip() or not rec.gen.strip():
            raise InputError(f"line {lineno}: empty report field")
        if rec.id in seen_ids:
            raise InputError(f"line {lineno}: duplicate record id '{rec.id}'")
        seen_ids.add(rec.id)
        records.append(rec)
    if not records:
        raise InputError("empty corpus")
    return records


def _load_parses(ref: str | None, base_dir: str) -> list[conllu.ParsedSentence] | None:
    if ref is None:
        return None
    path = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
    try:
        return conllu.read_conllu(path)
    except OSError as err:
        raise InputError(f"unreadable parse file {path}: {err}") from err
    except conllu.ParseValidationError as err:
        raise InputError(f"invalid parse file {path}: {err}") from err


def _lexicon_from_args(args) -> tuple[reportnlp.Lexicon, str, str]:
    if getattr(args, "lexicon", None):
        lex = reportnlp.load_lexicon(args.lexicon)
        with open(args.lexicon, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        return lex, args.lexicon, digest
    from importlib import resources
    data = resources.files("radgraph_eval.data").joinpath("lexicon.tsv").read_bytes()
    return reportnlp.default_lexicon(), "default", hashlib.sha256(data).hexdigest()


def _graph_from_args(args) -> tuple[chestkg.ChestGraph, str]:
    path = getattr(args, "graph", None)
    label = path or os.environ.get(chestkg.GRAPH_ENV_VAR) or "default"
    try:
        return chestkg.load_graph(path), label
    except OSError as err:
        raise InputError(f"cannot read graph file: {err}") from err
    except chestkg.GraphValidationError as err:
        raise InputError(f"invalid graph: {err}") from err


# ---------------------------------------------------------------------------
# score command


_METRIC_FIELDS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider",
                  "mirqi_r", "mirqi_p", "mirqi_f1")


def _flatten(sentences: list[list[str]]) -> list[str]:
    return [tok for sent in sentences for tok in sent]


def cmd_score(args) -> int:
    records = read_corpus(args.corpus)
    lexicon, lexicon_label, lexicon_hash = _lexicon_from_args(args)
    graph, graph_label = _graph_from_args(args)
    lexicon.validate(graph)
    weights = mirqi.MirqiWeights(w_pos=args.w_pos, w_attr=args.w_attr)
    parse_base = args.parses or os.path.dirname(os.path.abspath(args.corpus))

    prepared = []
    for rec in records:
        gt_parses = _load_parses(rec.gt_parse, parse_base)
        gen_parses = _load_parses(rec.gen_parse, parse_base)
        prepared.append((rec, gt_parses, gen_parses))

    stats = cm.build_corpus_stats(
        [[_flatten(reportnlp.tokenize(rec.gt))] for rec in records])

    def score_one(item):
        rec, gt_parses, gen_parses = item
        gt_tokens = _flatten(reportnlp.tokenize(rec.gt))
        gen_tokens = _flatten(reportnlp.tokenize(rec.gen))
        bleu = cm.bleu(gen_tokens, [gt_tokens], max_n=4)
        rouge = cm.rouge_l(gen_tokens, gt_tokens)
        cider = cm.cider_scores([gen_tokens], [[gt_tokens]], stats=stats)[0]
        try:
            gt_graph = reportnlp.parse_report(rec.gt, lexicon, parses=gt_parses)
            gen_graph = reportnlp.parse_report(rec.gen, lexicon, parses=gen_parses)
        except reportnlp.ReportError as err:
            raise InputError(f"record '{rec.id}': {err}") from err
        score = mirqi.score_pair(gt_graph, gen_graph, weights=weights,
                                 uncertain_as=args.uncertain_as,
                                 f1_literal=args.f1_literal,
                                 categories=frozenset(graph.category_names))
        metrics = {
            "bleu1": bleu[0], "bleu2": bleu[1], "bleu3": bleu[2], "bleu4": bleu[3],
            "rouge_l": rouge, "cider": cider,
            "mirqi_r": score.recall, "mirqi_p": score.precision, "mirqi_f1": score.f1,
        }
        return rec.id, metrics, score.counts

    if args.jobs <= 1:
        results = [score_one(item) for item in prepared]
    else:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(score_one, prepared))

    aggregate = {f: sum(r[1][f] for r in results) / len(results) for f in _METRIC_FIELDS}
    total_counts = mirqi.ConfusionCounts()
    for _, _, counts in results:
        total_counts = total_counts + counts

    config = {
        "w_pos": args.w_pos, "w_attr": args.w_attr, "f1_literal": args.f1_literal,
        "uncertain_as": args.uncertain_as, "lexicon": lexicon_label,
        "lexicon_sha256": lexicon_hash, "graph": graph_label,
        "format": args.format, "jobs": args.jobs, "seed": args.seed,
    }

    out = sys.stdout if args.out is None else open(args.out, "w", encoding="utf-8")
    try:
        if args.format == "json-lines":
            out.write(json.dumps({"type": "config", **config}) + "\n")
            for rec_id, metrics, counts in results:
                out.write(json.dumps({"type": "record", "id": rec_id, **metrics,
                                      "counts": counts.as_dict()}) + "\n")
            out.write(json.dumps({"type": "aggregate", **aggregate,
                                  "counts": total_counts.as_dict()}) + "\n")
        else:
            out.write("# config " + json.dumps(config) + "\n")
            header = ["id", *_METRIC_FIELDS, "tp_kw", "tp_attr", "tn", "fp", "fn"]
            out.write("\t".join(header) + "\n")

            def row(name, metrics, counts):
                cells = [name] + [f"{metrics[f]:.4f}" for f in _METRIC_FIELDS]
                cells += [str(counts.tp_keywords), f"{counts.tp_attributes:.4f}",
                          str(counts.tn), str(counts.fp), str(counts.fn)]
                return "\t".join(cells) + "\n"

            for rec_id, metrics, counts in results:
                out.write(row(rec_id, metrics, counts))
            out.write(row("aggregate", aggregate, total_counts))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# parse command


def cmd_parse(args) -> int:
    try:
        with open(args.infile, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise InputError(f"cannot read report file {args.infile}: {err}") from err
    lexicon, _, _ = _lexicon_from_args(args)
    graph, _ = _graph_from_args(args)
    lexicon.validate(graph)
    parses = None
    if args.conllu:
        parses = _load_parses(args.conllu, os.getcwd())
    try:
        entity_graph = reportnlp.parse_report(text, lexicon, parses=parses)
    except reportnlp.ReportError as err:
        raise InputError(str(err)) from err
    sys.stdout.write(entity_graph.serialize())
    return 0


# ---------------------------------------------------------------------------
# graph commands


def cmd_graph_dump(args) -> int:
    graph, _ = _graph_from_args(args)
    if args.format == "edges":
        n = graph.node_count
        for i in range(n):
            for j in range(i + 1, n):
                if graph.adjacency[i, j]:
                    sys.stdout.write(f"{graph.node_name(i)}\t{graph.node_name(j)}\n")
        return 0
    if args.propagation:
        matrix = chestkg.normalized_propagation(graph, mode=args.propagation_mode).values
    else:
        matrix = graph.adjacency.astype(np.float64)
    for row in matrix:
        sys.stdout.write(" ".join(f"{value:.6f}" for value in row) + "\n")
    return 0


# ---------------------------------------------------------------------------
# nn commands


def _gradcheck_primitives(rng) -> dict[str, float]:
    results = {}
    x = Tensor(rng.standard_normal((3, 4)))
    w = Tensor(rng.standard_normal((5, 4)))
    b = Tensor(rng.standard_normal((1, 5)))
    results["linear"] = ad.grad_check(lambda: ad.sum_(ad.linear(x, w, b)), [x, w, b])

    r = Tensor(rng.standard_normal((3, 5)))
    results["matmul"] = ad.grad_check(
        lambda: ad.sum_(ad.mul(ad.matmul(x, ad.transpose(w)), r)), [x, w])

    # keep ReLU probes off the kink
    z_vals = rng.standard_normal((4, 4))
    z_vals[np.abs(z_vals) < 0.2] += 0.5
    z = Tensor(z_vals)
    results["relu"] = ad.grad_check(lambda: ad.sum_(ad.relu(z)), [z])
    results["sigmoid"] = ad.grad_check(lambda: ad.sum_(ad.sigmoid(x)), [x])
    results["tanh"] = ad.grad_check(lambda: ad.sum_(ad.tanh(x)), [x])

    s = Tensor(rng.standard_normal((3, 6)))
    mix = Tensor(rng.standard_normal((3, 6)))
    results["softmax"] = ad.grad_check(
        lambda: ad.sum_(ad.mul(ad.softmax(s, axis=1), mix)), [s])

    gamma = Tensor(rng.standard_normal((1, 4)) * 0.5 + 1.0)
    beta = Tensor(rng.standard_normal((1, 4)) * 0.1)
    norm_mix = Tensor(rng.standard_normal(x.shape))
    results["feature_norm"] = ad.grad_check(
        lambda: ad.sum_(ad.mul(ad.feature_norm(x, gamma, beta), norm_mix)),
        [x, gamma, beta])

    a = Tensor(rng.standard_normal((2, 3)))
    c = Tensor(rng.standard_normal((2, 2)))
    results["concat"] = ad.grad_check(
        lambda: ad.sum_(ad.power(ad.concat([a, c], axis=1), 2.0)), [a, c])

    pred = Tensor(rng.uniform(0.1, 0.9, size=(1, 6)))
    target = Tensor((rng.random((1, 6)) < 0.5).astype(float))
    wts = Tensor(rng.uniform(1.0, 3.0, size=(1, 6)))
    results["weighted_bce"] = ad.grad_check(
        lambda: graphnn.weighted_bce(pred, target, wts), [pred])
    return results


def _gradcheck_classifier(rng, seed: int) -> float:
    graph = chestkg.load_graph()
    prop = chestkg.normalized_propagation(graph)
    channels, height, width = 6, 3, 3
    model = graphnn.init_model(rng, channels, len(graph.categories), hidden=64)
    fmap = Tensor(rng.standard_normal((channels, height, width)))
    targets = Tensor((rng.random((1, len(graph.categories))) < 0.5).astype(float))
    pos_w = Tensor(rng.uniform(1.0, 3.0, size=targets.shape))

    def loss():
        probs, node_feats, _ = graphnn.forward_classifier(model, prop, fmap)
        main = graphnn.weighted_bce(probs, targets, pos_w)
        aux = graphnn.aux_loss(node_feats, targets, model.classifier, pos_w)
        return ad.add(main, aux)

    inputs = model.tensors() + [fmap]
    return ad.grad_check(loss, inputs, max_coords_per_input=64, seed=seed)


def _gradcheck_decoder(rng, seed: int) -> float:
    n_nodes, node_width, vocab_size = 21, 64, 12
    params = decoder.init_decoder(rng, node_width, vocab_size, hidden=64,
                                  k=32, topic_width=32, embed_width=16)
    node_feats = Tensor(rng.standard_normal((n_nodes, node_width)))
    global_feat = Tensor(rng.standard_normal((1, node_width)))
    sentences = [[5, 7, 9], [4, 6]]

    def loss():
        return decoder.teacher_forced_loss(params, node_feats, global_feat, sentences)

    inputs = params.tensors() + [node_feats, global_feat]
    return ad.grad_check(loss, inputs, max_coords_per_input=48, seed=seed)


def run_gradcheck(seed: int, stream=None) -> int:
    stream = stream or sys.stdout
    rng = np.random.default_rng(seed)
    results = _gradcheck_primitives(rng)
    results["classifier_chain"] = _gradcheck_classifier(rng, seed)
    results["decoder_chain"] = _gradcheck_decoder(rng, seed)
    failed = False
    for name, err in results.items():
        ok = err < GRADCHECK_TOLERANCE
        failed |= not ok
        stream.write(f"{name}: max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}\n")
    return 1 if failed else 0


def cmd_nn(args) -> int:
    if args.nn_command == "gradcheck":
        return run_gradcheck(args.seed)

    if args.nn_command == "overfit":
        rng = np.random.default_rng(args.seed)
        graph = chestkg.load_graph()
        prop = chestkg.normalized_propagation(graph)
        dataset = graphnn.make_synthetic_classification_set(
            rng, n_samples=8, n_classes=len(graph.categories))
        model = graphnn.init_model(rng, channels=16, n_classes=len(graph.categories),
                                   hidden=64)
        trace = graphnn.fit(model, prop, dataset, steps=args.steps,
                            learning_rate=args.lr, momentum=args.momentum)
        for i, step in enumerate(trace):
            if i % 100 == 0 or i == len(trace) - 1:
                sys.stdout.write(
                    f"step {i}: total={step.total:.6f} main={step.main:.6f} "
                    f"aux={step.aux:.6f}\n")
        sys.stdout.write(f"final main loss: {trace[-1].main:.6f}\n")
        return 0

    if args.nn_command == "generate":
        try:
            tensors = tensorio.read_checkpoint(args.checkpoint)
        except (OSError, tensorio.ContainerError) as err:
            raise InputError(f"cannot read checkpoint {args.checkpoint}: {err}") from err
        try:
            fmap = tensorio.read_feature_map(args.features)
        except (OSError, tensorio.ContainerError) as err:
            raise InputError(f"cannot read feature map {args.features}: {err}") from err
        try:
            vocab = decoder.Vocabulary.load(args.vocab)
        except (OSError, decoder.VocabularyError) as err:
            raise InputError(f"cannot load vocabulary {args.vocab}: {err}") from err
        graph, _ = _graph_from_args(args)
        prop = chestkg.normalized_propagation(graph)
        model = model_from_checkpoint(tensors)
        dec = decoder_from_checkpoint(tensors)
        _, node_feats, _ = graphnn.forward_classifier(model, prop, Tensor(fmap, check_finite=True))
        hidden = node_feats
        for layer in model.conv_layers:
            hidden = graphnn.graph_conv(hidden, prop, layer)
        global_feat = ad.mean(hidden, axis=0, keepdims=True)
        report = decoder.generate_report(hidden, global_feat, vocab, dec,
                                         max_sentences=args.max_sentences,
                                         max_words=args.max_words)
        sys.stdout.write(" . ".join(" ".join(s) for s in report) + "\n")
        return 0

    raise InputError(f"unknown nn subcommand {args.nn_command!r}")


# ---------------------------------------------------------------------------
# checkpoint (de)serialization


def save_checkpoint(path: str, model: graphnn.ModelParams,
                    dec: decoder.DecoderParams) -> None:
    tensors = {f"model.{n}": t.values for n, t in model.named_tensors()}
    tensors.update({f"decoder.{n}": t.values for n, t in dec.named_tensors()})
    tensorio.write_checkpoint(path, tensors)


def _take(tensors: dict, key: str) -> Tensor:
    if key not in tensors:
        raise InputError(f"checkpoint is missing tensor '{key}'")
    return Tensor(tensors[key])


def model_from_checkpoint(tensors: dict) -> graphnn.ModelParams:
    attention = graphnn.NodeAttentionParams(
        weight=_take(tensors, "model.attention.weight"),
        bias=_take(tensors, "model.attention.bias"))
    layers = []
    i = 0
    while f"model.conv{i}.msg_weight" in tensors:
        prefix = f"model.conv{i}"
        layers.append(graphnn.GraphConvParams(
            msg_weight=_take(tensors, f"{prefix}.msg_weight"),
            msg_bias=_take(tensors, f"{prefix}.msg_bias"),
            upd_weight=_take(tensors, f"{prefix}.upd_weight"),
            upd_bias=_take(tensors, f"{prefix}.upd_bias"),
            msg_gamma=_take(tensors, f"{prefix}.msg_gamma"),
            msg_beta=_take(tensors, f"{prefix}.msg_beta"),
            upd_gamma=_take(tensors, f"{prefix}.upd_gamma"),
            upd_beta=_take(tensors, f"{prefix}.upd_beta")))
        i += 1
    classifier = graphnn.ClassifierParams(
        main_weight=_take(tensors, "model.classifier.main_weight"),
        main_bias=_take(tensors, "model.classifier.main_bias"),
        aux_weight=_take(tensors, "model.classifier.aux_weight"),
        aux_bias=_take(tensors, "model.classifier.aux_bias"))
    return graphnn.ModelParams(attention=attention, conv_layers=layers,
                               classifier=classifier)


def decoder_from_checkpoint(tensors: dict) -> decoder.DecoderParams:
    attention = decoder.GraphAttentionParams(
        w_a=_take(tensors, "decoder.attention.w_a"),
        w_v=_take(tensors, "decoder.attention.w_v"),
        w_s=_take(tensors, "decoder.attention.w_s"))
    gates = decoder.TopicLstmParams.GATES
    topic = decoder.TopicLstmParams(
        w_x={g: _take(tensors, f"decoder.topic.w_x_{g}") for g in gates},
        w_h={g: _take(tensors, f"decoder.topic.w_h_{g}") for g in gates},
        bias={g: _take(tensors, f"decoder.topic.bias_{g}") for g in gates},
        out_weight=_take(tensors, "decoder.topic.out_weight"),
        out_bias=_take(tensors, "decoder.topic.out_bias"),
        init_weight=_take(tensors, "decoder.topic.init_weight"),
        init_bias=_take(tensors, "decoder.topic.init_bias"))
    word = decoder.WordLstmParams(
        w_s={g: _take(tensors, f"decoder.word.w_s_{g}") for g in gates},
        w_v={g: _take(tensors, f"decoder.word.w_v_{g}") for g in gates},
        w_h={g: _take(tensors, f"decoder.word.w_h_{g}") for g in gates},
        w_e={g: _take(tensors, f"decoder.word.w_e_{g}") for g in gates},
        bias={g: _take(tensors, f"decoder.word.bias_{g}") for g in gates},
        embedding=_take(tensors, "decoder.word.embedding"),
        out_weight=_take(tensors, "decoder.word.out_weight"),
        out_bias=_take(tensors, "decoder.word.out_bias"))
    return decoder.DecoderParams(attention=attention, topic=topic, word=word)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radgraph-eval",
        description="Score radiology reports with graph-matching and n-gram metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--lexicon", help="lexicon TSV path (default: packaged)")
        p.add_argument("--graph", help="graph definition path (default: packaged)")

    p_score = sub.add_parser("score", help="score a paired-report corpus")
    p_score.add_argument("--corpus", required=True)
    p_score.add_argument("--w-pos", type=float, default=mirqi.DEFAULT_W_POS, dest="w_pos")
    p_score.add_argument("--w-attr", type=float, default=mirqi.DEFAULT_W_ATTR, dest="w_attr")
    p_score.add_argument("--f1-literal", action="store_true", dest="f1_literal")
    p_score.add_argument("--uncertain-as", choices=["positive", "negative"],
                         default="positive", dest="uncertain_as")
    p_score.add_argument("--parses", help="base directory for parse references")
    p_score.add_argument("--format", choices=["text", "json-lines"], default="text")
    p_score.add_argument("--jobs", type=int, default=1)
    p_score.add_argument("--seed", type=int, default=0)
    p_score.add_argument("--out", help="write the report here instead of stdout")
    add_common(p_score)
    p_score.set_defaults(func=cmd_score)

    p_parse = sub.add_parser("parse", help="dump the entity graph of one report")
    p_parse.add_argument("--in", dest="infile", required=True)
    p_parse.add_argument("--conllu", help="per-sentence CoNLL-U parses for the report")
    add_common(p_parse)
    p_parse.set_defaults(func=cmd_parse)

    p_graph = sub.add_parser("graph", help="knowledge-graph utilities")
    graph_sub = p_graph.add_subparsers(dest="graph_command", required=True)
    p_dump = graph_sub.add_parser("dump", help="print adjacency or propagation matrix")
    p_dump.add_argument("--format", choices=["matrix", "edges"], default="matrix")
    p_dump.add_argument("--propagation", action="store_true",
                        help="print the normalized propagation matrix instead of adjacency")
    p_dump.add_argument("--propagation-mode", choices=["renormalized", "laplacian"],
                        default="renormalized", dest="propagation_mode")
    p_dump.add_argument("--graph", help="graph definition path (default: packaged)")
    p_dump.set_defaults(func=cmd_graph_dump)

    p_nn = sub.add_parser("nn", help="numeric-core diagnostics")
    nn_sub = p_nn.add_subparsers(dest="nn_command", required=True)
    p_gc = nn_sub.add_parser("gradcheck", help="verify gradients against central differences")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.set_defaults(func=cmd_nn)
    p_of = nn_sub.add_parser("overfit", help="overfit the synthetic classification set")
    p_of.add_argument("--seed", type=int, default=0)
    p_of.add_argument("--steps", type=int, default=2000)
    p_of.add_argument("--lr", type=float, default=0.05)
    p_of.add_argument("--momentum", type=float, default=0.9)
    p_of.set_defaults(func=cmd_nn)
    p_gen = nn_sub.add_parser("generate", help="decode a report from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--features", required=True)
    p_gen.add_argument("--vocab", required=True)
    p_gen.add_argument("--graph", help="graph definition path (default: packaged)")
    p_gen.add_argument("--max-sentences", type=int, default=7, dest="max_sentences")
    p_gen.add_argument("--max-words", type=int, default=30, dest="max_words")
    p_gen.set_defaults(func=cmd_nn)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        sys.stderr.write(f"error: {err}\n")
        return 2
    except BrokenPipeError:
        return 0
    except Exception as err:  # internal failure contract
        sys.stderr.write(f"internal error: {err}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
