"""parse-adapter: batch-parse report files into per-report CoNLL-U.

Input is either a JSON-lines file of {"id": ..., "text": ...} records or a
plain-text file treated as a single report named after the file stem.
Sentence and token boundaries come from the core tokenizer, so the emitted
FORM columns align with it by construction; a backend that returns different
tokens trips the drift check.

Exit codes: 0 success, 1 internal error, 2 input error,
3 backend unavailable, 4 tokenization drift.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from radgraph_eval.conllu import ParsedSentence, ParseValidationError, write_conllu
from radgraph_eval.reportnlp import tokenize

from .backends import BackendUnavailable, available_backends, get_backend

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_BACKEND = 3
EXIT_DRIFT = 4


class InputProblem(ValueError):
    pass


class TokenDrift(RuntimeError):
    pass


def read_reports(path: str) -> list[tuple[str, str]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as err:
        raise InputProblem(f"cannot read input file {path}: {err}") from err
    stripped = raw.lstrip()
    if stripped.startswith("{"):
        reports = []
        seen = set()
        for lineno, line in enumerate(raw.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as err:
                raise InputProblem(f"line {lineno}: invalid JSON: {err}") from err
            if "id" not in doc or "text" not in doc:
                raise InputProblem(f"line {lineno}: record needs 'id' and 'text'")
            rid = str(doc["id"])
            if rid in seen:
                raise InputProblem(f"line {lineno}: duplicate report id '{rid}'")
            seen.add(rid)
            reports.append((rid, str(doc["text"])))
        return reports
    stem = os.path.splitext(os.path.basename(path))[0]
    return [(stem, raw)]


def parse_report_text(backend, report_id: str, text: str) -> list[ParsedSentence]:
    sentences = tokenize(text)
    parsed = []
    for index, tokens in enumerate(sentences):
        out_tokens, heads, rels = backend.parse(tokens)
        if list(out_tokens) != list(tokens):
            raise TokenDrift(
                f"report '{report_id}' sentence {index}: backend tokens "
                f"{out_tokens!r} drifted from core tokens {tokens!r}")
        parsed.append(ParsedSentence(tuple(tokens), tuple(heads), tuple(rels)))
    return parsed


def run(args) -> int:
    try:
        backend = get_backend(args.backend)
    except KeyError:
        sys.stderr.write(
            f"error: unknown backend '{args.backend}' "
            f"(available: {', '.join(available_backends())})\n")
        return EXIT_INPUT
    try:
        backend.probe()
    except BackendUnavailable as err:
        sys.stderr.write(f"error: backend '{args.backend}' unavailable: {err}\n")
        if err.hint:
            sys.stderr.write(f"hint: {err.hint}\n")
        return EXIT_BACKEND

    try:
        reports = read_reports(args.infile)
    except InputProblem as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_INPUT

    try:
        os.makedirs(args.outdir, exist_ok=True)
    except OSError as err:
        sys.stderr.write(f"error: cannot create output directory: {err}\n")
        return EXIT_INPUT

    for report_id, text in reports:
        try:
            parsed = parse_report_text(backend, report_id, text)
        except TokenDrift as err:
            sys.stderr.write(f"error: {err}\n")
            return EXIT_DRIFT
        except ParseValidationError as err:
            sys.stderr.write(
                f"error: backend produced an invalid tree for '{report_id}': {err}\n")
            return EXIT_INTERNAL
        write_conllu(os.path.join(args.outdir, f"{report_id}.conllu"), parsed)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parse-adapter",
        description="Parse report files into per-report CoNLL-U for the evaluator.")
    parser.add_argument("--in", dest="infile", required=True,
                        help="report file: JSON lines of {id, text} or plain text")
    parser.add_argument("--out", dest="outdir", required=True,
                        help="output directory for <report-id>.conllu files")
    parser.add_argument("--backend", default="rulechain",
                        help=f"parser backend ({', '.join(available_backends())})")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except Exception as err:  # internal failure contract
        sys.stderr.write(f"internal error: {err}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
