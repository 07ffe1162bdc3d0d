import json
import os
from pathlib import Path

import pytest

from radgraph_eval.conllu import read_conllu
from radgraph_eval.reportnlp import tokenize

from parse_adapter import cli
from parse_adapter.backends import BackendUnavailable, SpacyBackend

DATA = Path(__file__).parent / "data"
FIG3_TEXT = "there is minimal patchy airspace disease in the lingula"


class TestCli:
    def test_single_text_file(self, tmp_path):
        report = tmp_path / "fig3.txt"
        report.write_text(FIG3_TEXT)
        out = tmp_path / "out"
        rc = cli.main(["--in", str(report), "--out", str(out)])
        assert rc == 0
        sentences = read_conllu(str(out / "fig3.conllu"))
        assert len(sentences) == 1
        assert list(sentences[0].tokens) == tokenize(FIG3_TEXT)[0]

    def test_empty_report_gives_empty_file(self, tmp_path):
        report = tmp_path / "empty.txt"
        report.write_text("")
        out = tmp_path / "out"
        assert cli.main(["--in", str(report), "--out", str(out)]) == 0
        assert (out / "empty.conllu").read_text() == ""

    def test_single_token_sentence(self, tmp_path):
        report = tmp_path / "one.txt"
        report.write_text("pneumothorax")
        out = tmp_path / "out"
        assert cli.main(["--in", str(report), "--out", str(out)]) == 0
        sent = read_conllu(str(out / "one.conllu"))[0]
        assert sent.heads == (0,)
        assert sent.deprels == ("root",)

    def test_unknown_backend_exit_two(self, tmp_path, capsys):
        report = tmp_path / "r.txt"
        report.write_text("effusion")
        rc = cli.main(["--in", str(report), "--out", str(tmp_path / "o"),
                       "--backend", "nonesuch"])
        assert rc == cli.EXIT_INPUT
        assert "nonesuch" in capsys.readouterr().err

    def test_missing_input_exit_two(self, tmp_path):
        rc = cli.main(["--in", str(tmp_path / "missing.jsonl"),
                       "--out", str(tmp_path / "o")])
        assert rc == cli.EXIT_INPUT

    def test_malformed_jsonl_exit_two(self, tmp_path, capsys):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a"}\n')
        rc = cli.main(["--in", str(path), "--out", str(tmp_path / "o")])
        assert rc == cli.EXIT_INPUT
        assert "line 1" in capsys.readouterr().err

    def test_spacy_backend_unavailable_exit_three(self, tmp_path, capsys):
        probe = SpacyBackend()
        try:
            probe.probe()
        except BackendUnavailable:
            pass
        else:
            pytest.skip("spaCy happens to be installed; unavailability path untestable")
        report = tmp_path / "r.txt"
        report.write_text("effusion")
        rc = cli.main(["--in", str(report), "--out", str(tmp_path / "o"),
                       "--backend", "spacy"])
        assert rc == cli.EXIT_BACKEND
        err = capsys.readouterr().err
        assert "unavailable" in err
        assert "hint:" in err

    def test_token_drift_exit_four(self, tmp_path, capsys, monkeypatch):
        class DriftingBackend:
            name = "drifty"

            def probe(self):
                return None

            def parse(self, tokens):
                return ["rogue"], [0], ["root"]

        from parse_adapter import backends
        monkeypatch.setitem(backends._REGISTRY, "drifty", DriftingBackend)
        report = tmp_path / "r.txt"
        report.write_text("no effusion. clear lungs.")
        rc = cli.main(["--in", str(report), "--out", str(tmp_path / "o"),
                       "--backend", "drifty"])
        assert rc == cli.EXIT_DRIFT
        assert "sentence 0" in capsys.readouterr().err


class TestSmokeCorpus:
    def test_fifty_report_round_trip(self, tmp_path):
        """Acceptance: the smoke corpus parses with zero validation errors
        and zero token-alignment failures through the core reader."""
        corpus = DATA / "smoke_reports.jsonl"
        out = tmp_path / "parsed"
        rc = cli.main(["--in", str(corpus), "--out", str(out)])
        assert rc == 0
        records = [json.loads(line) for line in corpus.read_text().splitlines()]
        assert len(records) == 50
        for rec in records:
            path = out / f"{rec['id']}.conllu"
            assert path.exists()
            sentences = read_conllu(str(path))  # validation happens here
            expected = tokenize(rec["text"])
            assert len(sentences) == len(expected)
            for parsed, tokens in zip(sentences, expected):
                assert list(parsed.tokens) == tokens

    def test_outputs_are_deterministic(self, tmp_path):
        corpus = DATA / "smoke_reports.jsonl"
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert cli.main(["--in", str(corpus), "--out", str(out_a)]) == 0
        assert cli.main(["--in", str(corpus), "--out", str(out_b)]) == 0
        for name in sorted(os.listdir(out_a)):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
