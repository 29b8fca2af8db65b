"""CLI: config precedence, exit codes, manifest, determinism, artifacts."""

from __future__ import annotations

import json
import socket
from pathlib import Path

import pytest

import corpus
from conftest import run_extract
from llmserver import MockLLM, Step
from vqa_miner import cli, prompting
from vqa_miner.gateway import LLMUsage, cost_per_question


def parse(argv: list[str]):
    return cli.build_parser().parse_args(argv)


def extract_args(*extra: str):
    return parse(["extract", "in.json", "--out", "o", *extra])


class TestConfigResolution:
    def test_defaults(self):
        cfg = cli.resolve_config(extract_args())
        assert cfg["window"] == 80
        assert cfg["overlap"] == 12
        assert cfg["model"] == "gemini-2.5-pro"
        assert cfg["prices"] == (0.0, 0.0)
        assert cfg["key_policy"] == "chapter+label"

    def test_env_overrides_default(self, monkeypatch):
        monkeypatch.setenv("VQAMINER_WINDOW", "30")
        monkeypatch.setenv("VQAMINER_TEMPERATURE", "0.5")
        monkeypatch.setenv("VQAMINER_PRICES", "3,4")
        cfg = cli.resolve_config(extract_args())
        assert cfg["window"] == 30
        assert cfg["temperature"] == 0.5
        assert cfg["prices"] == (3.0, 4.0)

    def test_file_overrides_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv("VQAMINER_WINDOW", "30")
        config = tmp_path / "conf.toml"
        config.write_text('window = 20\nprices = [1.0, 2.0]\n', encoding="utf-8")
        cfg = cli.resolve_config(extract_args("--config", str(config)))
        assert cfg["window"] == 20
        assert cfg["prices"] == (1.0, 2.0)

    def test_flag_overrides_file(self, tmp_path):
        config = tmp_path / "conf.toml"
        config.write_text("window = 20\n", encoding="utf-8")
        cfg = cli.resolve_config(extract_args("--config", str(config), "--window", "10"))
        assert cfg["window"] == 10

    def test_default_config_file_picked_up_from_cwd(self, monkeypatch, tmp_path):
        (tmp_path / "vqa-miner.toml").write_text('model = "local-model"\n', encoding="utf-8")
        monkeypatch.chdir(tmp_path)
        cfg = cli.resolve_config(extract_args())
        assert cfg["model"] == "local-model"

    def test_explicit_missing_config_raises(self):
        with pytest.raises(FileNotFoundError):
            cli.load_config_file("/nonexistent/conf.toml")

    def test_prices_flag_string(self):
        cfg = cli.resolve_config(extract_args("--prices", "1.25,10.0"))
        assert cfg["prices"] == (1.25, 10.0)

    def test_bad_prices_rejected(self):
        with pytest.raises(ValueError):
            cli._parse_prices("1.25")


class TestDeriveDocId:
    def test_content_list_suffix_stripped(self):
        assert cli.derive_doc_id(Path("/x/alg_content_list.json"), set()) == "alg"

    def test_bare_content_list_uses_parent(self):
        assert cli.derive_doc_id(Path("/x/bookA/content_list.json"), set()) == "bookA"

    def test_plain_stem(self):
        assert cli.derive_doc_id(Path("/x/algebra.json"), set()) == "algebra"

    def test_duplicates_suffixed(self):
        taken: set[str] = set()
        first = cli.derive_doc_id(Path("/x/a.json"), taken)
        second = cli.derive_doc_id(Path("/y/a.json"), taken)
        assert first == "a"
        assert second == "a-2"


class TestExitCodes:
    def test_missing_input(self, tmp_path):
        rc = cli.main(["extract", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_malformed_input(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}", encoding="utf-8")
        rc = cli.main(["extract", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_invalid_chunk_params(self, corpus_paths, tmp_path):
        rc = run_extract(tmp_path / "o", corpus_paths, tmp_path / "cache", "--window", "4", "--overlap", "3")
        assert rc == 2

    def test_replay_miss(self, corpus_paths, tmp_path):
        rc = run_extract(tmp_path / "o", corpus_paths, tmp_path / "empty_cache")
        assert rc == 4
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["config"]["replay"] is True

    def test_gateway_5xx_failures(self, corpus_paths, tmp_path):
        with MockLLM(default=Step(status=503)) as server:
            rc = cli.main([
                "extract", *[str(p) for p in corpus_paths.doc_paths],
                "--out", str(tmp_path / "o"), "--model", corpus.MODEL,
                "--cache-dir", str(tmp_path / "cache"), "--base-url", server.base_url,
                "--max-retries", "0",
            ])
        assert rc == 4
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text(encoding="utf-8"))
        assert all(c["status"] == "RetriesExhausted" for c in manifest["chunks"])

    def test_auth_failure_aborts(self, corpus_paths, tmp_path, monkeypatch):
        monkeypatch.setenv("VQAMINER_API_KEY", "bad-key")
        with MockLLM(default=Step(status=401)) as server:
            rc = cli.main([
                "extract", *[str(p) for p in corpus_paths.doc_paths],
                "--out", str(tmp_path / "o"), "--model", corpus.MODEL,
                "--cache-dir", str(tmp_path / "cache"), "--base-url", server.base_url,
            ])
        assert rc == 4
        assert (tmp_path / "o" / "manifest.json").is_file()

    def test_strict_parse_failure(self, corpus_paths, tmp_path):
        cache_dir = tmp_path / "cache"
        garbage = dict(corpus.RESPONSES)
        garbage["interleaved"] = "I could not find any exercises, sorry!"
        corpus.seed_extraction(cache_dir, corpus_paths, responses=garbage)
        rc = run_extract(tmp_path / "strict_out", corpus_paths, cache_dir, "--strict")
        assert rc == 3

    def test_lenient_parse_failure_degrades(self, corpus_paths, tmp_path):
        cache_dir = tmp_path / "cache"
        garbage = dict(corpus.RESPONSES)
        garbage["interleaved"] = "I could not find any exercises, sorry!"
        corpus.seed_extraction(cache_dir, corpus_paths, responses=garbage)
        out = tmp_path / "lenient_out"
        rc = run_extract(out, corpus_paths, cache_dir)
        assert rc == 0
        pairs = [json.loads(l) for l in (out / "pairs.jsonl").read_text(encoding="utf-8").splitlines()]
        assert len(pairs) == 6, "other documents still produce their pairs"
        diags = [json.loads(l) for l in (out / "diagnostics.jsonl").read_text(encoding="utf-8").splitlines()]
        assert any(d["kind"] == "unparseable-response" for d in diags)

    def test_evaluate_missing_gold(self, golden_run, tmp_path):
        rc = cli.main(["evaluate", str(golden_run / "pairs.jsonl"), str(tmp_path / "nope.json")])
        assert rc == 2

    def test_curate_missing_solver_entries(self, tmp_path):
        from vqa_miner.reconstruct import export_jsonl

        pred = tmp_path / "pairs.jsonl"
        export_jsonl(corpus.curation_pairs(), pred)
        corpus.seed_curation(tmp_path / "cache")
        solver = tmp_path / "solver.json"
        solver.write_text("{}", encoding="utf-8")
        rc = cli.main([
            "curate", str(pred), "--out", str(tmp_path / "c"),
            "--model", corpus.MODEL, "--cache-dir", str(tmp_path / "cache"),
            "--replay", "--solver-file", str(solver),
        ])
        assert rc == 2

    def test_curate_replay_miss_is_gateway_error(self, golden_run, tmp_path):
        rc = cli.main([
            "curate", str(golden_run / "pairs.jsonl"), "--out", str(tmp_path / "c"),
            "--model", corpus.MODEL, "--cache-dir", str(tmp_path / "empty"),
            "--replay", "--skip-difficulty",
        ])
        assert rc == 4

    def test_serve_port_conflict(self, golden_run, tmp_path):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        port = blocker.getsockname()[1]
        try:
            rc = cli.main([
                "serve", str(golden_run / "pairs.jsonl"),
                "--port", str(port), "--journal", str(tmp_path / "j.journal"),
            ])
        finally:
            blocker.close()
        assert rc == 2


class TestManifest:
    def test_contents(self, golden_run):
        manifest = json.loads((golden_run / "manifest.json").read_text(encoding="utf-8"))
        assert len(manifest["run_id"]) == 32
        assert manifest["command"] == "extract"
        assert manifest["config"]["prompt_role"] == "user"
        assert manifest["config"]["model"] == corpus.MODEL
        expected_hash = prompting.template_sha256(prompting.load_template())
        assert manifest["config"]["template_sha256"] == expected_hash

        chunks = manifest["chunks"]
        assert len(chunks) == 4
        assert all(c["status"] == "ok" for c in chunks)
        assert all(c["cached"] is True and c["attempt"] == 0 for c in chunks)
        assert {c["doc_id"] for c in chunks} == set(corpus.DOC_BLOCKS)

        totals = manifest["totals"]
        assert totals["prompt_tokens"] == 4000
        assert totals["completion_tokens"] == 800
        assert totals["n_pairs"] == 9
        usages = [LLMUsage(1000, 200, 0.0, 0)] * 4
        assert totals["cost_per_question"] == pytest.approx(
            cost_per_question(usages, 1.25, 10.0, 9), abs=1e-12
        )

    def test_deterministic_outputs(self, corpus_paths, golden_cache, tmp_path):
        out1, out2 = tmp_path / "run1", tmp_path / "run2"
        assert run_extract(out1, corpus_paths, golden_cache) == 0
        assert run_extract(out2, corpus_paths, golden_cache) == 0

        assert (out1 / "pairs.jsonl").read_bytes() == (out2 / "pairs.jsonl").read_bytes()
        assert (out1 / "diagnostics.jsonl").read_bytes() == (out2 / "diagnostics.jsonl").read_bytes()

        volatile = {"run_id", "started_at", "finished_at"}
        m1 = json.loads((out1 / "manifest.json").read_text(encoding="utf-8"))
        m2 = json.loads((out2 / "manifest.json").read_text(encoding="utf-8"))
        for m in (m1, m2):
            for key in volatile:
                m.pop(key)
        assert m1 == m2

        md1 = sorted(p.relative_to(out1) for p in (out1 / "markdown").rglob("*") if p.is_file())
        md2 = sorted(p.relative_to(out2) for p in (out2 / "markdown").rglob("*") if p.is_file())
        assert md1 == md2
        for rel in md1:
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()


class TestArtifacts:
    def test_markdown_bundle(self, golden_run):
        md_dir = golden_run / "markdown"
        assert {p.name for p in md_dir.glob("*.md")} == {
            "interleaved.md", "algebra.md", "algebra_answers.md", "cjk_exercise.md",
        }
        interleaved = (md_dir / "interleaved.md").read_text(encoding="utf-8")
        assert "### Chapter 12 Exercises — Example 2" in interleaved
        assert "![](assets/interleaved/images/p7_1.png)" in interleaved
        assert (md_dir / "assets" / "interleaved" / "images" / "p7_1.png").is_file()

        algebra = (md_dir / "algebra.md").read_text(encoding="utf-8")
        assert "### Chapter 3 Groups — 1" in algebra
        assert "the order is 3" in algebra, "merged solution text comes from the answer book"

        cjk = (md_dir / "cjk_exercise.md").read_text(encoding="utf-8")
        assert "### 第五章 习题 — 习题 6" in cjk
        assert "![](assets/cjk_exercise/images/fig_5.png)" in cjk
        assert (md_dir / "assets" / "cjk_exercise" / "images" / "fig_5.png").is_file()

    def test_evaluate_subcommand(self, golden_run, corpus_paths, tmp_path, capsys):
        report_out = tmp_path / "report.json"
        rc = cli.main([
            "evaluate", str(golden_run / "pairs.jsonl"), str(corpus_paths.gold_path),
            "--report-out", str(report_out),
        ])
        assert rc == 0
        table = capsys.readouterr().out
        assert "All" in table
        assert "1.0000" in table
        assert "n/a" in table, "doc without images reports n/a vision precision"
        report = json.loads(report_out.read_text(encoding="utf-8"))
        assert report["text"]["f1"] == 1.0
        assert report["vision"]["f1"] == 1.0
        assert report["per_document"]["algebra"]["text"]["samples"] == 3

    def test_curate_subcommand(self, tmp_path):
        from vqa_miner.reconstruct import export_jsonl

        pred = tmp_path / "pairs.jsonl"
        export_jsonl(corpus.curation_pairs(), pred)
        corpus.seed_curation(tmp_path / "cache")
        solver = tmp_path / "solver.json"
        solver.write_text(json.dumps(corpus.SOLVER_RESULTS), encoding="utf-8")
        rc = cli.main([
            "curate", str(pred), "--out", str(tmp_path / "curated"),
            "--model", corpus.MODEL, "--cache-dir", str(tmp_path / "cache"),
            "--replay", "--solver-file", str(solver),
        ])
        assert rc == 0
        rows = (tmp_path / "curated" / "curation.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(rows) == 12
        kept = [json.loads(r) for r in rows if json.loads(r)["verdict"] == "keep"]
        assert len(kept) == 5
