"""Shared fixtures: corpus on disk, seeded caches, golden pipeline runs."""

from __future__ import annotations

import os
from pathlib import Path

import pytest

import corpus
from vqa_miner import cli

# config must come from flags alone during tests
for _k in [k for k in os.environ if k.startswith("VQAMINER_")]:
    del os.environ[_k]


@pytest.fixture(scope="session")
def corpus_paths(tmp_path_factory) -> corpus.CorpusPaths:
    return corpus.build_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def golden_cache(corpus_paths, tmp_path_factory) -> Path:
    cache_dir = tmp_path_factory.mktemp("cache_clean")
    corpus.seed_extraction(cache_dir, corpus_paths)
    return cache_dir


@pytest.fixture(scope="session")
def perturbed_cache(corpus_paths, tmp_path_factory) -> Path:
    cache_dir = tmp_path_factory.mktemp("cache_perturbed")
    corpus.seed_extraction(cache_dir, corpus_paths, responses=corpus.perturbed_responses())
    return cache_dir


def run_extract(out: Path, paths: corpus.CorpusPaths, cache_dir: Path, *extra: str) -> int:
    argv = [
        "extract",
        *[str(p) for p in paths.doc_paths],
        "--out", str(out),
        "--model", corpus.MODEL,
        "--cache-dir", str(cache_dir),
        "--replay",
        "--base-url", "http://127.0.0.1:9/v1",
        "--prices", "1.25,10.0",
        "--window", str(corpus.WINDOW),
        "--overlap", str(corpus.OVERLAP),
        "--subject", corpus.SUBJECT,
        *extra,
    ]
    return cli.main(argv)


@pytest.fixture(scope="session")
def golden_run(corpus_paths, golden_cache, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("golden_out")
    rc = run_extract(out, corpus_paths, golden_cache)
    assert rc == 0, "golden extract must succeed"
    return out


@pytest.fixture(scope="session")
def perturbed_run(corpus_paths, perturbed_cache, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("perturbed_out")
    rc = run_extract(out, corpus_paths, perturbed_cache)
    assert rc == 0, "perturbed extract must still parse cleanly"
    return out
