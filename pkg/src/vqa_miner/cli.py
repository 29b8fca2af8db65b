"""Command-line front-end: extract, evaluate, curate, serve.

Configuration precedence is flags > TOML config file > environment
variables (``VQAMINER_<NAME>``) > built-in defaults. Every extract run
writes a manifest capturing the effective config, the prompt template hash,
and per-chunk gateway status, so a run can be audited and replayed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import signal
import sys
import time
import uuid
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from . import curate as curate_mod
from . import evaluate as evaluate_mod
from . import gateway as gateway_mod
from . import ingest, prompting, reconstruct, review, tagparse

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STRICT_PARSE = 3
EXIT_GATEWAY = 4

ENV_PREFIX = "VQAMINER_"

DEFAULTS = {
    "window": 80,
    "overlap": 12,
    "model": "gemini-2.5-pro",
    "base_url": "http://127.0.0.1:8000/v1",
    "temperature": 0.0,
    "prices": (0.0, 0.0),
    "cache_dir": ".vqa_cache",
    "subject": "mathematics",
    "max_retries": 5,
    "max_in_flight": 4,
    "timeout": 120.0,
    "key_policy": "chapter+label",
}


def _parse_prices(raw: str) -> tuple[float, float]:
    parts = raw.split(",")
    if len(parts) != 2:
        raise ValueError("prices must be given as in,out")
    return (float(parts[0]), float(parts[1]))


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if key == "prices":
        return _parse_prices(raw)
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config_file(explicit: str | None) -> dict:
    path = Path(explicit) if explicit else Path("vqa-miner.toml")
    if explicit and not path.exists():
        raise FileNotFoundError(f"config file not found: {explicit}")
    if not path.exists():
        return {}
    with path.open("rb") as fh:
        data = tomllib.load(fh)
    out = {}
    for key in DEFAULTS:
        if key in data:
            value = data[key]
            if key == "prices" and isinstance(value, (list, tuple)):
                out[key] = (float(value[0]), float(value[1]))
            elif key == "prices":
                out[key] = _parse_prices(str(value))
            else:
                out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """flags > TOML > environment > defaults, field by field."""
    file_values = load_config_file(getattr(args, "config", None))
    resolved = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = _parse_prices(flag) if key == "prices" and isinstance(flag, str) else flag
            continue
        if key in file_values:
            resolved[key] = file_values[key]
            continue
        env_raw = os.environ.get(ENV_PREFIX + key.upper())
        if env_raw is not None:
            resolved[key] = _coerce(key, env_raw)
            continue
        resolved[key] = default
    return resolved


def _llm_config(cfg: dict) -> gateway_mod.LLMConfig:
    price_in, price_out = cfg["prices"]
    return gateway_mod.LLMConfig(
        model=cfg["model"],
        base_url=cfg["base_url"],
        temperature=float(cfg["temperature"]),
        request_timeout=float(cfg["timeout"]),
        max_retries=int(cfg["max_retries"]),
        max_in_flight=int(cfg["max_in_flight"]),
        price_in=price_in,
        price_out=price_out,
    )


def derive_doc_id(path: Path, taken: set[str]) -> str:
    stem = path.stem
    if stem.endswith("_content_list"):
        stem = stem[: -len("_content_list")]
    if stem == "content_list" and path.parent.name:
        stem = path.parent.name
    doc_id = stem
    n = 2
    while doc_id in taken:
        doc_id = f"{stem}-{n}"
        n += 1
    taken.add(doc_id)
    return doc_id


def write_json_atomic(payload: dict, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def write_markdown_bundle(pairs, docs, out_dir: Path) -> None:
    """One Markdown file per document plus the image assets it references."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ref_owner: dict[str, ingest.DocumentSource] = {}
    for doc in docs:
        for block in doc.blocks:
            if block.kind == "image" and block.image_ref and block.image_ref not in ref_owner:
                ref_owner[block.image_ref] = doc

    by_doc: dict[str, list] = {doc.doc_id: [] for doc in docs}
    for pair in pairs:
        doc_id = pair.provenance[0].doc_id if pair.provenance else docs[0].doc_id
        by_doc.setdefault(doc_id, []).append(pair)

    for doc in docs:
        ref_map = {}
        for pair in by_doc.get(doc.doc_id, []):
            for seg in pair.question + pair.solution:
                if seg.kind != "image" or seg.value in ref_map:
                    continue
                owner = ref_owner.get(seg.value)
                if owner is None:
                    continue
                rel = f"assets/{owner.doc_id}/{seg.value}"
                ref_map[seg.value] = rel
                src = Path(owner.path).parent / seg.value
                dst = out_dir / rel
                if src.is_file():
                    dst.parent.mkdir(parents=True, exist_ok=True)
                    if not dst.exists():
                        shutil.copyfile(src, dst)
                else:
                    logger.warning("image asset missing on disk: %s", src)
        body = "\n".join(
            reconstruct.render_markdown(pair, ref_map=ref_map) for pair in by_doc.get(doc.doc_id, [])
        )
        (out_dir / f"{doc.doc_id}.md").write_text(body, encoding="utf-8")


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    taken: set[str] = set()
    docs = []
    for raw in args.inputs:
        path = Path(raw)
        if not path.is_file():
            print(f"error: input not found: {raw}", file=sys.stderr)
            return EXIT_USAGE
        doc_id = derive_doc_id(path, taken)
        try:
            docs.append(ingest.load_mineru_document(path, doc_id=doc_id, subject=cfg["subject"]))
        except (ingest.MalformedInput, ingest.EmptyDocument) as exc:
            print(f"error: {raw}: {exc}", file=sys.stderr)
            return EXIT_USAGE

    template = prompting.load_template()
    bundles = []
    try:
        for doc in docs:
            for chunk in ingest.chunk_document(doc, window=int(cfg["window"]), overlap=int(cfg["overlap"])):
                bundles.append((doc, chunk, prompting.build_extraction_prompt(doc, chunk, template=template)))
    except ingest.InvalidChunkParams as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    llm_cfg = _llm_config(cfg)
    gw = gateway_mod.LLMGateway(llm_cfg, cfg["cache_dir"], replay=bool(args.replay))

    manifest: dict = {
        "run_id": uuid.uuid4().hex,
        "command": "extract",
        "started_at": started,
        "config": {
            **{k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()},
            "strict": bool(args.strict),
            "replay": bool(args.replay),
            "prompt_role": "user",
            "template_sha256": prompting.template_sha256(template),
            "inputs": [str(p) for p in args.inputs],
        },
        "chunks": [],
    }

    def finish(code: int, n_pairs: int | None = None) -> int:
        manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        if n_pairs is not None:
            usages = [gateway_mod.LLMUsage(c["prompt_tokens"], c["completion_tokens"], 0.0, 0)
                      for c in manifest["chunks"] if c["status"] == "ok"]
            totals = {
                "prompt_tokens": sum(u.prompt_tokens for u in usages),
                "completion_tokens": sum(u.completion_tokens for u in usages),
                "n_pairs": n_pairs,
            }
            price_in, price_out = cfg["prices"]
            if n_pairs > 0:
                totals["cost_per_question"] = gateway_mod.cost_per_question(
                    usages, price_in, price_out, n_pairs
                )
            manifest["totals"] = totals
        write_json_atomic(manifest, out_dir / "manifest.json")
        return code

    try:
        results = gw.complete_many([bundle.message for (_, _, bundle) in bundles])
    except (gateway_mod.AuthError, gateway_mod.ReplayCacheMiss) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return finish(EXIT_GATEWAY)

    diagnostics: list[dict] = []
    all_pairs = []
    for (doc, chunk, bundle), res in zip(bundles, results):
        entry = {
            "doc_id": chunk.doc_id,
            "chunk_index": chunk.chunk_index,
            "status": "ok" if res.ok else (res.error_kind or "error"),
            "prompt_tokens": res.usage.prompt_tokens if res.usage else 0,
            "completion_tokens": res.usage.completion_tokens if res.usage else 0,
            "attempt": res.usage.attempt if res.usage else None,
            "cached": res.usage.cached if res.usage else False,
            "latency_ms": round(res.usage.latency_ms, 3) if res.usage else None,
        }
        if not res.ok:
            entry["error"] = res.error_message
        manifest["chunks"].append(entry)
        if not res.ok:
            continue
        chunk_ref = [chunk.doc_id, chunk.chunk_index]
        try:
            resp = tagparse.parse_response(res.text, strict=bool(args.strict))
            validated = tagparse.validate_ids(resp, chunk, strict=bool(args.strict))
        except tagparse.ParseError as exc:
            if args.strict:
                print(f"error: {chunk.doc_id} chunk {chunk.chunk_index}: {exc}", file=sys.stderr)
                return finish(EXIT_STRICT_PARSE)
            diagnostics.append({
                "kind": "unparseable-response", "chunk_ref": chunk_ref,
                "offset": exc.offset, "detail": str(exc),
            })
            continue
        except tagparse.ValidationError as exc:
            print(f"error: {chunk.doc_id} chunk {chunk.chunk_index}: {exc}", file=sys.stderr)
            return finish(EXIT_STRICT_PARSE)
        for diag in list(resp.diagnostics) + list(validated.diagnostics):
            diagnostics.append({
                "kind": diag.kind, "chunk_ref": chunk_ref,
                "offset": diag.offset, "snippet": diag.snippet,
            })
        all_pairs.extend(reconstruct.substitute(validated, doc))

    merge_diags: list[reconstruct.MergeDiagnostic] = []
    pairs = reconstruct.dedupe_overlaps(all_pairs)
    pairs = reconstruct.merge_cross_source(pairs, key_policy=cfg["key_policy"], diagnostics=merge_diags)
    pairs = reconstruct.dedupe_overlaps(pairs)
    pairs = reconstruct.disambiguate_collisions(pairs)
    for diag in merge_diags:
        diagnostics.append({
            "kind": "ambiguous-merge", "key": list(diag.key),
            "chosen": diag.chosen, "candidates": list(diag.candidates),
        })

    n = reconstruct.export_jsonl(pairs, out_dir / "pairs.jsonl")
    write_markdown_bundle(pairs, docs, out_dir / "markdown")
    with (out_dir / "diagnostics.jsonl").open("w", encoding="utf-8") as fh:
        for diag in diagnostics:
            fh.write(json.dumps(diag, ensure_ascii=False) + "\n")

    failed = sum(1 for r in results if not r.ok)
    code = finish(EXIT_GATEWAY if failed else EXIT_OK, n_pairs=n)
    print(f"extracted {n} pairs from {len(docs)} document(s) across {len(bundles)} chunk(s)")
    if failed:
        print(f"error: {failed} chunk(s) failed at the gateway", file=sys.stderr)
    return code


def cmd_evaluate(args: argparse.Namespace) -> int:
    pred_path = Path(args.pred)
    if not pred_path.is_file():
        print(f"error: predictions not found: {args.pred}", file=sys.stderr)
        return EXIT_USAGE
    try:
        pred = reconstruct.load_jsonl(pred_path)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        gold = evaluate_mod.load_gold(args.gold)
    except (OSError, evaluate_mod.GoldLoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    report = evaluate_mod.evaluate(pred, gold)
    print(evaluate_mod.render_table(report, gold))
    report_out = Path(args.report_out) if args.report_out else pred_path.parent / "report.json"
    write_json_atomic(evaluate_mod.report_json(report, gold), report_out)
    return EXIT_OK


def cmd_curate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    pred_path = Path(args.pred)
    if not pred_path.is_file():
        print(f"error: predictions not found: {args.pred}", file=sys.stderr)
        return EXIT_USAGE
    try:
        pairs = reconstruct.load_jsonl(pred_path)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    solver_results = None
    if args.solver_file:
        try:
            solver_results = json.loads(Path(args.solver_file).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read solver file: {exc}", file=sys.stderr)
            return EXIT_USAGE

    patterns = curate_mod.CurationConfig().incomplete_patterns
    if args.incomplete_pattern:
        patterns = patterns + tuple(args.incomplete_pattern)
    config = curate_mod.CurationConfig(
        short_answer_max_tokens=args.short_answer_max_tokens,
        incomplete_patterns=patterns,
    )
    gw = gateway_mod.LLMGateway(_llm_config(cfg), cfg["cache_dir"], replay=bool(args.replay))
    try:
        records = curate_mod.curate_pairs(
            pairs, gw, config,
            solver_results=solver_results,
            skip_difficulty=bool(args.skip_difficulty),
        )
    except curate_mod.MissingSolverData as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except gateway_mod.GatewayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY

    out_dir = Path(args.out) if args.out else pred_path.parent / "curated"
    counts = curate_mod.write_outputs(pairs, records, out_dir)
    print(
        f"kept {counts['kept']}/{counts['total']} pairs "
        f"({counts['text_only']} text-only, {counts['text_image']} text-image) -> {out_dir}"
    )
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    pred_path = Path(args.pred)
    if not pred_path.is_file():
        print(f"error: predictions not found: {args.pred}", file=sys.stderr)
        return EXIT_USAGE
    journal = Path(args.journal) if args.journal else pred_path.parent / "judgments.journal"
    try:
        store = review.load_store(pred_path, journal_path=journal)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    ui_dir = args.ui_dir
    if ui_dir is None and Path("frontend/dist/index.html").is_file():
        ui_dir = "frontend/dist"
    try:
        server = review.ReviewServer(
            store, port=args.port, ui_dir=ui_dir, assets_dir=args.assets_dir,
        )
    except OSError as exc:
        print(f"error: cannot bind port {args.port}: {exc}", file=sys.stderr)
        return EXIT_USAGE

    gold_out = Path(args.gold_out) if args.gold_out else pred_path.parent / "review_gold.json"
    report_out = Path(args.report_out) if args.report_out else pred_path.parent / "review_report.json"
    print(f"review server on http://127.0.0.1:{server.port}/ ({len(store.pairs)} pairs)", flush=True)
    try:
        # SIGTERM (and SIGINT when a backgrounding shell left it ignored) must
        # still reach the finalize step below, so route both through the
        # KeyboardInterrupt path. Only possible from the main thread.
        def _graceful(signum: int, frame: object) -> None:
            raise KeyboardInterrupt
        signal.signal(signal.SIGTERM, _graceful)
        signal.signal(signal.SIGINT, _graceful)
    except ValueError:
        pass
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()
        server.finalize(gold_out, report_out)
        print(f"wrote {gold_out} and {report_out}")
    return EXIT_OK


def _add_gateway_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="model name sent to the endpoint")
    p.add_argument("--base-url", dest="base_url", help="OpenAI-compatible endpoint base URL")
    p.add_argument("--temperature", type=float)
    p.add_argument("--prices", help="input,output prices per 1M tokens, e.g. 1.25,10.0")
    p.add_argument("--cache-dir", dest="cache_dir", help="response cache directory")
    p.add_argument("--replay", action="store_true", help="answer only from cache; any miss is an error")
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.add_argument("--timeout", type=float, help="per-request timeout in seconds")
    p.add_argument("--config", help="TOML config file (default: ./vqa-miner.toml if present)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqa-miner", description="Extract aligned QA/VQA pairs from layout-parsed documents.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run the extraction pipeline over content-list JSON files")
    p.add_argument("inputs", nargs="+", help="MinerU content_list.json files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subject", help="subject filled into the prompt")
    p.add_argument("--window", type=int, help="chunk window size in blocks")
    p.add_argument("--overlap", type=int, help="chunk overlap in blocks")
    p.add_argument("--key-policy", dest="key_policy", choices=["chapter+label", "label"],
                   help="merge key: chapter+label (default) or label only")
    p.add_argument("--strict", action="store_true", help="fail on any malformed model output")
    _add_gateway_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="score predictions against a gold annotation file")
    p.add_argument("pred", help="pairs.jsonl from extract")
    p.add_argument("gold", help="gold annotation JSON")
    p.add_argument("--report-out", dest="report_out", help="where to write report.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("curate", help="filter pairs into a verifiable benchmark")
    p.add_argument("pred", help="pairs.jsonl from extract")
    p.add_argument("--out", help="output directory (default: <pred dir>/curated)")
    p.add_argument("--solver-file", dest="solver_file", help="JSON of per-pair solver outcomes")
    p.add_argument("--skip-difficulty", dest="skip_difficulty", action="store_true")
    p.add_argument("--short-answer-max-tokens", dest="short_answer_max_tokens", type=int, default=16)
    p.add_argument("--incomplete-pattern", dest="incomplete_pattern", action="append",
                   help="extra heuristic incompleteness pattern (repeatable)")
    _add_gateway_flags(p)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("serve", help="serve the review API and UI")
    p.add_argument("pred", help="pairs.jsonl from extract")
    p.add_argument("--port", type=int, default=review.DEFAULT_PORT)
    p.add_argument("--journal", help="judgment journal path")
    p.add_argument("--gold-out", dest="gold_out", help="gold file written on shutdown")
    p.add_argument("--report-out", dest="report_out", help="report written on shutdown")
    p.add_argument("--ui-dir", dest="ui_dir", help="static UI directory (default: frontend/dist)")
    p.add_argument("--assets-dir", dest="assets_dir", help="image asset root, e.g. <out>/markdown/assets")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except gateway_mod.RetriesExhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY


if __name__ == "__main__":
    sys.exit(main())
