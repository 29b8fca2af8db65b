"""HTTP backend for the manual review workflow.

Serves extracted pairs for side-by-side inspection, accepts per-pair
judgments (text pairing correct? each image placed correctly?), and exposes
a live report computed with the same metric definitions as the offline
evaluator. Judgments append to a journal file and are replayed on boot, so
a review session survives restarts. On shutdown the accumulated judgments
are written out as a gold-annotation file: accepted pairs become gold
entries matching the prediction, rejected ones become deliberately
mismatching entries, which makes the offline evaluator reproduce the live
report exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import mimetypes
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlparse

from . import evaluate
from .reconstruct import QAPair, load_jsonl, pair_record

logger = logging.getLogger(__name__)

DEFAULT_PORT = 7341
_REJECTED_ID = ("__rejected__", -1)


class StaleVersion(Exception):
    def __init__(self, current: int):
        super().__init__(f"stale version, current is {current}")
        self.current = current


class UnknownPair(KeyError):
    pass


class BadJudgment(ValueError):
    pass


def pair_key_digest(pair: QAPair) -> str:
    doc = pair.provenance[0].doc_id if pair.provenance else ""
    material = "\x00".join(
        [pair.chapter_title, pair.label, doc, json.dumps([[s.kind, s.value] for s in pair.question])]
    )
    return hashlib.sha1(material.encode("utf-8")).hexdigest()[:12]


def pair_images(pair: QAPair) -> list[dict]:
    """Each image occurrence with its stable judgment id ``slot:ref``."""
    out = []
    for slot, segments in (("question", pair.question), ("solution", pair.solution)):
        for seg in segments:
            if seg.kind == "image":
                out.append({"id": f"{slot}:{seg.value}", "slot": slot, "ref": seg.value})
    return out


class ReviewStore:
    """Pairs plus judgments, guarded by one lock, persisted to a journal."""

    def __init__(self, pairs: list[QAPair], journal_path: str | Path | None = None):
        self.pairs = pairs
        self.keys = [pair_key_digest(p) for p in pairs]
        self.by_key = {}
        for key, pair in zip(self.keys, pairs):
            if key in self.by_key:
                raise ValueError(f"duplicate pair key {key}; input pairs must be distinct")
            self.by_key[key] = pair
        self.judgments: dict[str, dict] = {}
        self.journal_path = Path(journal_path) if journal_path else None
        self._lock = threading.Lock()
        if self.journal_path and self.journal_path.exists():
            self._replay_journal()

    def _replay_journal(self) -> None:
        with self.journal_path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                    key = entry["key"]
                    judgment = entry["judgment"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    logger.warning("journal line %d unreadable, skipping", line_no)
                    continue
                if key in self.by_key:
                    self.judgments[key] = judgment
                else:
                    logger.warning("journal line %d references unknown pair %s", line_no, key)

    def _validate(self, key: str, body: dict) -> dict:
        pair = self.by_key[key]
        if not isinstance(body, dict):
            raise BadJudgment("judgment body must be a JSON object")
        text_ok = body.get("text_ok")
        if not isinstance(text_ok, bool):
            raise BadJudgment("text_ok must be true or false")
        allowed = {img["id"] for img in pair_images(pair)}
        vision_raw = body.get("vision_ok", {})
        if not isinstance(vision_raw, dict):
            raise BadJudgment("vision_ok must be an object keyed by image id")
        vision_ok = {}
        for ref, ok in vision_raw.items():
            if ref not in allowed:
                raise BadJudgment(f"unknown image id {ref!r} for this pair")
            if not isinstance(ok, bool):
                raise BadJudgment("vision_ok values must be booleans")
            vision_ok[ref] = ok
        missing = allowed - set(vision_ok)
        if missing:
            raise BadJudgment(f"vision_ok missing image ids: {sorted(missing)}")
        note = body.get("note", "")
        if not isinstance(note, str):
            raise BadJudgment("note must be a string")
        return {"text_ok": text_ok, "vision_ok": vision_ok, "note": note}

    def submit(self, key: str, body: dict) -> int:
        """Upsert with optimistic concurrency; returns the stored version."""
        if key not in self.by_key:
            raise UnknownPair(key)
        judgment = self._validate(key, body)
        claimed = body.get("version", 0)
        if not isinstance(claimed, int):
            raise BadJudgment("version must be an integer")
        with self._lock:
            current = self.judgments.get(key, {}).get("version", 0)
            if claimed != current:
                raise StaleVersion(current)
            judgment["version"] = current + 1
            if self.journal_path:
                with self.journal_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "judgment": judgment}, ensure_ascii=False) + "\n")
                    fh.flush()
            self.judgments[key] = judgment
        return judgment["version"]

    def judgment_of(self, key: str) -> dict | None:
        with self._lock:
            j = self.judgments.get(key)
            return dict(j) if j else None

    def report(self) -> dict:
        with self._lock:
            snapshot = [dict(j) for j in self.judgments.values()]
        text_counts, vision_counts = evaluate.counts_from_judgments(snapshot)
        text_m = evaluate.metrics(text_counts.tp, text_counts.fp, text_counts.fn)
        vision_m = evaluate.metrics(vision_counts.tp, vision_counts.fp, vision_counts.fn)
        total_images = sum(len(pair_images(p)) for p in self.pairs)
        judged_images = sum(len(j.get("vision_ok", {})) for j in snapshot)
        return {
            "text": {
                "tp": text_counts.tp, "fp": text_counts.fp, "fn": text_counts.fn,
                "precision": text_m.precision, "recall": text_m.recall, "f1": text_m.f1,
                "judged": len(snapshot), "total": len(self.pairs),
            },
            "vision": {
                "tp": vision_counts.tp, "fp": vision_counts.fp, "fn": vision_counts.fn,
                "precision": vision_m.precision, "recall": vision_m.recall, "f1": vision_m.f1,
                "judged": judged_images, "total": total_images,
            },
        }

    def summary(self, key: str) -> dict:
        pair = self.by_key[key]
        return {
            "key": key,
            "chapter": pair.chapter_title,
            "label": pair.label,
            "doc": pair.provenance[0].doc_id if pair.provenance else "",
            "modality": pair.modality,
            "partial": pair.partial,
            "n_images": len(pair_images(pair)),
            "judged": key in self.judgments,
        }

    def detail(self, key: str) -> dict:
        pair = self.by_key[key]
        doc = pair.provenance[0].doc_id if pair.provenance else ""
        record = pair_record(pair)
        images = pair_images(pair)
        for img in images:
            img["url"] = f"/assets/{doc}/{img['ref']}"
        record.update({"key": key, "doc": doc, "images": images, "judgment": self.judgment_of(key)})
        return record

    def write_gold(self, path: str | Path) -> None:
        """Judgments as a gold file the offline evaluator scores identically.

        Accepted text: gold ids copied from the prediction, an exact match.
        Rejected text: a sentinel id no prediction can carry, forcing FP+FN.
        Accepted image: placement as predicted. Rejected image: the same ref
        parked in the never-predicted "answer" slot, forcing FP+FN.
        """
        with self._lock:
            judged = [(k, dict(j)) for k, j in self.judgments.items()]
        gold_pairs = []
        gold_images = []
        docs = {}
        for key, judgment in judged:
            pair = self.by_key[key]
            doc = pair.provenance[0].doc_id if pair.provenance else ""
            docs.setdefault(doc, {"type": "", "layout": ""})
            if judgment["text_ok"]:
                q_ids = [[s.doc_id, i] for s in pair.provenance for i in s.question_ids]
                s_ids = [[s.doc_id, i] for s in pair.provenance for i in s.solution_ids]
            else:
                q_ids = [list(_REJECTED_ID)]
                s_ids = [list(_REJECTED_ID)]
            gold_pairs.append({
                "chapter": pair.chapter_title,
                "label": pair.label,
                "doc": doc,
                "question_block_ids": q_ids,
                "solution_block_ids": s_ids,
                "answer": pair.answer_short,
            })
            for img in pair_images(pair):
                ok = judgment["vision_ok"].get(img["id"])
                if ok is None:
                    continue
                gold_images.append({
                    "image_ref": img["ref"],
                    "owner": {"chapter": pair.chapter_title, "label": pair.label},
                    "slot": img["slot"] if ok else "answer",
                    "doc": doc,
                })
        payload = {
            "doc_ids": sorted(docs),
            "docs": docs,
            "gold_pairs": gold_pairs,
            "gold_image_placements": gold_images,
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    # the ThreadingHTTPServer instance carries store/ui_dir/assets_dir
    @property
    def store(self) -> ReviewStore:
        return self.server.store

    def log_message(self, fmt, *args):
        logger.debug("%s %s", self.address_string(), fmt % args)

    def _send_json(self, payload, status: int = 200) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_file(self, path: Path) -> None:
        ctype = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
        data = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _static_lookup(self, root: Path | None, rel: str) -> Path | None:
        if root is None:
            return None
        root = root.resolve()
        candidate = (root / rel).resolve()
        if not candidate.is_relative_to(root) or not candidate.is_file():
            return None
        return candidate

    def do_GET(self):  # noqa: N802 (http.server naming)
        url = urlparse(self.path)
        segments = [unquote(s) for s in url.path.split("/") if s]
        try:
            if segments == ["pairs"]:
                self._get_pairs(parse_qs(url.query))
            elif len(segments) == 2 and segments[0] == "pairs":
                key = segments[1]
                if key not in self.store.by_key:
                    self._send_json({"error": "unknown pair"}, 404)
                else:
                    self._send_json(self.store.detail(key))
            elif segments == ["report"]:
                self._send_json(self.store.report())
            elif segments and segments[0] == "assets":
                rel = "/".join(segments[1:])
                path = self._static_lookup(self.server.assets_dir, rel)
                if path is None and len(segments) >= 3:
                    # merged pairs may pull images from a companion document;
                    # fall back to the same relative ref under any doc dir
                    tail = "/".join(segments[2:])
                    root = self.server.assets_dir
                    if root is not None and root.is_dir():
                        for child in sorted(root.iterdir()):
                            if child.is_dir():
                                path = self._static_lookup(root, f"{child.name}/{tail}")
                                if path is not None:
                                    break
                if path is None:
                    self._send_json({"error": "no such asset"}, 404)
                else:
                    self._send_file(path)
            else:
                rel = "/".join(segments) or "index.html"
                path = self._static_lookup(self.server.ui_dir, rel)
                if path is None:
                    self._send_json({"error": "not found"}, 404)
                else:
                    self._send_file(path)
        except BrokenPipeError:
            pass

    def _get_pairs(self, query: dict) -> None:
        try:
            offset = int(query.get("offset", ["0"])[0])
            limit = int(query.get("limit", ["50"])[0])
        except ValueError:
            self._send_json({"error": "offset and limit must be integers"}, 400)
            return
        if offset < 0 or limit < 0:
            self._send_json({"error": "offset and limit must be non-negative"}, 400)
            return
        keys = self.store.keys[offset : offset + limit]
        self._send_json({
            "total": len(self.store.keys),
            "offset": offset,
            "limit": limit,
            "pairs": [self.store.summary(k) for k in keys],
        })

    def do_POST(self):  # noqa: N802
        url = urlparse(self.path)
        segments = [unquote(s) for s in url.path.split("/") if s]
        if len(segments) != 3 or segments[0] != "pairs" or segments[2] != "judgment":
            self._send_json({"error": "not found"}, 404)
            return
        key = segments[1]
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length).decode("utf-8")) if length else {}
        except (ValueError, UnicodeDecodeError):
            self._send_json({"error": "body must be JSON"}, 400)
            return
        try:
            version = self.store.submit(key, body)
        except UnknownPair:
            self._send_json({"error": "unknown pair"}, 404)
        except StaleVersion as exc:
            self._send_json({"error": "stale version", "current": exc.current}, 409)
        except BadJudgment as exc:
            self._send_json({"error": str(exc)}, 400)
        else:
            self._send_json({"version": version})


class ReviewServer:
    """Owns the HTTP server plus output writing; usable from tests in-process."""

    def __init__(
        self,
        store: ReviewStore,
        *,
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        ui_dir: str | Path | None = None,
        assets_dir: str | Path | None = None,
    ):
        self.store = store
        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.store = store
        self.httpd.ui_dir = Path(ui_dir) if ui_dir else None
        self.httpd.assets_dir = Path(assets_dir) if assets_dir else None
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
            self._thread = None

    def finalize(self, gold_path: str | Path, report_path: str | Path | None = None) -> None:
        self.store.write_gold(gold_path)
        if report_path is not None:
            Path(report_path).write_text(
                json.dumps(self.store.report(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
            )


def load_store(pred_path: str | Path, journal_path: str | Path | None = None) -> ReviewStore:
    return ReviewStore(load_jsonl(pred_path), journal_path=journal_path)
