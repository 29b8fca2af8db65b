"""Two-modality extraction metrics against human gold annotations.

Text matching is structural: a predicted pair counts as correct only when
its (chapter, label) key and its question/solution block-id sets all equal
the gold annotation. Vision matching scores each image placement as the
triple (image_ref, owning pair key, slot). Both deliberately ignore
character-level OCR noise; the target is grouping and pairing errors.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .reconstruct import QAPair

SLOTS = ("question", "answer", "solution")


class GoldLoadError(ValueError):
    """Gold annotation file violates its schema."""


def _norm(s: str) -> str:
    return " ".join(s.split()).casefold()


@dataclass(frozen=True)
class GoldPair:
    chapter: str
    label: str
    question_block_ids: frozenset
    solution_block_ids: frozenset
    answer: str = ""
    doc: str = ""

    @property
    def key(self) -> tuple[str, str]:
        return (_norm(self.chapter), _norm(self.label))


@dataclass(frozen=True)
class GoldImage:
    image_ref: str
    owner: tuple[str, str]
    slot: str
    doc: str = ""

    @property
    def key(self):
        return (self.image_ref, (_norm(self.owner[0]), _norm(self.owner[1])), self.slot)


@dataclass(frozen=True)
class GoldAnnotation:
    doc_ids: tuple[str, ...]
    docs: dict
    pairs: tuple[GoldPair, ...]
    images: tuple[GoldImage, ...]
    qualified: bool  # ids given as (doc_id, block_id) instead of bare ints


@dataclass(frozen=True)
class Counts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class Metrics:
    precision: float | None  # None marks an undefined ratio (empty denominator)
    recall: float | None
    f1: float


@dataclass(frozen=True)
class EvalReport:
    text: Counts
    vision: Counts
    text_metrics: Metrics
    vision_metrics: Metrics
    per_document: dict


def metrics(tp: int, fp: int, fn: int) -> Metrics:
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return Metrics(precision, recall, f1_from_pr(precision, recall))


def f1_from_pr(precision: float | None, recall: float | None) -> float:
    """Harmonic mean; 0 when either ratio is undefined or both are 0."""
    if precision is None or recall is None or precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _parse_ids(raw, qualified_seen: list[bool]) -> frozenset:
    ids = set()
    for entry in raw:
        if isinstance(entry, list):
            if len(entry) != 2:
                raise GoldLoadError(f"qualified id must be [doc_id, block_id], got {entry!r}")
            ids.add((str(entry[0]), int(entry[1])))
            qualified_seen[0] = True
        else:
            ids.add(int(entry))
    return frozenset(ids)


def load_gold(path: str | Path) -> GoldAnnotation:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GoldLoadError(f"cannot read gold file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise GoldLoadError("gold file must be a JSON object")

    qualified_seen = [False]
    bare_seen = False
    pairs = []
    for i, rec in enumerate(data.get("gold_pairs", [])):
        try:
            q_ids = _parse_ids(rec.get("question_block_ids", []), qualified_seen)
            s_ids = _parse_ids(rec.get("solution_block_ids", []), qualified_seen)
            if any(isinstance(x, int) for x in q_ids | s_ids):
                bare_seen = True
            pairs.append(
                GoldPair(
                    chapter=str(rec.get("chapter", "")),
                    label=str(rec["label"]),
                    question_block_ids=q_ids,
                    solution_block_ids=s_ids,
                    answer=str(rec.get("answer", "")),
                    doc=str(rec.get("doc", "")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GoldLoadError(f"gold_pairs[{i}]: {exc}") from exc
    if qualified_seen[0] and bare_seen:
        raise GoldLoadError("gold file mixes bare and [doc, id] qualified block ids")

    keys = [p.key for p in pairs]
    dupes = [k for k, n in Counter(keys).items() if n > 1]
    if dupes:
        raise GoldLoadError(f"duplicate (chapter, label) keys in gold_pairs: {dupes}")
    key_set = set(keys)

    images = []
    for i, rec in enumerate(data.get("gold_image_placements", [])):
        try:
            owner = rec["owner"]
            if isinstance(owner, dict):
                owner_key = (str(owner.get("chapter", "")), str(owner["label"]))
            else:
                owner_key = (str(owner[0]), str(owner[1]))
            slot = str(rec["slot"])
            if slot not in SLOTS:
                raise GoldLoadError(f"slot must be one of {SLOTS}, got {slot!r}")
            image = GoldImage(image_ref=str(rec["image_ref"]), owner=owner_key, slot=slot, doc=str(rec.get("doc", "")))
        except (KeyError, TypeError, IndexError) as exc:
            raise GoldLoadError(f"gold_image_placements[{i}]: {exc}") from exc
        if (_norm(owner_key[0]), _norm(owner_key[1])) not in key_set:
            raise GoldLoadError(f"gold_image_placements[{i}] references unknown pair {owner_key}")
        images.append(image)

    docs = data.get("docs", {})
    if not isinstance(docs, dict):
        raise GoldLoadError("docs must be an object keyed by doc id")
    doc_ids = tuple(str(d) for d in data.get("doc_ids", list(docs)))
    return GoldAnnotation(
        doc_ids=doc_ids,
        docs=docs,
        pairs=tuple(pairs),
        images=tuple(images),
        qualified=qualified_seen[0],
    )


def pred_id_sets(pair: QAPair, qualified: bool) -> tuple[frozenset, frozenset]:
    """Question and solution block-id sets drawn from provenance."""
    q: set = set()
    s: set = set()
    for span in pair.provenance:
        if qualified:
            q.update((span.doc_id, i) for i in span.question_ids)
            s.update((span.doc_id, i) for i in span.solution_ids)
        else:
            q.update(span.question_ids)
            s.update(span.solution_ids)
    return frozenset(q), frozenset(s)


def match_text(pred: list[QAPair], gold_pairs: tuple[GoldPair, ...], qualified: bool) -> Counts:
    """Exact structural matching; each gold pair absorbs at most one prediction."""
    by_key = {p.key: p for p in gold_pairs}
    matched: set[tuple[str, str]] = set()
    tp = fp = 0
    for pair in pred:
        key = (_norm(pair.chapter_title), _norm(pair.label))
        candidate = by_key.get(key)
        q_ids, s_ids = pred_id_sets(pair, qualified)
        if (
            candidate is not None
            and key not in matched
            and q_ids == candidate.question_block_ids
            and s_ids == candidate.solution_block_ids
        ):
            matched.add(key)
            tp += 1
        else:
            fp += 1
    fn = len(gold_pairs) - tp
    return Counts(tp, fp, fn)


def pred_image_placements(pred: list[QAPair]) -> list[tuple]:
    """Every image in every pair as an (image_ref, owner key, slot) triple."""
    out = []
    for pair in pred:
        key = (_norm(pair.chapter_title), _norm(pair.label))
        for seg in pair.question:
            if seg.kind == "image":
                out.append((seg.value, key, "question"))
        for seg in pair.solution:
            if seg.kind == "image":
                out.append((seg.value, key, "solution"))
    return out


def match_vision(pred: list[QAPair], gold_images: tuple[GoldImage, ...]) -> Counts:
    """Per-image multiset matching on placement triples."""
    pred_counter = Counter(pred_image_placements(pred))
    gold_counter = Counter(img.key for img in gold_images)
    tp = sum(min(n, gold_counter[key]) for key, n in pred_counter.items())
    fp = sum(pred_counter.values()) - tp
    fn = sum(gold_counter.values()) - tp
    return Counts(tp, fp, fn)


def _attribution(pair: QAPair) -> str:
    return pair.provenance[0].doc_id if pair.provenance else ""


def evaluate(pred: list[QAPair], gold: GoldAnnotation) -> EvalReport:
    text = match_text(pred, gold.pairs, gold.qualified)
    vision = match_vision(pred, gold.images)

    per_document = {}
    for doc_id in gold.doc_ids:
        doc_pred = [p for p in pred if _attribution(p) == doc_id]
        doc_gold_pairs = tuple(g for g in gold.pairs if g.doc == doc_id)
        doc_gold_images = tuple(g for g in gold.images if g.doc == doc_id)
        doc_text = match_text(doc_pred, doc_gold_pairs, gold.qualified)
        doc_vision = match_vision(doc_pred, doc_gold_images)
        meta = gold.docs.get(doc_id, {})
        per_document[doc_id] = {
            "type": str(meta.get("type", "")),
            "layout": str(meta.get("layout", "")),
            "text": {"samples": len(doc_gold_pairs), "counts": doc_text, "metrics": metrics(*_astuple(doc_text))},
            "vision": {"samples": len(doc_gold_images), "counts": doc_vision, "metrics": metrics(*_astuple(doc_vision))},
        }

    return EvalReport(
        text=text,
        vision=vision,
        text_metrics=metrics(text.tp, text.fp, text.fn),
        vision_metrics=metrics(vision.tp, vision.fp, vision.fn),
        per_document=per_document,
    )


def _astuple(c: Counts) -> tuple[int, int, int]:
    return (c.tp, c.fp, c.fn)


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def report_rows(report: EvalReport, gold: GoldAnnotation) -> list[list[str]]:
    rows = []
    for doc_id, entry in report.per_document.items():
        for modality, section in (("Text", entry["text"]), ("Vision", entry["vision"])):
            m = section["metrics"]
            rows.append(
                [doc_id, entry["type"], entry["layout"], modality, str(section["samples"]),
                 _fmt(m.precision), _fmt(m.recall), _fmt(m.f1)]
            )
    for modality, counts, m, samples in (
        ("Text", report.text, report.text_metrics, len(gold.pairs)),
        ("Vision", report.vision, report.vision_metrics, len(gold.images)),
    ):
        rows.append(["All", "", "", modality, str(samples), _fmt(m.precision), _fmt(m.recall), _fmt(m.f1)])
    return rows


def render_table(report: EvalReport, gold: GoldAnnotation) -> str:
    header = ["Document", "Type", "Layout", "Modality", "#Samples", "Precision", "Recall", "F1"]
    rows = [header] + report_rows(report, gold)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(header))))
    return "\n".join(lines)


def report_json(report: EvalReport, gold: GoldAnnotation) -> dict:
    def metric_obj(counts: Counts, m: Metrics, samples: int) -> dict:
        return {
            "samples": samples,
            "tp": counts.tp,
            "fp": counts.fp,
            "fn": counts.fn,
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
        }

    out = {
        "text": metric_obj(report.text, report.text_metrics, len(gold.pairs)),
        "vision": metric_obj(report.vision, report.vision_metrics, len(gold.images)),
        "per_document": {},
    }
    for doc_id, entry in report.per_document.items():
        out["per_document"][doc_id] = {
            "type": entry["type"],
            "layout": entry["layout"],
            "text": metric_obj(entry["text"]["counts"], entry["text"]["metrics"], entry["text"]["samples"]),
            "vision": metric_obj(entry["vision"]["counts"], entry["vision"]["metrics"], entry["vision"]["samples"]),
        }
    return out


def counts_from_judgments(judgments) -> tuple[Counts, Counts]:
    """Map reviewer verdicts to counts exactly as structural matching would.

    text_ok=True is a TP; text_ok=False means the prediction was wrong AND
    its true pair went unextracted, so FP and FN together. Unset text_ok
    contributes nothing. Per-image vision booleans map the same way.
    """
    t_tp = t_fp = t_fn = 0
    v_tp = v_fp = v_fn = 0
    for j in judgments:
        text_ok = j.get("text_ok") if isinstance(j, dict) else j.text_ok
        vision_map = j.get("vision_ok") if isinstance(j, dict) else j.vision_ok
        if text_ok is True:
            t_tp += 1
        elif text_ok is False:
            t_fp += 1
            t_fn += 1
        for ok in (vision_map or {}).values():
            if ok is True:
                v_tp += 1
            elif ok is False:
                v_fp += 1
                v_fn += 1
    return Counts(t_tp, t_fp, t_fn), Counts(v_tp, v_fp, v_fn)
