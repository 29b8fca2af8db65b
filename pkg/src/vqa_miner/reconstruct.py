"""Reassembles model output into concrete QA pairs.

Takes validated id-level responses and the source documents, substitutes
ids back into text and image segments, merges partial pairs across chunks
and documents by (chapter, label), collapses overlap duplicates, and
serializes the result as Markdown and JSONL.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .ingest import DocumentSource
from .tagparse import ValidatedResponse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Segment:
    """One piece of a question or solution: verbatim text or an image reference."""

    kind: str  # "text" | "image"
    value: str

    def __post_init__(self):
        if self.kind not in ("text", "image"):
            raise ValueError(f"unknown segment kind {self.kind!r}")


@dataclass(frozen=True)
class SourceSpan:
    """Where one half of a pair came from, with the ids it claimed."""

    doc_id: str
    chunk_index: int
    question_ids: tuple[int, ...] = ()
    solution_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class QAPair:
    chapter_title: str
    label: str
    question: tuple[Segment, ...]
    answer_short: str
    solution: tuple[Segment, ...]
    provenance: tuple[SourceSpan, ...]
    collision: int = 0  # occurrence index when a (chapter, label) key recurs

    @property
    def partial(self) -> bool:
        """True when one half is missing: no question, or no answer and no solution."""
        return not (self.question and (self.answer_short or self.solution))

    @property
    def modality(self) -> str:
        if any(s.kind == "image" for s in self.question + self.solution):
            return "text_image"
        return "text_only"


@dataclass(frozen=True)
class MergeDiagnostic:
    """Several answer-only candidates shared one key; records the tie-break."""

    key: tuple[str, str]
    chosen: str
    candidates: tuple[str, ...]


def _norm(s: str) -> str:
    return " ".join(s.split()).casefold()


def _span_ref(pair: QAPair) -> str:
    span = pair.provenance[0]
    return f"{span.doc_id}:{span.chunk_index}"


def substitute(validated: ValidatedResponse, doc: DocumentSource) -> list[QAPair]:
    """Expand block ids into segments, preserving source text byte-for-byte."""
    doc_id, chunk_index = validated.chunk_ref

    def segments(ids: tuple[int, ...]) -> tuple[Segment, ...]:
        out = []
        for i in ids:
            block = doc.block_by_id(i)
            if block.kind == "image":
                out.append(Segment("image", block.image_ref or ""))
            else:
                out.append(Segment("text", block.text))
        return tuple(out)

    pairs = []
    for chapter in validated.chapters:
        if chapter.title_ids:
            title = " ".join(doc.block_by_id(i).text for i in chapter.title_ids).strip()
        else:
            title = chapter.title_text
        for raw in chapter.qa_pairs:
            span = SourceSpan(doc_id, chunk_index, raw.question_ids, raw.solution_ids)
            pairs.append(
                QAPair(
                    chapter_title=title,
                    label=raw.label,
                    question=segments(raw.question_ids),
                    answer_short=raw.answer_text,
                    solution=segments(raw.solution_ids),
                    provenance=(span,),
                )
            )
    return pairs


def _merge_provenance(*groups: tuple[SourceSpan, ...]) -> tuple[SourceSpan, ...]:
    seen = set()
    out = []
    for group in groups:
        for span in group:
            if span not in seen:
                seen.add(span)
                out.append(span)
    return tuple(out)


def merge_cross_source(
    pairs: list[QAPair],
    *,
    key_policy: str = "chapter+label",
    diagnostics: list[MergeDiagnostic] | None = None,
) -> list[QAPair]:
    """Join question-only and answer-only halves that share a key.

    The key is the normalized (chapter_title, label); ``key_policy="label"``
    drops the chapter half, for companion answer books whose chapter headers
    were restyled. When several answer-only candidates carry one key, the
    first in document order wins and the tie-break is logged; unmatched
    halves survive with their ``partial`` flag set.
    """
    if key_policy not in ("chapter+label", "label"):
        raise ValueError(f"unknown key_policy {key_policy!r}")

    def key_of(pair: QAPair) -> tuple[str, str]:
        chapter = _norm(pair.chapter_title) if key_policy == "chapter+label" else ""
        return (chapter, _norm(pair.label))

    def is_question_only(pair: QAPair) -> bool:
        return bool(pair.question) and not pair.answer_short and not pair.solution

    def is_answer_only(pair: QAPair) -> bool:
        return not pair.question and bool(pair.answer_short or pair.solution)

    answers_by_key: dict[tuple[str, str], list[int]] = {}
    for idx, pair in enumerate(pairs):
        if is_answer_only(pair):
            answers_by_key.setdefault(key_of(pair), []).append(idx)

    consumed: set[int] = set()
    out: list[QAPair | None] = list(pairs)
    for idx, pair in enumerate(pairs):
        if not is_question_only(pair):
            continue
        candidates = [i for i in answers_by_key.get(key_of(pair), []) if i not in consumed]
        if not candidates:
            continue
        if len(candidates) > 1 and diagnostics is not None:
            diagnostics.append(
                MergeDiagnostic(
                    key=key_of(pair),
                    chosen=_span_ref(pairs[candidates[0]]),
                    candidates=tuple(_span_ref(pairs[i]) for i in candidates),
                )
            )
        chosen = pairs[candidates[0]]
        consumed.add(candidates[0])
        out[idx] = QAPair(
            chapter_title=pair.chapter_title or chosen.chapter_title,
            label=pair.label,
            question=pair.question,
            answer_short=chosen.answer_short,
            solution=chosen.solution,
            provenance=_merge_provenance(pair.provenance, chosen.provenance),
        )
    return [p for i, p in enumerate(out) if p is not None and i not in consumed]


def dedupe_overlaps(pairs: list[QAPair]) -> list[QAPair]:
    """Collapse re-extractions of the same pair from overlapping chunks.

    Identity is (chapter, label, question content); the survivor is the
    candidate with the longest solution, so a seam never erases the more
    complete extraction. Idempotent.
    """

    def identity(pair: QAPair):
        return (_norm(pair.chapter_title), _norm(pair.label), pair.question)

    def completeness(pair: QAPair):
        chars = sum(len(s.value) for s in pair.solution)
        return (len(pair.solution), chars, len(pair.answer_short))

    groups: dict[tuple, list[QAPair]] = {}
    order: list[tuple] = []
    for pair in pairs:
        key = identity(pair)
        if key not in groups:
            order.append(key)
        groups.setdefault(key, []).append(pair)

    out = []
    for key in order:
        members = groups[key]
        survivor = max(members, key=completeness)  # max is stable: earlier wins ties
        if len(members) > 1:
            survivor = replace(survivor, provenance=_merge_provenance(*(m.provenance for m in members)))
        out.append(survivor)
    return out


def disambiguate_collisions(pairs: list[QAPair]) -> list[QAPair]:
    """Suffix labels when one (chapter, label) key covers different exercises.

    Numbering that restarts mid-chapter produces two genuine "1"s; downstream
    consumers need unique keys, so later occurrences become "1#2", "1#3", ...
    with the collision index kept on the pair.
    """
    counts: dict[tuple[str, str], int] = {}
    out = []
    for pair in pairs:
        key = (_norm(pair.chapter_title), _norm(pair.label))
        n = counts.get(key, 0) + 1
        counts[key] = n
        if n > 1:
            logger.warning("duplicate key %s, suffixing occurrence %d", key, n)
            pair = replace(pair, label=f"{pair.label}#{n}", collision=n)
        out.append(pair)
    return out


def _render_segments(segments: tuple[Segment, ...], ref_map: dict[str, str] | None) -> list[str]:
    out = []
    for seg in segments:
        if seg.kind == "image":
            ref = ref_map.get(seg.value, seg.value) if ref_map else seg.value
            out.append(f"![]({ref})")
        else:
            out.append(seg.value)
    return out


def render_markdown(pair: QAPair, *, ref_map: dict[str, str] | None = None) -> str:
    """Deterministic Markdown for one pair; missing halves render `*not found*`."""
    heading = f"### {pair.chapter_title} — {pair.label}" if pair.chapter_title else f"### {pair.label}"
    parts = [heading, "", "**Question**", ""]
    parts.extend(_render_segments(pair.question, ref_map) or ["*not found*"])
    parts.extend(["", "**Answer**", "", pair.answer_short or "*not found*"])
    parts.extend(["", "**Solution**", ""])
    parts.extend(_render_segments(pair.solution, ref_map) or ["*not found*"])
    return "\n".join(parts) + "\n"


def pair_record(pair: QAPair) -> dict:
    provenance: dict = {
        "sources": [
            {
                "doc_id": s.doc_id,
                "chunk_index": s.chunk_index,
                "question_ids": list(s.question_ids),
                "solution_ids": list(s.solution_ids),
            }
            for s in pair.provenance
        ]
    }
    if pair.collision:
        provenance["collision"] = pair.collision
    return {
        "chapter": pair.chapter_title,
        "label": pair.label,
        "question": [{"type": s.kind, "value": s.value} for s in pair.question],
        "answer": pair.answer_short,
        "solution": [{"type": s.kind, "value": s.value} for s in pair.solution],
        "modality": pair.modality,
        "partial": pair.partial,
        "provenance": provenance,
    }


def export_jsonl(pairs: list[QAPair], path: str | Path) -> int:
    """One JSON object per line; byte-stable for a given input order."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair_record(pair), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
    return len(pairs)


def pair_from_record(record: dict) -> QAPair:
    spans = tuple(
        SourceSpan(
            doc_id=s["doc_id"],
            chunk_index=int(s["chunk_index"]),
            question_ids=tuple(int(i) for i in s.get("question_ids", [])),
            solution_ids=tuple(int(i) for i in s.get("solution_ids", [])),
        )
        for s in record.get("provenance", {}).get("sources", [])
    )
    return QAPair(
        chapter_title=record["chapter"],
        label=record["label"],
        question=tuple(Segment(s["type"], s["value"]) for s in record["question"]),
        answer_short=record["answer"],
        solution=tuple(Segment(s["type"], s["value"]) for s in record["solution"]),
        provenance=spans,
        collision=int(record.get("provenance", {}).get("collision", 0)),
    )


def load_jsonl(path: str | Path) -> list[QAPair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                pairs.append(pair_from_record(record))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: bad pair record: {exc}") from exc
    return pairs
