"""Loading of layout-parsed block JSON and sliding-window chunking.

The input format is the block list a layout parser (MinerU-style) emits for
one document: a JSON array of records with a ``type`` key and one of
``text`` / ``img_path``, plus optional ``page_idx`` and ``bbox``. The loader
is a permissive superset of that schema so minor producer-version drift does
not break ingestion.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

BLOCK_KINDS = ("text", "title", "equation", "table", "image")


class MalformedInput(ValueError):
    """Input file is not a JSON array of block records."""


class EmptyDocument(ValueError):
    """Input file contained zero usable block records."""


class InvalidChunkParams(ValueError):
    """Chunk window/overlap violate ``window >= 2*overlap + 1``."""


@dataclass(frozen=True)
class ContentBlock:
    """One parsed layout unit: text, title, equation, table, or image."""

    id: int
    kind: str
    text: str
    image_ref: str | None
    page_index: int
    bbox: tuple[float, float, float, float] | None
    source_doc: str


@dataclass
class DocumentSource:
    doc_id: str
    path: Path
    subject: str
    blocks: list[ContentBlock]

    def block_by_id(self, block_id: int) -> ContentBlock:
        if not 0 <= block_id < len(self.blocks):
            raise KeyError(block_id)
        return self.blocks[block_id]


@dataclass(frozen=True)
class Chunk:
    """A sliding window of consecutive blocks sent to the LLM in one request."""

    chunk_index: int
    doc_id: str
    block_ids: tuple[int, ...]
    overlap_prefix_len: int


def _parse_bbox(raw: object, doc_id: str, index: int) -> tuple[float, float, float, float] | None:
    if raw is None:
        return None
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 4
        or not all(isinstance(v, (int, float)) for v in raw)
    ):
        logger.warning("%s: record %d has malformed bbox %r, dropping it", doc_id, index, raw)
        return None
    x0, y0, x1, y1 = (float(v) for v in raw)
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        logger.warning("%s: record %d bbox %r out of range, dropping it", doc_id, index, raw)
        return None
    return (x0, y0, x1, y1)


def load_mineru_document(path: str | Path, doc_id: str, subject: str) -> DocumentSource:
    """Load one block-JSON file into a :class:`DocumentSource` with ids assigned.

    Unknown block kinds degrade to ``text`` with a warning; records missing
    both ``text`` and ``img_path`` are skipped. Raises :class:`MalformedInput`
    if the file is not a JSON array and :class:`EmptyDocument` if no usable
    records remain.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"{path}: {exc}") from exc
    if not isinstance(raw, list):
        raise MalformedInput(f"{path}: expected a JSON array of block records")

    blocks: list[ContentBlock] = []
    page_index = 0
    for i, record in enumerate(raw):
        if not isinstance(record, dict):
            logger.warning("%s: record %d is not an object, skipping", doc_id, i)
            continue
        kind = record.get("type")
        if not isinstance(kind, str):
            logger.warning("%s: record %d has no type, skipping", doc_id, i)
            continue
        if kind not in BLOCK_KINDS:
            logger.warning("%s: record %d has unknown kind %r, treating as text", doc_id, i, kind)
            kind = "text"

        image_ref = record.get("img_path")
        text = record.get("text")
        if kind == "image":
            if not image_ref or not isinstance(image_ref, str):
                logger.warning("%s: record %d is an image without img_path, skipping", doc_id, i)
                continue
            text = ""
        elif not isinstance(text, str):
            if isinstance(image_ref, str) and image_ref:
                # e.g. a table exported as a crop: content lives in the image file
                logger.warning("%s: record %d (%s) carries only img_path, treating as image", doc_id, i, kind)
                kind = "image"
                text = ""
            else:
                logger.warning("%s: record %d has no usable text, skipping", doc_id, i)
                continue
        else:
            image_ref = None

        page_raw = record.get("page_idx")
        if isinstance(page_raw, int) and page_raw >= 0:
            page_index = page_raw

        blocks.append(
            ContentBlock(
                id=len(blocks),
                kind=kind,
                text=text,
                image_ref=image_ref,
                page_index=page_index,
                bbox=_parse_bbox(record.get("bbox"), doc_id, i),
                source_doc=doc_id,
            )
        )

    if not blocks:
        raise EmptyDocument(f"{path}: no usable block records")
    return DocumentSource(doc_id=doc_id, path=path, subject=subject, blocks=blocks)


def assign_identifiers(doc: DocumentSource) -> DocumentSource:
    """Number blocks 0..N-1 in reading order. Idempotent."""
    blocks = [
        dataclasses.replace(block, id=i, source_doc=doc.doc_id)
        for i, block in enumerate(doc.blocks)
    ]
    return dataclasses.replace(doc, blocks=blocks)


def chunk_document(doc: DocumentSource, window: int, overlap: int) -> list[Chunk]:
    """Split a document into overlapping chunks of at most ``window`` blocks.

    Consecutive chunks share ``overlap`` blocks. When ``overlap`` is zero, an
    image block sitting right at a chunk boundary is duplicated into the
    neighbouring chunk whenever its adjacent non-image block lands on the
    other side, so the image can be referenced next to its caption; each
    boundary contributes at most one duplicate, so a middle chunk can carry
    up to ``window + 2`` ids.
    """
    if overlap < 0 or window < 2 * overlap + 1:
        raise InvalidChunkParams(f"window={window} must be >= 2*overlap+1 (overlap={overlap})")

    n = len(doc.blocks)
    step = window - overlap
    spans: list[list[int]] = []
    start = 0
    while True:
        end = min(start + window, n)
        spans.append(list(range(start, end)))
        if end >= n:
            break
        start += step

    kind = {b.id: b.kind for b in doc.blocks}
    for left, right in zip(spans, spans[1:]):
        boundary = right[0]
        if left[-1] < boundary:
            # No shared ids: check both boundary orientations for a split image.
            last = left[-1]
            if kind[last] == "image" and kind[boundary] != "image":
                right.insert(0, last)
            elif kind[boundary] == "image" and kind[last] != "image":
                left.append(boundary)

    chunks: list[Chunk] = []
    prev: set[int] = set()
    for i, ids in enumerate(spans):
        prefix = 0
        while prefix < len(ids) and ids[prefix] in prev:
            prefix += 1
        chunks.append(
            Chunk(
                chunk_index=i,
                doc_id=doc.doc_id,
                block_ids=tuple(ids),
                overlap_prefix_len=prefix if i > 0 else 0,
            )
        )
        prev = set(ids)
    return chunks
