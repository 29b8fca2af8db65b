"""Turns a chunk into the JSON payload and prompt sent to the extraction model."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

from .ingest import Chunk, DocumentSource


class DanglingId(ValueError):
    """A chunk references a block id its document does not contain."""


class BadTemplate(ValueError):
    """Template does not carry exactly one {subject} substitution point."""


@dataclass(frozen=True)
class PromptBundle:
    """Filled instruction text plus the serialized block payload for one chunk."""

    instructions: str
    payload: str
    chunk_ref: tuple[str, int]

    @property
    def message(self) -> str:
        """The single user-message body actually sent to the endpoint."""
        return f"{self.instructions}\n\n{self.payload}\n"


def _caption_for(doc: DocumentSource, block_ids: list[int], idx: int) -> str:
    """Nearest textual neighbour of an image block, preferring the one after it."""
    for j in (idx + 1, idx - 1):
        if 0 <= j < len(block_ids):
            other = doc.block_by_id(block_ids[j])
            if other.kind != "image" and other.text.strip():
                return other.text.strip()
    return ""


def serialize_blocks(doc: DocumentSource, chunk: Chunk) -> str:
    """Render a chunk as the JSON array of ``{id, type, content}`` the prompt expects.

    Image blocks carry no text of their own, so their content is an
    ``[image]`` marker plus the adjacent caption when one exists; the model
    needs something legible to decide which question owns the figure.
    """
    ids = list(chunk.block_ids)
    records = []
    for idx, block_id in enumerate(ids):
        try:
            block = doc.block_by_id(block_id)
        except KeyError:
            raise DanglingId(f"{chunk.doc_id} chunk {chunk.chunk_index}: no block {block_id}") from None
        if block.kind == "image":
            caption = _caption_for(doc, ids, idx)
            content = f"[image] {caption}" if caption else "[image]"
        else:
            content = block.text
        records.append({"id": block.id, "type": block.kind, "content": content})
    return json.dumps(records, ensure_ascii=False)


def load_template(name: str = "extract_vqa") -> str:
    return resources.files("vqa_miner.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def template_sha256(template: str) -> str:
    return hashlib.sha256(template.encode("utf-8")).hexdigest()


def build_extraction_prompt(doc: DocumentSource, chunk: Chunk, *, template: str | None = None) -> PromptBundle:
    """Instructions with the subject filled in, paired with the chunk's block JSON.

    Substitution is a literal replace because the template itself is full of
    braces (tag examples, JSON snippets) that ``str.format`` would choke on.
    """
    if template is None:
        template = load_template()
    if template.count("{subject}") != 1:
        raise BadTemplate("template must contain {subject} exactly once")
    return PromptBundle(
        instructions=template.replace("{subject}", doc.subject),
        payload=serialize_blocks(doc, chunk),
        chunk_ref=(chunk.doc_id, chunk.chunk_index),
    )
