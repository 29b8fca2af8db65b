"""Shared hypothesis strategies."""

from __future__ import annotations

import re

from hypothesis import strategies as st

from vqa_miner.reconstruct import QAPair, Segment, SourceSpan
from vqa_miner.tagparse import Chapter, ExtractionResponse, RawQAPair, normalize_label

_TAG_TOKENS = (
    "<chapter>", "</chapter>", "<title>", "</title>", "<qa_pair>", "</qa_pair>",
    "<label>", "</label>", "<question>", "</question>", "<answer>", "</answer>",
    "<solution>", "</solution>", "<empty>", "</empty>",
)
_INT_TOKEN = re.compile(r"[0-9]+")


def _tag_free(s: str) -> bool:
    return not any(tok in s for tok in _TAG_TOKENS)


def _id_like(s: str) -> bool:
    return all(_INT_TOKEN.fullmatch(tok.strip()) for tok in s.split(","))


# bodies are whitespace-collapsed so canonical render -> parse -> strip is lossless
body_text = (
    st.text(max_size=40)
    .map(lambda s: " ".join(s.split()))
    .filter(_tag_free)
)

labels = body_text.map(normalize_label).filter(_tag_free)

id_tuples = st.lists(st.integers(min_value=0, max_value=500), max_size=6).map(tuple)


raw_qa_pairs = st.builds(
    RawQAPair,
    label=labels,
    question_ids=id_tuples,
    answer_text=body_text,
    solution_ids=id_tuples,
)


@st.composite
def chapters(draw):
    if draw(st.booleans()):
        title_ids = tuple(draw(st.lists(st.integers(0, 500), min_size=1, max_size=4)))
        title_text = ""
    else:
        title_ids = ()
        title_text = draw(body_text.filter(lambda s: not _id_like(s)))
    pairs = tuple(draw(st.lists(raw_qa_pairs, min_size=1, max_size=4)))
    return Chapter(title_ids=title_ids, title_text=title_text, qa_pairs=pairs)


@st.composite
def responses(draw):
    if draw(st.integers(0, 9)) == 0:
        return ExtractionResponse(chapters=())
    chs = tuple(draw(st.lists(chapters(), min_size=1, max_size=3)))
    return ExtractionResponse(chapters=chs)


image_refs = st.from_regex(r"images/[a-z0-9_]{1,12}\.(png|jpg)", fullmatch=True)

segments = st.one_of(
    st.builds(Segment, kind=st.just("text"), value=st.text(max_size=30)),
    st.builds(Segment, kind=st.just("image"), value=image_refs),
)

source_spans = st.builds(
    SourceSpan,
    doc_id=st.sampled_from(["doc_a", "doc_b", "doc_c"]),
    chunk_index=st.integers(min_value=0, max_value=5),
    question_ids=id_tuples,
    solution_ids=id_tuples,
)

qa_pairs = st.builds(
    QAPair,
    chapter_title=st.text(max_size=20).map(lambda s: " ".join(s.split())),
    label=st.text(min_size=1, max_size=12).map(lambda s: " ".join(s.split())),
    question=st.lists(segments, max_size=3).map(tuple),
    answer_short=st.text(max_size=15),
    solution=st.lists(segments, max_size=3).map(tuple),
    provenance=st.lists(source_spans, min_size=1, max_size=2).map(tuple),
    collision=st.just(0),
)
