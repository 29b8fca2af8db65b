"""Recursive-descent parser for the tagged extraction grammar.

The extraction model replies in a small fixed tag vocabulary
(``<chapter>``, ``<title>``, ``<qa_pair>``, ``<label>``, ``<question>``,
``<answer>``, ``<solution>``, ``<empty>``). Inner text is taken raw until
the matching close tag, because answers and labels routinely contain ``<``,
``&`` and LaTeX that a generic XML parser would mangle.

Two modes:

* lenient (default): malformed fragments are dropped with a structured
  diagnostic while well-formed siblings survive. Used in the pipeline,
  where model output is adversarially messy.
* strict: any malformation raises :class:`ParseError`. Used for
  conformance testing.

The grammar is documented as EBNF in ``docs/tag-grammar.md``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

_WS = " \t\r\n"
_INT_RE = re.compile(r"[0-9]+$")

_PAIR_FIELDS = ("label", "question", "answer", "solution")


class ParseError(ValueError):
    """Raised on malformed input in strict mode, or when nothing is recoverable."""

    def __init__(self, message: str, offset: int, expected: str = ""):
        super().__init__(f"{message} at offset {offset}" + (f" (expected {expected})" if expected else ""))
        self.offset = offset
        self.expected = expected


class ValidationError(ValueError):
    """Raised in strict mode when a response references ids outside its chunk."""


@dataclass(frozen=True)
class Diagnostic:
    """One recoverable problem found while parsing or validating."""

    kind: str
    offset: int
    snippet: str
    chunk_ref: tuple[str, int] | None = None


@dataclass(frozen=True)
class RawQAPair:
    label: str
    question_ids: tuple[int, ...]
    answer_text: str
    solution_ids: tuple[int, ...]


@dataclass(frozen=True)
class Chapter:
    title_ids: tuple[int, ...]
    title_text: str
    qa_pairs: tuple[RawQAPair, ...]

    @property
    def title_kind(self) -> str:
        """How the title was given: block ids, verbatim text, or absent."""
        if self.title_ids:
            return "ids"
        return "text" if self.title_text else "empty"


@dataclass(frozen=True)
class ExtractionResponse:
    chapters: tuple[Chapter, ...]
    diagnostics: tuple[Diagnostic, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.chapters


@dataclass(frozen=True)
class ValidatedResponse:
    """An :class:`ExtractionResponse` whose id references were checked against a chunk."""

    chunk_ref: tuple[str, int]
    chapters: tuple[Chapter, ...]
    diagnostics: tuple[Diagnostic, ...] = ()


def _roman(n: int) -> str:
    out = []
    for value, glyph in ((10, "X"), (9, "IX"), (5, "V"), (4, "IV"), (1, "I")):
        while n >= value:
            out.append(glyph)
            n -= value
    return "".join(out)


# Exercise numbering rarely exceeds XXXIX; longer forms pass through untouched.
_ROMAN_TO_ARABIC = {_roman(n): str(n) for n in range(1, 40)}


def normalize_label(raw: str) -> str:
    """Normalize an exercise label to the prompt's conventions.

    Collapses whitespace, strips the trailing period, keeps only the final
    component of dotted compounds ("III.16" -> "16"), converts standalone
    Roman numerals I..XXXIX to Arabic, and preserves textual prefixes such
    as "Example". Idempotent; unrecognized forms pass through trimmed.
    """
    s = " ".join(raw.split())
    if not s:
        return s
    head, _, token = s.rpartition(" ")
    token = token.rstrip(".")
    if "." in token:
        parts = [p for p in token.split(".") if p]
        token = parts[-1] if parts else token
    token = _ROMAN_TO_ARABIC.get(token, token)
    return f"{head} {token}".strip() if head else token


class _Scanner:
    __slots__ = ("text", "pos")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in _WS:
            self.pos += 1

    def at(self, literal: str) -> bool:
        return self.text.startswith(literal, self.pos)

    def consume(self, literal: str) -> bool:
        if self.at(literal):
            self.pos += len(literal)
            return True
        return False

    def find(self, literal: str) -> int:
        return self.text.find(literal, self.pos)

    def snippet(self, at: int | None = None) -> str:
        start = self.pos if at is None else at
        return self.text[start : start + 40]


class _Parser:
    def __init__(self, text: str, strict: bool):
        self.s = _Scanner(text)
        self.strict = strict
        self.diags: list[Diagnostic] = []

    def fail(self, message: str, offset: int | None = None, expected: str = "") -> None:
        raise ParseError(message, self.s.pos if offset is None else offset, expected)

    def diag(self, kind: str, offset: int | None = None) -> None:
        at = self.s.pos if offset is None else offset
        self.diags.append(Diagnostic(kind=kind, offset=at, snippet=self.s.snippet(at)))

    def parse(self) -> ExtractionResponse:
        s = self.s
        chapters: list[Chapter] = []
        saw_empty = False
        saw_any_tag = False

        s.skip_ws()
        while not s.eof():
            if s.at("<chapter>"):
                saw_any_tag = True
                chapter = self.parse_chapter()
                if chapter is not None:
                    chapters.append(chapter)
            elif s.at("<empty>"):
                saw_any_tag = True
                start = s.pos
                s.consume("<empty>")
                s.skip_ws()
                if not s.consume("</empty>"):
                    if self.strict:
                        self.fail("unterminated <empty>", start, "</empty>")
                    self.diag("unterminated-tag", start)
                saw_empty = True
            else:
                if self.strict:
                    self.fail("unexpected content", expected="<chapter> or <empty>")
                self.diag("unexpected-content")
                nxt = [i for i in (s.find("<chapter>"), s.find("<empty>")) if i > s.pos]
                if not nxt:
                    break
                s.pos = min(nxt)
            s.skip_ws()

        if self.strict and saw_empty and chapters:
            self.fail("response mixes <empty> with chapters", 0)
        if not chapters and not saw_empty and not saw_any_tag:
            raise ParseError("no recognizable content", 0, "<chapter> or <empty>")
        return ExtractionResponse(chapters=tuple(chapters), diagnostics=tuple(self.diags))

    def parse_chapter(self) -> Chapter | None:
        s = self.s
        start = s.pos
        s.consume("<chapter>")
        s.skip_ws()

        title_ids: tuple[int, ...] = ()
        title_text = ""
        if s.at("<title>"):
            content = self.read_tag_body("title")
            if content is None:
                return self.abandon_chapter(start, ())
            title_ids, title_text = self.classify_title(content)

        pairs: list[RawQAPair] = []
        while True:
            s.skip_ws()
            if s.consume("</chapter>"):
                break
            if s.at("<qa_pair>"):
                pair = self.parse_qa_pair()
                if pair is not None:
                    pairs.append(pair)
                continue
            if s.eof():
                if self.strict:
                    self.fail("unterminated <chapter>", start, "</chapter>")
                self.diag("unterminated-tag", start)
                return self.finish_chapter(title_ids, title_text, pairs)
            if self.strict:
                self.fail("unexpected content in chapter", expected="<qa_pair> or </chapter>")
            self.diag("unexpected-content")
            nxt = [i for i in (s.find("<qa_pair>"), s.find("</chapter>")) if i > s.pos]
            if not nxt:
                s.pos = len(s.text)
                continue
            s.pos = min(nxt)

        if self.strict and not pairs:
            self.fail("chapter contains no qa_pair", start)
        return self.finish_chapter(title_ids, title_text, pairs)

    def finish_chapter(self, title_ids, title_text, pairs) -> Chapter | None:
        if not pairs and not self.strict:
            self.diag("empty-chapter-dropped")
            return None
        return Chapter(title_ids=title_ids, title_text=title_text, qa_pairs=tuple(pairs))

    def abandon_chapter(self, start: int, _unused) -> None:
        # A chapter whose title never closed: skip to the next plausible chapter.
        nxt = self.s.find("<chapter>")
        self.s.pos = nxt if nxt > self.s.pos else len(self.s.text)
        return None

    def parse_qa_pair(self) -> RawQAPair | None:
        s = self.s
        start = s.pos
        s.consume("<qa_pair>")
        fields: dict[str, str] = {}
        while True:
            s.skip_ws()
            if s.consume("</qa_pair>"):
                break
            matched = None
            for name in _PAIR_FIELDS:
                if s.at(f"<{name}>"):
                    matched = name
                    break
            if matched is None:
                reason = "unterminated <qa_pair>" if s.eof() else "unexpected content in qa_pair"
                if self.strict:
                    self.fail(reason, start if s.eof() else None, "</qa_pair>")
                self.diag("malformed-pair", start)
                return self.resync_pair()
            if matched in fields:
                if self.strict:
                    self.fail(f"duplicate <{matched}> in qa_pair", start)
                self.diag("malformed-pair", start)
                return self.resync_pair()
            body = self.read_tag_body(matched)
            if body is None:
                return self.resync_pair()
            fields[matched] = body

        return RawQAPair(
            label=normalize_label(fields.get("label", "")),
            question_ids=self.parse_id_list(fields.get("question", ""), start),
            answer_text=fields.get("answer", "").strip(),
            solution_ids=self.parse_id_list(fields.get("solution", ""), start),
        )

    def read_tag_body(self, name: str) -> str | None:
        """Consume ``<name>raw</name>`` and return the raw body, or None on failure."""
        s = self.s
        open_at = s.pos
        s.consume(f"<{name}>")
        close = s.find(f"</{name}>")
        if close < 0:
            if self.strict:
                self.fail(f"unterminated <{name}>", open_at, f"</{name}>")
            self.diag("unterminated-tag", open_at)
            return None
        body = s.text[s.pos : close]
        s.pos = close + len(f"</{name}>")
        return body

    def resync_pair(self) -> None:
        """Skip past the broken pair: stop before a sibling tag or after its close."""
        s = self.s
        candidates = {
            "</qa_pair>": s.find("</qa_pair>"),
            "<qa_pair>": s.find("<qa_pair>"),
            "</chapter>": s.find("</chapter>"),
        }
        live = {k: v for k, v in candidates.items() if v >= s.pos}
        if not live:
            s.pos = len(s.text)
            return None
        tag = min(live, key=live.get)
        s.pos = live[tag] + (len(tag) if tag == "</qa_pair>" else 0)
        return None

    def classify_title(self, content: str) -> tuple[tuple[int, ...], str]:
        """A title holding only comma-separated integers is a block-id list."""
        text = content.strip()
        if not text:
            return (), ""
        tokens = [t.strip() for t in text.split(",")]
        if all(_INT_RE.fullmatch(t) for t in tokens):
            return tuple(int(t) for t in tokens), ""
        return (), text

    def parse_id_list(self, content: str, pair_start: int) -> tuple[int, ...]:
        if not content.strip():
            return ()
        ids = []
        for token in content.split(","):
            token = token.strip()
            if _INT_RE.fullmatch(token):
                ids.append(int(token))
            else:
                if self.strict:
                    self.fail(f"invalid id token {token!r}", pair_start)
                self.diag("bad-id-token", pair_start)
        return tuple(ids)


def parse_response(text: str, *, strict: bool = False) -> ExtractionResponse:
    """Parse an extraction reply into a validated tree.

    Never aborts the process: any input either parses (possibly with
    diagnostics attached) or raises :class:`ParseError`.
    """
    parser = _Parser(text, strict=strict)
    if not strict:
        # Models often wrap replies in prose or code fences; start at the
        # first recognizable top-level tag.
        first = [i for i in (text.find("<chapter>"), text.find("<empty>")) if i >= 0]
        if not first:
            raise ParseError("no recognizable content", 0, "<chapter> or <empty>")
        start = min(first)
        if text[:start].strip():
            parser.diag("leading-junk", 0)
        parser.s.pos = start
    return parser.parse()


def render_canonical(resp: ExtractionResponse) -> str:
    """Re-emit a response in the canonical wire format, deterministically.

    Inverse of :func:`parse_response` for valid responses: labels normalized,
    answer/label/title text stripped and free of their own close tags, every
    chapter holding at least one pair, and text titles not shaped like id
    lists. ``parse_response(render_canonical(r)) == r`` then holds exactly.
    """
    if resp.is_empty:
        return "<empty></empty>"
    out = []
    for chapter in resp.chapters:
        title = ",".join(str(i) for i in chapter.title_ids) if chapter.title_ids else chapter.title_text
        lines = [f"<chapter><title>{title}</title>\n"]
        for pair in chapter.qa_pairs:
            q = ",".join(str(i) for i in pair.question_ids)
            sol = ",".join(str(i) for i in pair.solution_ids)
            lines.append(
                f"<qa_pair><label>{pair.label}</label><question>{q}</question>\n"
                f"<answer>{pair.answer_text}</answer><solution>{sol}</solution></qa_pair>\n"
            )
        lines.append("</chapter>")
        out.append("".join(lines))
    return "\n".join(out)


def validate_ids(resp: ExtractionResponse, chunk, *, strict: bool = False) -> ValidatedResponse:
    """Check every referenced id against the chunk that produced the response.

    Out-of-chunk references are dropped with a diagnostic (lenient) or raise
    :class:`ValidationError` (strict). Duplicates within one field collapse to
    the first occurrence. Pairs left with no question ids and no answer text
    are discarded.
    """
    valid = set(chunk.block_ids)
    ref = (chunk.doc_id, chunk.chunk_index)
    diags: list[Diagnostic] = []

    def clean(ids: tuple[int, ...], field_name: str) -> tuple[int, ...]:
        seen = set()
        kept = []
        for i in ids:
            if i not in valid:
                if strict:
                    raise ValidationError(f"{ref}: {field_name} references id {i} outside chunk")
                diags.append(Diagnostic("out-of-chunk-id", 0, f"{field_name}:{i}", ref))
                continue
            if i in seen:
                continue
            seen.add(i)
            kept.append(i)
        return tuple(kept)

    chapters = []
    for chapter in resp.chapters:
        pairs = []
        for pair in chapter.qa_pairs:
            cleaned = replace(
                pair,
                question_ids=clean(pair.question_ids, "question"),
                solution_ids=clean(pair.solution_ids, "solution"),
            )
            if not cleaned.question_ids and not cleaned.answer_text:
                diags.append(Diagnostic("dropped-empty-pair", 0, cleaned.label, ref))
                continue
            pairs.append(cleaned)
        chapters.append(replace(chapter, title_ids=clean(chapter.title_ids, "title"), qa_pairs=tuple(pairs)))

    return ValidatedResponse(chunk_ref=ref, chapters=tuple(chapters), diagnostics=tuple(diags))
