"""Benchmark curation: keep only clean, verifiable, self-contained problems.

Stages per pair: canonical short-answer extraction (verifiability gate),
question-type classification, completeness judgment, and an optional
difficulty filter driven by externally supplied solver outcomes. Every LLM
judgment flows through the gateway cache, so replaying a recorded
transcript reproduces identical records with zero network calls.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from . import prompting
from .gateway import GatewayError, LLMGateway
from .reconstruct import QAPair, pair_record

logger = logging.getLogger(__name__)

QTYPES = ("proof", "explanation", "fill_in_blank", "calculation", "multiple_choice", "drawing", "other")
KEEP_QTYPES = frozenset({"fill_in_blank", "calculation", "multiple_choice"})
DROP_REASONS = ("non_verifiable", "excluded_type", "incomplete", "too_easy", "too_hard")

NON_VERIFIABLE_SENTINEL = "NON_VERIFIABLE"


class MissingSolverData(ValueError):
    """The difficulty stage ran without outcomes for some pair."""


@dataclass(frozen=True)
class CurationConfig:
    # answers at or under this whitespace-token budget pass through unchanged
    short_answer_max_tokens: int = 16
    incomplete_patterns: tuple[str, ...] = (
        "According to Theorem",
        "See previous",
        "Answered in text",
    )
    drop_when_all_solved: bool = True
    drop_when_none_solved: bool = True


@dataclass(frozen=True)
class CurationRecord:
    pair_key: tuple[str, str, str]  # (chapter, label, doc_id)
    qtype: str
    verifiable: bool
    short_answer: str
    modality_group: str
    verdict: str  # "keep" | "drop"
    drop_reason: str | None = None

    def __post_init__(self):
        if self.verdict == "drop" and self.drop_reason not in DROP_REASONS:
            raise ValueError("dropped records need a drop_reason")
        if self.verdict == "keep" and self.drop_reason is not None:
            raise ValueError("kept records must not carry a drop_reason")
        if not self.verifiable and self.drop_reason != "non_verifiable":
            raise ValueError("non-verifiable pairs always drop as non_verifiable")


def pair_key(pair: QAPair) -> tuple[str, str, str]:
    doc = pair.provenance[0].doc_id if pair.provenance else ""
    return (pair.chapter_title, pair.label, doc)


def _segments_text(segments) -> str:
    return "\n".join(s.value if s.kind == "text" else "[image]" for s in segments)


def _fill(template: str, **values: str) -> str:
    for name, value in values.items():
        template = template.replace("{" + name + "}", value)
    return template


def _token_count(text: str) -> int:
    return len(text.split())


def _run_batch(gateway: LLMGateway, prompts: list[str]) -> list[str]:
    results = gateway.complete_many(prompts)
    for res in results:
        if not res.ok:
            raise GatewayError(f"curation prompt {res.index} failed: {res.error_message}")
    return [res.text for res in results]


def build_short_answer_prompt(pair: QAPair, template: str) -> str:
    return _fill(
        template,
        question=_segments_text(pair.question),
        answer=pair.answer_short,
        solution=_segments_text(pair.solution),
    )


def build_qtype_prompt(pair: QAPair, template: str) -> str:
    return _fill(template, question=_segments_text(pair.question))


def build_completeness_prompt(pair: QAPair, template: str) -> str:
    return _fill(template, question=_segments_text(pair.question))


def extract_short_answer(pair: QAPair, gateway: LLMGateway, config: CurationConfig,
                         template: str | None = None) -> tuple[str, bool]:
    """Canonical short answer, or verifiable=False when none can exist."""
    if not pair.answer_short and not pair.solution:
        return "", False
    if pair.answer_short and _token_count(pair.answer_short) <= config.short_answer_max_tokens:
        return pair.answer_short, True
    if template is None:
        template = prompting.load_template("short_answer")
    reply, _ = gateway.complete(build_short_answer_prompt(pair, template))
    return _interpret_short_answer(reply, config)


def _interpret_short_answer(reply: str, config: CurationConfig) -> tuple[str, bool]:
    reply = reply.strip()
    if not reply or NON_VERIFIABLE_SENTINEL in reply:
        return "", False
    if _token_count(reply) > config.short_answer_max_tokens:
        logger.warning("short-answer reply over budget (%d tokens), treating as non-verifiable", _token_count(reply))
        return "", False
    return reply, True


def _interpret_qtype(reply: str) -> str:
    token = reply.strip().splitlines()[0].strip() if reply.strip() else ""
    token = token.strip(" .`'\"").casefold().replace("-", "_").replace(" ", "_")
    if token in QTYPES:
        return token
    logger.warning("unrecognized question type %r, mapping to other", reply.strip()[:40])
    return "other"


def classify_question_type(pair: QAPair, gateway: LLMGateway, template: str | None = None) -> str:
    if template is None:
        template = prompting.load_template("question_type")
    reply, _ = gateway.complete(build_qtype_prompt(pair, template))
    return _interpret_qtype(reply)


def split_modality(pairs: list[QAPair]) -> tuple[list[QAPair], list[QAPair]]:
    """Disjoint, exhaustive partition on the modality flag."""
    text_only = [p for p in pairs if p.modality == "text_only"]
    text_image = [p for p in pairs if p.modality == "text_image"]
    return text_only, text_image


def completeness_heuristic(pair: QAPair, config: CurationConfig) -> bool | None:
    """True/False when a cheap rule decides; None defers to the LLM."""
    if pair.partial:
        return False
    question = _segments_text(pair.question).casefold()
    for pattern in config.incomplete_patterns:
        if pattern.casefold() in question:
            return False
    return None


def _interpret_completeness(reply: str) -> bool:
    verdict = reply.strip().upper()
    if verdict.startswith("INCOMPLETE"):
        return False
    if verdict.startswith("COMPLETE"):
        return True
    logger.warning("unrecognized completeness verdict %r, keeping", reply.strip()[:40])
    return True


def filter_completeness(pair: QAPair, gateway: LLMGateway, config: CurationConfig,
                        template: str | None = None) -> bool:
    """True when the pair is self-contained enough to stand alone."""
    decided = completeness_heuristic(pair, config)
    if decided is not None:
        return decided
    if template is None:
        template = prompting.load_template("completeness")
    reply, _ = gateway.complete(build_completeness_prompt(pair, template))
    return _interpret_completeness(reply)


def filter_difficulty(keys: list[tuple[str, str, str]], solver_results: dict,
                      config: CurationConfig) -> dict:
    """Per-key verdict from K solver outcomes: None (keep) or a drop reason."""
    verdicts = {}
    for key in keys:
        entry = solver_results.get("|".join(key))
        if entry is None or not entry.get("solved"):
            raise MissingSolverData(f"no solver outcomes for pair {key}")
        outcomes = [bool(x) for x in entry["solved"]]
        if config.drop_when_all_solved and all(outcomes):
            verdicts[key] = "too_easy"
        elif config.drop_when_none_solved and not any(outcomes) and not entry.get("human_review", False):
            verdicts[key] = "too_hard"
        else:
            verdicts[key] = None
    return verdicts


def curate_pairs(
    pairs: list[QAPair],
    gateway: LLMGateway,
    config: CurationConfig | None = None,
    *,
    solver_results: dict | None = None,
    skip_difficulty: bool = False,
) -> list[CurationRecord]:
    """Run every stage over the batch; LLM calls go through the bounded pool.

    The verdict records the first failing stage, in order: verifiability,
    question type, completeness, difficulty.
    """
    config = config or CurationConfig()
    short_tpl = prompting.load_template("short_answer")
    qtype_tpl = prompting.load_template("question_type")
    complete_tpl = prompting.load_template("completeness")

    # Stage 1: short answers. Pairs with a concise answer skip the model.
    short_answers: dict[int, tuple[str, bool]] = {}
    needs_llm = []
    for idx, pair in enumerate(pairs):
        if not pair.answer_short and not pair.solution:
            short_answers[idx] = ("", False)
        elif pair.answer_short and _token_count(pair.answer_short) <= config.short_answer_max_tokens:
            short_answers[idx] = (pair.answer_short, True)
        else:
            needs_llm.append(idx)
    replies = _run_batch(gateway, [build_short_answer_prompt(pairs[i], short_tpl) for i in needs_llm])
    for idx, reply in zip(needs_llm, replies):
        short_answers[idx] = _interpret_short_answer(reply, config)

    # Stage 2: question type for every pair, so records are complete even for drops.
    qtype_replies = _run_batch(gateway, [build_qtype_prompt(p, qtype_tpl) for p in pairs])
    qtypes = [_interpret_qtype(r) for r in qtype_replies]

    # Stage 3: completeness, only where earlier stages have not already decided.
    completeness: dict[int, bool] = {}
    needs_judge = []
    for idx, pair in enumerate(pairs):
        if not short_answers[idx][1] or qtypes[idx] not in KEEP_QTYPES:
            continue
        decided = completeness_heuristic(pair, config)
        if decided is None:
            needs_judge.append(idx)
        else:
            completeness[idx] = decided
    replies = _run_batch(gateway, [build_completeness_prompt(pairs[i], complete_tpl) for i in needs_judge])
    for idx, reply in zip(needs_judge, replies):
        completeness[idx] = _interpret_completeness(reply)

    # Stage 4: difficulty over survivors, from external solver outcomes.
    survivor_idx = [
        idx for idx, pair in enumerate(pairs)
        if short_answers[idx][1] and qtypes[idx] in KEEP_QTYPES and completeness.get(idx, False)
    ]
    difficulty: dict[int, str | None] = {}
    if not skip_difficulty:
        if solver_results is None:
            raise MissingSolverData("difficulty stage enabled but no solver results supplied")
        keys = [pair_key(pairs[i]) for i in survivor_idx]
        verdicts = filter_difficulty(keys, solver_results, config)
        difficulty = {i: verdicts[pair_key(pairs[i])] for i in survivor_idx}

    records = []
    for idx, pair in enumerate(pairs):
        short, verifiable = short_answers[idx]
        if not verifiable:
            verdict, reason = "drop", "non_verifiable"
        elif qtypes[idx] not in KEEP_QTYPES:
            verdict, reason = "drop", "excluded_type"
        elif not completeness.get(idx, False):
            verdict, reason = "drop", "incomplete"
        elif difficulty.get(idx) is not None:
            verdict, reason = "drop", difficulty[idx]
        else:
            verdict, reason = "keep", None
        records.append(
            CurationRecord(
                pair_key=pair_key(pair),
                qtype=qtypes[idx],
                verifiable=verifiable,
                short_answer=short,
                modality_group=pair.modality,
                verdict=verdict,
                drop_reason=reason,
            )
        )
    return records


def write_outputs(pairs: list[QAPair], records: list[CurationRecord], out_dir: str | Path) -> dict:
    """curation.jsonl with every record, plus kept pairs split by modality."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with (out_dir / "curation.jsonl").open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "pair_key": list(rec.pair_key),
                "qtype": rec.qtype,
                "verifiable": rec.verifiable,
                "short_answer": rec.short_answer,
                "modality_group": rec.modality_group,
                "verdict": rec.verdict,
                "drop_reason": rec.drop_reason,
            }, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")

    kept = [(pair, rec) for pair, rec in zip(pairs, records) if rec.verdict == "keep"]
    counts = {"kept": len(kept), "total": len(records), "text_only": 0, "text_image": 0}
    handles = {
        "text_only": (out_dir / "text_only.jsonl").open("w", encoding="utf-8"),
        "text_image": (out_dir / "text_image.jsonl").open("w", encoding="utf-8"),
    }
    try:
        for pair, rec in kept:
            record = pair_record(pair)
            record["short_answer"] = rec.short_answer
            record["qtype"] = rec.qtype
            handles[pair.modality].write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
            counts[pair.modality] += 1
    finally:
        for fh in handles.values():
            fh.close()
    return counts
