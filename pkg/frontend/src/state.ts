import type { Judgment, PairDetail, PairSummary, Report } from './types.js';

/**
 * A draft judgment being edited. textOk starts undecided so a reviewer can
 * never submit an implicit verdict; image verdicts start accepted because
 * placements are right far more often than not and each one stays a single
 * keystroke to flip.
 */
export interface Draft {
  textOk: boolean | null;
  visionOk: Record<string, boolean>;
  note: string;
}

export interface AppState {
  summaries: PairSummary[];
  total: number;
  cursor: number;
  detail: PairDetail | null;
  drafts: Map<string, Draft>;
  report: Report | null;
  status: string;
}

export function initialState(): AppState {
  return {
    summaries: [],
    total: 0,
    cursor: 0,
    detail: null,
    drafts: new Map(),
    report: null,
    status: '',
  };
}

export function draftFromJudgment(detail: PairDetail): Draft {
  const j = detail.judgment;
  const visionOk: Record<string, boolean> = {};
  for (const img of detail.images) {
    visionOk[img.id] = j ? (j.vision_ok[img.id] ?? true) : true;
  }
  return {
    textOk: j ? j.text_ok : null,
    visionOk,
    note: j ? j.note : '',
  };
}

/** The draft for the current pair, created on first access. */
export function currentDraft(state: AppState): Draft | null {
  if (!state.detail) return null;
  let draft = state.drafts.get(state.detail.key);
  if (!draft) {
    draft = draftFromJudgment(state.detail);
    state.drafts.set(state.detail.key, draft);
  }
  return draft;
}

export function knownVersion(detail: PairDetail): number {
  return detail.judgment ? detail.judgment.version : 0;
}

/**
 * Serialize a draft into the POST body. This is the only place a judgment
 * request is built, so keyboard and pointer flows cannot diverge. Returns
 * null while the text verdict is still undecided.
 */
export function buildJudgmentBody(draft: Draft, version: number): string | null {
  if (draft.textOk === null) return null;
  const body: Judgment = {
    text_ok: draft.textOk,
    vision_ok: draft.visionOk,
    note: draft.note,
    version,
  };
  return JSON.stringify(body);
}

export function applySubmitted(state: AppState, key: string, version: number): void {
  if (state.detail && state.detail.key === key) {
    const draft = state.drafts.get(key);
    if (draft && draft.textOk !== null) {
      state.detail.judgment = {
        text_ok: draft.textOk,
        vision_ok: { ...draft.visionOk },
        note: draft.note,
        version,
      };
    }
  }
  const summary = state.summaries.find((s) => s.key === key);
  if (summary) summary.judged = true;
}

/** Index of the next unjudged pair after the cursor, wrapping; -1 when done. */
export function nextUnjudged(state: AppState): number {
  const n = state.summaries.length;
  for (let step = 1; step <= n; step++) {
    const i = (state.cursor + step) % n;
    if (!state.summaries[i].judged) return i;
  }
  return -1;
}

export function progress(state: AppState): { judged: number; total: number } {
  return {
    judged: state.summaries.filter((s) => s.judged).length,
    total: state.summaries.length,
  };
}
