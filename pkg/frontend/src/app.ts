import * as api from './api.js';
import type { FetchLike } from './api.js';
import { bindKeys } from './keyboard.js';
import { render, type UiActions } from './render.js';
import {
  applySubmitted,
  buildJudgmentBody,
  currentDraft,
  initialState,
  knownVersion,
  nextUnjudged,
  type AppState,
} from './state.js';

const PAGE = 100;

export interface App {
  state: AppState;
  actions: UiActions;
  ready: Promise<void>;
  dispose(): void;
}

export function createApp(root: HTMLElement, fetchImpl: FetchLike, keyTarget: Window | HTMLElement): App {
  const state = initialState();

  const repaint = () => render(root, state, actions);

  const say = (message: string) => {
    state.status = message;
    repaint();
  };

  async function refreshReport(): Promise<void> {
    try {
      state.report = await api.getReport(fetchImpl);
    } catch {
      // metrics strip is best-effort; judging still works without it
    }
  }

  async function select(index: number): Promise<void> {
    if (!state.summaries.length) return;
    const clamped = Math.min(Math.max(index, 0), state.summaries.length - 1);
    state.cursor = clamped;
    try {
      state.detail = await api.getPair(fetchImpl, state.summaries[clamped].key);
      state.status = '';
    } catch (err) {
      state.detail = null;
      state.status = `failed to load pair: ${String(err)}`;
    }
    repaint();
  }

  async function submit(): Promise<void> {
    const detail = state.detail;
    const draft = currentDraft(state);
    if (!detail || !draft) return;
    const body = buildJudgmentBody(draft, knownVersion(detail));
    if (body === null) {
      say('choose accept (a) or reject (x) for the text pairing first');
      return;
    }
    try {
      const reply = await api.postJudgment(fetchImpl, detail.key, body);
      applySubmitted(state, detail.key, reply.version);
      await refreshReport();
      const next = nextUnjudged(state);
      if (next >= 0) {
        await select(next);
        state.status = `saved v${reply.version}`;
        repaint();
      } else {
        say(`saved v${reply.version} — all pairs judged`);
      }
    } catch (err) {
      if (api.isConflict(err)) {
        // someone else judged this pair; reload their verdict, keep our draft
        await select(state.cursor);
        say('judgment conflict: showing the stored version, resubmit to overwrite');
      } else {
        say(`submit failed: ${String(err)}`);
      }
    }
  }

  const actions: UiActions = {
    select(index) {
      void select(index);
    },
    prev() {
      void select(state.cursor - 1);
    },
    next() {
      void select(state.cursor + 1);
    },
    markText(ok) {
      const draft = currentDraft(state);
      if (!draft) return;
      draft.textOk = ok;
      repaint();
    },
    toggleImage(index) {
      const draft = currentDraft(state);
      const detail = state.detail;
      if (!draft || !detail) return;
      const img = detail.images[index];
      if (!img) return;
      draft.visionOk[img.id] = !draft.visionOk[img.id];
      repaint();
    },
    setNote(text) {
      const draft = currentDraft(state);
      if (draft) draft.note = text;
      // no repaint: the input already shows the text and must keep focus
    },
    submit() {
      void submit();
    },
  };

  const ready = (async () => {
    let offset = 0;
    for (;;) {
      const page = await api.listPairs(fetchImpl, offset, PAGE);
      state.summaries.push(...page.pairs);
      state.total = page.total;
      offset += page.pairs.length;
      if (offset >= page.total || page.pairs.length === 0) break;
    }
    await refreshReport();
    if (state.summaries.length) {
      await select(0);
    } else {
      say('no pairs to review');
    }
  })();

  const unbind = bindKeys(keyTarget, actions);
  const dispose = () => {
    unbind();
    root.textContent = '';
  };

  return { state, actions, ready, dispose };
}
