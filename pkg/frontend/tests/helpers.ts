// In-memory stand-in for the review server, recording every request.

import type { FetchLike } from '../src/api.js';
import type { PairDetail, PairSummary, Report } from '../src/types.js';

export interface Fixture {
  summaries: PairSummary[];
  details: Record<string, PairDetail>;
  report: Report;
}

export function fixture(): Fixture {
  const summaries: PairSummary[] = [
    {
      key: 'k1', chapter: 'Ch 1', label: '1', doc: 'doc_a',
      modality: 'text_only', partial: false, n_images: 0, judged: false,
    },
    {
      key: 'k2', chapter: 'Ch 1', label: '2', doc: 'doc_a',
      modality: 'text_image', partial: false, n_images: 1, judged: false,
    },
  ];
  const details: Record<string, PairDetail> = {
    k1: {
      key: 'k1', doc: 'doc_a', chapter: 'Ch 1', label: '1',
      question: [{ type: 'text', value: 'What is 2+2?' }],
      answer: '4',
      solution: [{ type: 'text', value: 'Count on fingers.' }],
      modality: 'text_only', partial: false, images: [], judgment: null,
    },
    k2: {
      key: 'k2', doc: 'doc_a', chapter: 'Ch 1', label: '2',
      question: [
        { type: 'text', value: 'Name the shape.' },
        { type: 'image', value: 'images/fig.png' },
      ],
      answer: 'triangle',
      solution: [],
      modality: 'text_image', partial: false,
      images: [{
        id: 'question:images/fig.png', slot: 'question',
        ref: 'images/fig.png', url: '/assets/doc_a/images/fig.png',
      }],
      judgment: null,
    },
  };
  const side = { tp: 0, fp: 0, fn: 0, precision: null, recall: null, f1: 0, judged: 0, total: 2 };
  return { summaries, details, report: { text: { ...side }, vision: { ...side, total: 1 } } };
}

export interface RecordedPost {
  path: string;
  body: string;
}

export interface FakeServer {
  fetch: FetchLike;
  posts: RecordedPost[];
  /** arm a one-time 409 for the next judgment POST */
  conflictOnce: (current: number) => void;
}

function json(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

export function fakeServer(fix: Fixture): FakeServer {
  const posts: RecordedPost[] = [];
  let pendingConflict: number | null = null;

  const fetchImpl: FetchLike = async (path, init) => {
    const method = init?.method ?? 'GET';
    if (method === 'GET' && path.startsWith('/pairs?')) {
      return json(200, {
        total: fix.summaries.length, offset: 0, limit: 100, pairs: fix.summaries,
      });
    }
    if (method === 'GET' && path === '/report') {
      return json(200, fix.report);
    }
    const judgmentMatch = path.match(/^\/pairs\/([^/]+)\/judgment$/);
    if (method === 'POST' && judgmentMatch) {
      const key = judgmentMatch[1];
      const body = String(init?.body ?? '');
      posts.push({ path, body });
      if (pendingConflict !== null) {
        const current = pendingConflict;
        pendingConflict = null;
        return json(409, { error: 'stale version', current });
      }
      const detail = fix.details[key];
      if (!detail) return json(404, { error: 'unknown pair' });
      const claimed = JSON.parse(body) as { version: number };
      const version = claimed.version + 1;
      detail.judgment = { ...(JSON.parse(body) as object), version } as PairDetail['judgment'];
      const summary = fix.summaries.find((s) => s.key === key);
      if (summary) summary.judged = true;
      return json(200, { version });
    }
    const detailMatch = path.match(/^\/pairs\/([^/]+)$/);
    if (method === 'GET' && detailMatch) {
      const detail = fix.details[detailMatch[1]];
      return detail ? json(200, detail) : json(404, { error: 'unknown pair' });
    }
    return json(404, { error: 'not found' });
  };

  return {
    fetch: fetchImpl,
    posts,
    conflictOnce: (current) => {
      pendingConflict = current;
    },
  };
}

/** Drain the microtask/timer queue so chained awaits inside the app settle. */
export async function flush(rounds = 6): Promise<void> {
  for (let i = 0; i < rounds; i++) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}

export function pressKey(target: HTMLElement, key: string, init: KeyboardEventInit = {}): void {
  target.dispatchEvent(new KeyboardEvent('keydown', { key, bubbles: true, ...init }));
}
