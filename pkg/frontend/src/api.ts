import type { PairDetail, PairListing, Report } from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  status: number;
  payload: unknown;

  constructor(status: number, payload: unknown) {
    super(`request failed with ${status}`);
    this.status = status;
    this.payload = payload;
  }
}

/** True when a submit was rejected because someone else judged the pair first. */
export function isConflict(err: unknown): err is ApiError & { payload: { current: number } } {
  return err instanceof ApiError && err.status === 409;
}

async function request<T>(fetchImpl: FetchLike, path: string, init?: RequestInit): Promise<T> {
  const r = await fetchImpl(path, init);
  let payload: unknown = null;
  try {
    payload = await r.json();
  } catch {
    // non-JSON body; keep null
  }
  if (!r.ok) throw new ApiError(r.status, payload);
  return payload as T;
}

export function listPairs(fetchImpl: FetchLike, offset: number, limit: number): Promise<PairListing> {
  return request(fetchImpl, `/pairs?offset=${offset}&limit=${limit}`);
}

export function getPair(fetchImpl: FetchLike, key: string): Promise<PairDetail> {
  return request(fetchImpl, `/pairs/${key}`);
}

export function getReport(fetchImpl: FetchLike): Promise<Report> {
  return request(fetchImpl, '/report');
}

export function postJudgment(
  fetchImpl: FetchLike,
  key: string,
  body: string,
): Promise<{ version: number }> {
  // callers pass the body pre-serialized so every submit path sends
  // byte-identical JSON for the same draft
  return request(fetchImpl, `/pairs/${key}/judgment`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body,
  });
}
