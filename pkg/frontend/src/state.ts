/** Session state and the stale-response-safe inference loop.
 *
 * The client always resubmits the full evidence; each state mutation bumps a
 * revision counter and at most one response per revision is accepted, so a
 * slow response for an old revision can never overwrite a newer render.
 */

import { ApiClient, InferRequest, InferResponse } from './api';

export type TagStatus = 'confirmed' | 'rejected' | 'clear';

export interface SessionState {
  tokens: string[];
  confirmed: number[];
  rejected: number[];
  seed: number;
}

export function emptySession(seed = 0): SessionState {
  return { tokens: [], confirmed: [], rejected: [], seed };
}

function sortedUnique(values: number[]): number[] {
  return [...new Set(values)].sort((a, b) => a - b);
}

export function addToken(state: SessionState, token: string): SessionState {
  if (state.tokens.includes(token)) return state;
  return { ...state, tokens: [...state.tokens, token] };
}

export function removeToken(state: SessionState, token: string): SessionState {
  if (!state.tokens.includes(token)) return state;
  return { ...state, tokens: state.tokens.filter((t) => t !== token) };
}

export function tagStatus(state: SessionState, condition: number): TagStatus {
  if (state.confirmed.includes(condition)) return 'confirmed';
  if (state.rejected.includes(condition)) return 'rejected';
  return 'clear';
}

/** Set one tag's status. A tag is never in both lists: confirming removes a
 * rejection and vice versa, so the service's conflict check cannot trip. */
export function toggleTag(
  state: SessionState,
  condition: number,
  action: TagStatus,
): SessionState {
  const confirmed = state.confirmed.filter((c) => c !== condition);
  const rejected = state.rejected.filter((c) => c !== condition);
  if (action === 'confirmed') confirmed.push(condition);
  if (action === 'rejected') rejected.push(condition);
  return {
    ...state,
    confirmed: sortedUnique(confirmed),
    rejected: sortedUnique(rejected),
  };
}

export function toRequest(state: SessionState): InferRequest {
  return {
    tokens: [...state.tokens],
    confirmed: [...state.confirmed],
    rejected: [...state.rejected],
    seed: state.seed,
  };
}

/** Serialize to a URL-fragment-safe string for shareable sessions. */
export function serializeSession(state: SessionState): string {
  const params = new URLSearchParams();
  if (state.tokens.length) params.set('t', state.tokens.join(','));
  if (state.confirmed.length) params.set('c', state.confirmed.join(','));
  if (state.rejected.length) params.set('r', state.rejected.join(','));
  params.set('s', String(state.seed));
  return params.toString();
}

export function deserializeSession(serialized: string): SessionState {
  const params = new URLSearchParams(serialized);
  const ints = (key: string) =>
    (params.get(key) ?? '')
      .split(',')
      .filter((v) => v !== '')
      .map((v) => Number.parseInt(v, 10));
  return {
    tokens: (params.get('t') ?? '').split(',').filter((v) => v !== ''),
    confirmed: sortedUnique(ints('c')),
    rejected: sortedUnique(ints('r')),
    seed: Number.parseInt(params.get('s') ?? '0', 10),
  };
}

export interface LoopUpdate {
  state: SessionState;
  response: InferResponse | null;
  lastTag: InferResponse | null;
  error: Error | null;
  pending: boolean;
}

/** Owns the current session and fans out renders; discards stale responses. */
export class InferenceLoop {
  private state: SessionState;
  private revision = 0;
  private renderedRevision = -1;
  requestCount = 0;

  constructor(
    private readonly client: ApiClient,
    private readonly onUpdate: (update: LoopUpdate) => void,
    initial: SessionState = emptySession(),
  ) {
    this.state = initial;
  }

  getState(): SessionState {
    return this.state;
  }

  setState(next: SessionState): Promise<void> {
    this.state = next;
    return this.refresh();
  }

  /** Re-query the service for the current state. Exactly one posterior request
   * per call; a last-tag request rides along when >= 1 tag is confirmed. */
  async refresh(): Promise<void> {
    const revision = ++this.revision;
    const state = this.state;
    this.onUpdate({ state, response: null, lastTag: null, error: null, pending: true });
    this.requestCount += 1;
    try {
      const request = toRequest(state);
      const posteriorPromise = this.client.postPosterior(request);
      const lastTagPromise =
        state.confirmed.length > 0 ? this.client.postLastTag(request) : null;
      const response = await posteriorPromise;
      const lastTag = lastTagPromise ? await lastTagPromise.catch(() => null) : null;
      if (revision < this.revision || revision <= this.renderedRevision) {
        return; // stale: a newer request was issued or already rendered
      }
      this.renderedRevision = revision;
      this.onUpdate({ state, response, lastTag, error: null, pending: false });
    } catch (err) {
      if (revision < this.revision || revision <= this.renderedRevision) return;
      this.renderedRevision = revision;
      this.onUpdate({
        state,
        response: null,
        lastTag: null,
        error: err instanceof Error ? err : new Error(String(err)),
        pending: false,
      });
    }
  }
}
