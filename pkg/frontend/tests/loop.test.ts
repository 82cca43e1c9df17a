import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { InferenceLoop, LoopUpdate, addToken, emptySession, toggleTag } from '../src/state';
import { makeMockServer } from './helpers/mockService';

function settled(updates: LoopUpdate[]): LoopUpdate[] {
  return updates.filter((u) => !u.pending);
}

function makeLoop() {
  const server = makeMockServer();
  const updates: LoopUpdate[] = [];
  const loop = new InferenceLoop(
    new ApiClient('', server.fetch),
    (u) => updates.push(u),
  );
  return { server, updates, loop };
}

describe('InferenceLoop', () => {
  it('issues exactly one posterior request per state change', async () => {
    const { server, loop } = makeLoop();
    await loop.setState(addToken(loop.getState(), 'cough'));
    await loop.setState(toggleTag(loop.getState(), 0, 'confirmed'));
    const posteriorCalls = server.calls.filter((c) => c.path.endsWith('/api/posterior'));
    expect(posteriorCalls).toHaveLength(2);
    expect(loop.requestCount).toBe(2);
  });

  it('adds a last-tag request only when a tag is confirmed', async () => {
    const { server, loop } = makeLoop();
    await loop.setState(addToken(loop.getState(), 'cough'));
    expect(server.calls.some((c) => c.path.endsWith('/api/last-tag'))).toBe(false);
    await loop.setState(toggleTag(loop.getState(), 0, 'confirmed'));
    expect(server.calls.filter((c) => c.path.endsWith('/api/last-tag'))).toHaveLength(1);
  });

  it('discards a slow stale response after a rapid double-toggle', async () => {
    const { server, updates, loop } = makeLoop();
    // First request is slow, second fast: the slow response arrives last but
    // belongs to the older revision and must not overwrite the final render.
    server.delays.push(50, 0);
    const first = loop.setState(toggleTag(emptySession(), 1, 'confirmed'));
    const second = loop.setState(toggleTag(loop.getState(), 1, 'clear'));
    await Promise.all([first, second]);
    await new Promise((resolve) => setTimeout(resolve, 80));
    const done = settled(updates);
    expect(done).toHaveLength(1);
    expect(done[0].state.confirmed).toEqual([]);
    expect(done[0].response?.marginals[1]).not.toBe(1.0);
  });

  it('ignores a stale response even when it would arrive after a fast newer one', async () => {
    const { updates, loop } = makeLoop();
    const slowFirst = loop.setState(addToken(emptySession(), 'cough'));
    await loop.setState(addToken(loop.getState(), 'fever'));
    await slowFirst;
    const done = settled(updates);
    expect(done).toHaveLength(1);
    expect(done[0].state.tokens).toEqual(['cough', 'fever']);
  });

  it('reports service errors with the envelope message and recovers on retry', async () => {
    const { updates, loop } = makeLoop();
    const badClient = new ApiClient('', async () =>
      new Response(JSON.stringify({ code: 'model_not_loaded', message: 'no model is loaded' }), {
        status: 503,
      }),
    );
    const failing = new InferenceLoop(badClient, (u) => updates.push(u));
    await failing.refresh();
    const done = settled(updates);
    expect(done).toHaveLength(1);
    expect(done[0].error?.message).toBe('no model is loaded');
    expect(done[0].response).toBeNull();

    await loop.refresh();
    const recovered = settled(updates);
    expect(recovered[recovered.length - 1].error).toBeNull();
  });

  it('confirm then clear returns the identical response (stateless determinism)', async () => {
    const { updates, loop } = makeLoop();
    await loop.setState(addToken(emptySession(), 'cough'));
    const before = settled(updates)[0].response;
    await loop.setState(toggleTag(loop.getState(), 0, 'confirmed'));
    await loop.setState(toggleTag(loop.getState(), 0, 'clear'));
    const after = settled(updates)[2].response;
    expect(after).toEqual(before);
  });
});
