/** DOM rendering. All probabilities shown come verbatim from the latest
 * service response; the rendered order is the response's suggestion order
 * (no client-side re-sort). */

import { InferResponse, Meta, Suggestion } from './api';
import { SessionState, TagStatus } from './state';

export interface ViewHandlers {
  onAddToken(token: string): void;
  onRemoveToken(token: string): void;
  onToggle(condition: number, action: TagStatus): void;
  onRetry(): void;
}

export function formatProbability(p: number): string {
  return p.toFixed(3);
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className = '',
  text = '',
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function tagRow(
  doc: Document,
  name: string,
  index: number,
  probability: number | null,
  status: TagStatus,
  handlers: ViewHandlers,
): HTMLElement {
  const row = el(doc, 'li', `tag-row tag-${status}`);
  row.dataset.condition = String(index);
  row.appendChild(el(doc, 'span', 'tag-name', name));

  const prob = el(doc, 'span', 'tag-prob');
  if (probability !== null) {
    prob.textContent = formatProbability(probability);
    const bar = el(doc, 'span', 'tag-bar');
    bar.style.width = `${Math.round(probability * 100)}%`;
    row.appendChild(bar);
  }
  row.appendChild(prob);

  const actions = el(doc, 'span', 'tag-actions');
  const button = (label: string, action: TagStatus) => {
    const b = el(doc, 'button', `tag-action tag-action-${action}`, label);
    b.addEventListener('click', () => handlers.onToggle(index, action));
    actions.appendChild(b);
  };
  // A rejected tag must be cleared before it can be confirmed (and vice
  // versa), so settled tags only offer "clear".
  if (status === 'clear') {
    button('confirm', 'confirmed');
    button('reject', 'rejected');
  } else {
    button('clear', 'clear');
  }
  row.appendChild(actions);
  return row;
}

export function renderTags(
  container: HTMLElement,
  meta: Meta,
  state: SessionState,
  response: InferResponse | null,
  handlers: ViewHandlers,
): void {
  const doc = container.ownerDocument;
  container.textContent = '';
  const list = el(doc, 'ul', 'tag-list');

  // Confirmed tags pinned at the top.
  for (const i of state.confirmed) {
    const p = response ? response.marginals[i] : null;
    list.appendChild(tagRow(doc, meta.conditions[i], i, p, 'confirmed', handlers));
  }
  // Open suggestions in the service's ranking order.
  const suggestions: Suggestion[] = response ? response.suggestions : [];
  for (const s of suggestions) {
    list.appendChild(
      tagRow(doc, s.condition, s.index, s.probability, 'clear', handlers),
    );
  }
  // Rejected tags greyed out at the bottom.
  for (const i of state.rejected) {
    const p = response ? response.marginals[i] : null;
    list.appendChild(tagRow(doc, meta.conditions[i], i, p, 'rejected', handlers));
  }
  container.appendChild(list);
}

export function renderTokens(
  container: HTMLElement,
  state: SessionState,
  handlers: ViewHandlers,
): void {
  const doc = container.ownerDocument;
  container.textContent = '';
  for (const token of state.tokens) {
    const chip = el(doc, 'span', 'token-chip', token);
    const remove = el(doc, 'button', 'token-remove', '×');
    remove.addEventListener('click', () => handlers.onRemoveToken(token));
    chip.appendChild(remove);
    container.appendChild(chip);
  }
}

export function renderWhatElse(
  container: HTMLElement,
  state: SessionState,
  lastTag: InferResponse | null,
): void {
  const doc = container.ownerDocument;
  container.textContent = '';
  if (state.confirmed.length === 0 || lastTag === null) {
    container.classList.add('hidden');
    return;
  }
  container.classList.remove('hidden');
  container.appendChild(el(doc, 'h2', '', 'What else might be missing?'));
  const list = el(doc, 'ol', 'what-else-list');
  for (const s of lastTag.suggestions.slice(0, 5)) {
    list.appendChild(
      el(doc, 'li', 'what-else-item', `${s.condition} ${formatProbability(s.probability)}`),
    );
  }
  container.appendChild(list);
}

export function renderError(
  container: HTMLElement,
  error: Error | null,
  handlers: ViewHandlers,
): void {
  const doc = container.ownerDocument;
  container.textContent = '';
  if (error === null) {
    container.classList.add('hidden');
    return;
  }
  container.classList.remove('hidden');
  container.appendChild(el(doc, 'span', 'error-message', error.message));
  const retry = el(doc, 'button', 'error-retry', 'retry');
  retry.addEventListener('click', () => handlers.onRetry());
  container.appendChild(retry);
}
