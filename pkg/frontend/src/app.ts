/** Wires the session loop, autocomplete, and views into a page. */

import { ApiClient, Meta } from './api';
import { completeTokens } from './autocomplete';
import {
  InferenceLoop,
  LoopUpdate,
  SessionState,
  TagStatus,
  addToken,
  deserializeSession,
  emptySession,
  removeToken,
  serializeSession,
  toggleTag,
} from './state';
import {
  ViewHandlers,
  renderError,
  renderTags,
  renderTokens,
  renderWhatElse,
} from './view';

export interface AppElements {
  tokenInput: HTMLInputElement;
  tokenChips: HTMLElement;
  completions: HTMLElement;
  tags: HTMLElement;
  whatElse: HTMLElement;
  error: HTMLElement;
  status: HTMLElement;
}

export class App {
  private meta: Meta | null = null;
  private loop: InferenceLoop;
  readonly handlers: ViewHandlers;

  constructor(
    private readonly client: ApiClient,
    private readonly ui: AppElements,
    initial?: SessionState,
  ) {
    this.loop = new InferenceLoop(
      client,
      (update) => this.render(update),
      initial ?? emptySession(),
    );
    this.handlers = {
      onAddToken: (token) => {
        if (this.meta && !this.meta.tokens.includes(token)) {
          this.ui.status.textContent = `unknown token: ${token}`;
          return;
        }
        this.mutate((s) => addToken(s, token));
        this.ui.tokenInput.value = '';
        this.renderCompletions('');
      },
      onRemoveToken: (token) => this.mutate((s) => removeToken(s, token)),
      onToggle: (condition: number, action: TagStatus) =>
        this.mutate((s) => toggleTag(s, condition, action)),
      onRetry: () => void this.loop.refresh(),
    };
    this.ui.tokenInput.addEventListener('input', () =>
      this.renderCompletions(this.ui.tokenInput.value),
    );
    this.ui.tokenInput.addEventListener('keydown', (event) => {
      if ((event as KeyboardEvent).key === 'Enter') {
        this.handlers.onAddToken(this.ui.tokenInput.value.trim());
      }
    });
  }

  async start(): Promise<void> {
    this.meta = await this.client.getMeta();
    await this.loop.refresh();
  }

  getState(): SessionState {
    return this.loop.getState();
  }

  get requestCount(): number {
    return this.loop.requestCount;
  }

  saveSession(): string {
    return serializeSession(this.loop.getState());
  }

  loadSession(serialized: string): Promise<void> {
    return this.loop.setState(deserializeSession(serialized));
  }

  private mutate(change: (state: SessionState) => SessionState): void {
    void this.loop.setState(change(this.loop.getState()));
  }

  private renderCompletions(query: string): void {
    const doc = this.ui.completions.ownerDocument;
    this.ui.completions.textContent = '';
    if (!this.meta) return;
    const options = completeTokens(this.meta.tokens, query, this.loop.getState().tokens);
    for (const token of options) {
      const item = doc.createElement('button');
      item.className = 'completion';
      item.textContent = token;
      item.addEventListener('click', () => this.handlers.onAddToken(token));
      this.ui.completions.appendChild(item);
    }
  }

  private render(update: LoopUpdate): void {
    if (!this.meta) return;
    this.ui.status.textContent = update.pending ? 'thinking…' : '';
    renderTokens(this.ui.tokenChips, update.state, this.handlers);
    renderError(this.ui.error, update.error, this.handlers);
    if (update.pending) return; // keep the last settled tag list on screen
    renderTags(this.ui.tags, this.meta, update.state, update.response, this.handlers);
    renderWhatElse(this.ui.whatElse, update.state, update.lastTag);
  }
}

export function mount(doc: Document, baseUrl = ''): App {
  const byId = (id: string) => doc.getElementById(id) as HTMLElement;
  const app = new App(new ApiClient(baseUrl), {
    tokenInput: byId('token-input') as HTMLInputElement,
    tokenChips: byId('token-chips'),
    completions: byId('completions'),
    tags: byId('tags'),
    whatElse: byId('what-else'),
    error: byId('error-banner'),
    status: byId('status'),
  });
  void app.start();
  return app;
}
