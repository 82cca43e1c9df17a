/** Typed client for the tag-suggestion service HTTP API. */

export interface Meta {
  conditions: string[];
  n_features: number;
  tokens: string[];
  model_version: string;
  sampler_defaults: { chains: number; burn_in: number; kept: number };
}

export interface Suggestion {
  index: number;
  condition: string;
  probability: number;
}

export interface InferResponse {
  marginals: number[];
  suggestions: Suggestion[];
  confirmed: number[];
  rejected: number[];
  model_version: string;
  diagnostics: Record<string, unknown>;
}

export interface InferRequest {
  tokens: string[];
  confirmed: number[];
  rejected: number[];
  seed: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export type FetchLike = typeof fetch;

async function parseJson(response: Response): Promise<unknown> {
  if (!response.ok) {
    let code = 'http_error';
    let message = `request failed with status ${response.status}`;
    try {
      const body = (await response.json()) as { code?: string; message?: string };
      if (body.code) code = body.code;
      if (body.message) message = body.message;
    } catch {
      // non-JSON error body; keep the generic message
    }
    throw new ApiError(response.status, code, message);
  }
  return response.json();
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  async getMeta(): Promise<Meta> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/meta`);
    return (await parseJson(response)) as Meta;
  }

  async postPosterior(request: InferRequest): Promise<InferResponse> {
    return this.post('/api/posterior', request);
  }

  async postLastTag(request: InferRequest): Promise<InferResponse> {
    return this.post('/api/last-tag', request);
  }

  private async post(path: string, request: InferRequest): Promise<InferResponse> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(request),
    });
    return (await parseJson(response)) as InferResponse;
  }
}
