// Typed client for the phenoloop service. Mutations carry idempotency keys
// so a retried request lands exactly once; network failures and 5xx retry
// with backoff, 4xx conflicts surface to the caller.

import type {
  ExplanationResponse,
  MetricsResponse,
  QueueResponse,
  RunDescriptor,
  TopFeaturesResponse,
  Verdict,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public requiredState?: string,
  ) {
    super(message);
  }
}

export interface ApiOptions {
  fetchFn?: typeof fetch;
  retries?: number;
  retryDelayMs?: number;
  keyFn?: () => string;
}

let keyCounter = 0;
const defaultKey = () => `ui-${Date.now().toString(36)}-${(keyCounter++).toString(36)}`;

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class ApiClient {
  private fetchFn: typeof fetch;
  private retries: number;
  private retryDelayMs: number;
  private keyFn: () => string;

  constructor(public baseUrl: string = "", options: ApiOptions = {}) {
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
    this.retries = options.retries ?? 2;
    this.retryDelayMs = options.retryDelayMs ?? 400;
    this.keyFn = options.keyFn ?? defaultKey;
  }

  private async request<T>(
    method: "GET" | "POST",
    path: string,
    body?: unknown,
    idempotencyKey?: string,
  ): Promise<T> {
    let lastError: unknown = null;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      if (attempt > 0) await sleep(this.retryDelayMs * attempt);
      let response: Response;
      try {
        response = await this.fetchFn(this.baseUrl + path, {
          method,
          headers: {
            ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
            ...(idempotencyKey ? { "Idempotency-Key": idempotencyKey } : {}),
          },
          body: body !== undefined ? JSON.stringify(body) : undefined,
        });
      } catch (err) {
        lastError = err; // network failure: retry with the same key
        continue;
      }
      if (response.ok) {
        return (await response.json()) as T;
      }
      let payload: { code?: string; message?: string; required_state?: string } = {};
      try {
        payload = await response.json();
      } catch {
        /* non-JSON error body */
      }
      const error = new ApiError(
        response.status,
        payload.code ?? "error",
        payload.message ?? response.statusText,
        payload.required_state,
      );
      if (response.status >= 500) {
        lastError = error;
        continue;
      }
      throw error;
    }
    throw lastError instanceof Error
      ? lastError
      : new ApiError(0, "network", "service unreachable");
  }

  createRun(disease: string, corpus: string, config: Record<string, unknown> = {}) {
    return this.request<RunDescriptor>("POST", "/runs", {
      disease,
      corpus,
      config,
      idempotency_key: this.keyFn(),
    });
  }

  getRun(runId: string) {
    return this.request<RunDescriptor>("GET", `/runs/${runId}`);
  }

  nextQueueItem(runId: string, annotator: string, skip: string[] = []) {
    const params = new URLSearchParams({ annotator });
    if (skip.length) params.set("skip", skip.join(","));
    return this.request<QueueResponse>("GET", `/runs/${runId}/queue/next?${params}`);
  }

  postLabel(runId: string, admissionId: string, annotator: string, label: boolean) {
    return this.request<{ admission_id: string; consensus: boolean | null }>(
      "POST",
      `/runs/${runId}/labels`,
      { admission_id: admissionId, annotator, label },
      this.keyFn(),
    );
  }

  getTopFeatures(runId: string, m: number) {
    return this.request<TopFeaturesResponse>("GET", `/runs/${runId}/features/top?m=${m}`);
  }

  postVerdicts(runId: string, verdicts: Record<string, Verdict>, reviewer: string) {
    return this.request<{ accepted: number; mask_size: number }>(
      "POST",
      `/runs/${runId}/features/verdicts`,
      { verdicts, reviewer },
      this.keyFn(),
    );
  }

  triggerIterate(runId: string) {
    return this.request<{ accepted: boolean; job: string }>(
      "POST",
      `/runs/${runId}/iterate`,
      undefined,
      this.keyFn(),
    );
  }

  getMetrics(runId: string) {
    return this.request<MetricsResponse>("GET", `/runs/${runId}/metrics`);
  }

  getExplanation(runId: string, admissionId: string) {
    return this.request<ExplanationResponse>(
      "GET",
      `/runs/${runId}/explanations/${admissionId}`,
    );
  }
}
