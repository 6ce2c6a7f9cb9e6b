import type { GroupSummary, TaskPayload } from './types.js';
import type { RankingSubmission } from './schema.js';

export interface ApiConfig {
  baseUrl: string;
  retries?: number;
  retryDelayMs?: number;
  fetchFn?: typeof fetch;
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

const RETRIABLE_STATUS = new Set([502, 503, 504]);

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function detailOf(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === 'string') return body.detail;
    return JSON.stringify(body.detail ?? body);
  } catch {
    return response.statusText || `HTTP ${response.status}`;
  }
}

/**
 * Thin client for the annotation service.
 *
 * Network-level failures and gateway errors are retried with a short delay.
 * Submissions carry an idempotency key: if a retry comes back 409 after an
 * earlier attempt may have reached the server, the submission is treated as
 * delivered rather than surfaced as a conflict.
 */
export class AnnotationApi {
  private readonly baseUrl: string;
  private readonly retries: number;
  private readonly retryDelayMs: number;
  private readonly fetchFn: typeof fetch;
  private readonly delivered = new Set<string>();

  constructor(config: ApiConfig) {
    this.baseUrl = config.baseUrl.replace(/\/+$/, '');
    this.retries = config.retries ?? 2;
    this.retryDelayMs = config.retryDelayMs ?? 250;
    this.fetchFn = config.fetchFn ?? fetch;
  }

  imageUrl(ref: string): string {
    return `${this.baseUrl}/images/${encodeURI(ref)}`;
  }

  async nextTask(annotatorId: string): Promise<TaskPayload | null> {
    const response = await this.request(
      `/tasks/next?annotator=${encodeURIComponent(annotatorId)}`,
      { method: 'GET' },
    );
    if (response.status === 204) return null;
    if (!response.ok) throw new ApiError(await detailOf(response), response.status);
    return (await response.json()) as TaskPayload;
  }

  async submitRanking(
    submission: RankingSubmission,
    idempotencyKey: string,
  ): Promise<GroupSummary> {
    let maybeDelivered = this.delivered.has(idempotencyKey);
    let lastFailure: unknown = null;

    for (let attempt = 0; attempt <= this.retries; attempt++) {
      if (attempt > 0) await sleep(this.retryDelayMs * attempt);
      let response: Response;
      try {
        response = await this.fetchFn(`${this.baseUrl}/rankings`, {
          method: 'POST',
          headers: {
            'Content-Type': 'application/json',
            'Idempotency-Key': idempotencyKey,
          },
          body: JSON.stringify(submission),
        });
      } catch (failure) {
        // The request may have reached the server before the connection
        // died, so a later conflict for this key means "already recorded".
        maybeDelivered = true;
        lastFailure = failure;
        continue;
      }

      if (response.ok) {
        this.delivered.add(idempotencyKey);
        return (await response.json()) as GroupSummary;
      }
      if (response.status === 409 && maybeDelivered) {
        this.delivered.add(idempotencyKey);
        return { group_id: submission.group_id, status: 'recorded' } as GroupSummary;
      }
      if (RETRIABLE_STATUS.has(response.status) && attempt < this.retries) {
        continue;
      }
      throw new ApiError(await detailOf(response), response.status);
    }
    throw new ApiError(
      `submission failed after ${this.retries + 1} attempts: ${String(lastFailure)}`,
      0,
    );
  }

  async groupSummary(groupId: string): Promise<GroupSummary> {
    const response = await this.request(`/groups/${encodeURIComponent(groupId)}`, {
      method: 'GET',
    });
    if (!response.ok) throw new ApiError(await detailOf(response), response.status);
    return (await response.json()) as GroupSummary;
  }

  private async request(path: string, init: RequestInit): Promise<Response> {
    let lastFailure: unknown = null;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      if (attempt > 0) await sleep(this.retryDelayMs * attempt);
      try {
        const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
        if (RETRIABLE_STATUS.has(response.status) && attempt < this.retries) {
          continue;
        }
        return response;
      } catch (failure) {
        lastFailure = failure;
      }
    }
    throw new ApiError(
      `request failed after ${this.retries + 1} attempts: ${String(lastFailure)}`,
      0,
    );
  }
}
