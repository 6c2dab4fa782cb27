/**
 * Typed client for the review service. Every UI read and write goes through
 * here; the UI never computes ratings, metrics, or queue order itself.
 */

export interface TagInfo {
  tag_id: number;
  name: string;
  itd: string;
}

export interface PendingPair {
  i: number;
  j: number;
  name_i: string;
  name_j: string;
  itd_i: string;
  itd_j: string;
  model_rating: number | null;
  prior_sme_rating: number | null;
}

export type RatingState = 'confirmed' | 'overridden' | 'newly_rated';

export interface RatingReply {
  state: RatingState;
  i: number;
  j: number;
}

export interface JobStatus {
  job_id: number;
  kind: string;
  phase: 'queued' | 'running' | 'done' | 'failed';
  progress: number;
  result_round: number | null;
  error: string | null;
}

export interface RoundPoint {
  round: number;
  emr: number;
  ap: number;
  ar: number;
  p_at_1: number;
}

export interface LsmCell {
  i: number;
  j: number;
  rating: number | null;
  state: string;
  round: number;
}

export interface LsmView {
  n: number;
  cells: LsmCell[];
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = 'ApiError';
  }
}

async function parseDetail(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (body && typeof body.detail === 'string') return body.detail;
  } catch {
    // non-JSON error body; fall through
  }
  return `HTTP ${res.status}`;
}

export class Client {
  constructor(private base = '') {}

  private async go<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.base + path, init);
    if (!res.ok) throw new ApiError(res.status, await parseDetail(res));
    return res.json() as Promise<T>;
  }

  tags(): Promise<TagInfo[]> {
    return this.go('/api/tags');
  }

  lsm(): Promise<LsmView> {
    return this.go('/api/lsm');
  }

  pending(): Promise<PendingPair[]> {
    return this.go('/api/pairs/pending');
  }

  submitRating(i: number, j: number, rating: number, nonce: string): Promise<RatingReply> {
    return this.go('/api/pairs/rating', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ i, j, rating, nonce }),
    });
  }

  startIteration(): Promise<JobStatus> {
    return this.go('/api/iterations', { method: 'POST' });
  }

  currentIteration(): Promise<JobStatus> {
    return this.go('/api/iterations/current');
  }

  history(): Promise<RoundPoint[]> {
    return this.go('/api/metrics/history');
  }
}

export function freshNonce(): string {
  const c = globalThis.crypto as Crypto | undefined;
  if (c && typeof c.randomUUID === 'function') return c.randomUUID();
  return `n-${Date.now()}-${Math.random().toString(36).slice(2)}`;
}
