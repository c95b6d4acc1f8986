// Typed client for the collect service HTTP API. The UI talks in presentation
// sides (left/right) only; canonical A/B slots are the server's business.

export interface RaterProfile {
  rater_id: string;
  age_band: string;
  gender: string;
  familiarity: string;
}

export interface SessionInfo {
  session_id: string;
  rater_id: string;
  session_size: number;
}

export interface Trial {
  pair_id: string;
  left_audio: string;
  right_audio: string;
  trial_number: number;
  session_size: number;
  progress: string;
}

export interface JudgmentAck {
  status: string;
  choice: string;
  session_status: string;
}

export type Side = 'left' | 'right';

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

/** 409 on GET next means the trial list is exhausted, not a protocol error. */
export function isSessionComplete(err: unknown): boolean {
  return err instanceof ApiError && err.status === 409 && /complete/i.test(err.message);
}

type FetchLike = typeof fetch;

export class CollectApi {
  constructor(private baseUrl: string, private fetchFn: FetchLike = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const text = await res.text();
    if (!res.ok) {
      let message = text;
      try {
        message = (JSON.parse(text) as { error?: string }).error ?? text;
      } catch {
        // non-JSON error body; keep the raw text
      }
      throw new ApiError(res.status, message);
    }
    return JSON.parse(text) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  createSession(profile: RaterProfile): Promise<SessionInfo> {
    return this.post<SessionInfo>('/sessions', profile);
  }

  nextTrial(sessionId: string): Promise<Trial> {
    return this.request<Trial>(`/sessions/${encodeURIComponent(sessionId)}/next`);
  }

  submitJudgment(sessionId: string, pairId: string, side: Side): Promise<JudgmentAck> {
    return this.post<JudgmentAck>(`/sessions/${encodeURIComponent(sessionId)}/judgments`, {
      pair_id: pairId,
      side_chosen: side,
    });
  }

  submitDescription(sessionId: string, text: string): Promise<{ status: string }> {
    return this.post<{ status: string }>(
      `/sessions/${encodeURIComponent(sessionId)}/description`,
      { text },
    );
  }

  audioUrl(uttId: string): string {
    return `${this.baseUrl}/audio/${encodeURIComponent(uttId)}`;
  }
}
