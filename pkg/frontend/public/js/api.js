// Typed client for the collect service HTTP API. The UI talks in presentation
// sides (left/right) only; canonical A/B slots are the server's business.
export class ApiError extends Error {
    constructor(status, message) {
        super(message);
        this.status = status;
        this.name = 'ApiError';
    }
}
/** 409 on GET next means the trial list is exhausted, not a protocol error. */
export function isSessionComplete(err) {
    return err instanceof ApiError && err.status === 409 && /complete/i.test(err.message);
}
export class CollectApi {
    constructor(baseUrl, fetchFn = fetch) {
        this.baseUrl = baseUrl;
        this.fetchFn = fetchFn;
    }
    async request(path, init) {
        const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
        const text = await res.text();
        if (!res.ok) {
            let message = text;
            try {
                message = JSON.parse(text).error ?? text;
            }
            catch {
                // non-JSON error body; keep the raw text
            }
            throw new ApiError(res.status, message);
        }
        return JSON.parse(text);
    }
    post(path, body) {
        return this.request(path, {
            method: 'POST',
            headers: { 'Content-Type': 'application/json' },
            body: JSON.stringify(body),
        });
    }
    createSession(profile) {
        return this.post('/sessions', profile);
    }
    nextTrial(sessionId) {
        return this.request(`/sessions/${encodeURIComponent(sessionId)}/next`);
    }
    submitJudgment(sessionId, pairId, side) {
        return this.post(`/sessions/${encodeURIComponent(sessionId)}/judgments`, {
            pair_id: pairId,
            side_chosen: side,
        });
    }
    submitDescription(sessionId, text) {
        return this.post(`/sessions/${encodeURIComponent(sessionId)}/description`, { text });
    }
    audioUrl(uttId) {
        return `${this.baseUrl}/audio/${encodeURIComponent(uttId)}`;
    }
}
