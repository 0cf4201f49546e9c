// Thin typed client over the teacher service; fetch is injectable so
// tests can run without a server.

import { CandidateSummary, RetrainReport } from "./logic.js";

export type FetchFn = typeof fetch;

export interface StatusDoc {
    agent_mode: string;
    steps_taken: number;
    pending_candidates: number;
    model_hashes: Record<string, string>;
}

export class ApiError extends Error {
    constructor(public status: number, message: string) {
        super(message);
    }
}

async function expectJson<T>(resp: Response): Promise<T> {
    if (!resp.ok) {
        let detail = resp.statusText;
        try {
            const doc = await resp.json();
            if (doc && doc.detail) detail = String(doc.detail);
        } catch {
            // non-JSON error body; keep the status text
        }
        throw new ApiError(resp.status, detail);
    }
    return resp.json() as Promise<T>;
}

export async function loadCandidates(fetchFn: FetchFn = fetch): Promise<CandidateSummary[]> {
    return expectJson(await fetchFn("/api/candidates"));
}

export async function submitRanking(
    sessionId: string, ordering: string[], fetchFn: FetchFn = fetch,
): Promise<unknown> {
    return expectJson(await fetchFn("/api/rankings", {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ session_id: sessionId, ordering }),
    }));
}

export async function triggerRetrain(fetchFn: FetchFn = fetch): Promise<RetrainReport> {
    return expectJson(await fetchFn("/api/retrain", { method: "POST" }));
}

export async function loadStatus(fetchFn: FetchFn = fetch): Promise<StatusDoc> {
    return expectJson(await fetchFn("/api/status"));
}
