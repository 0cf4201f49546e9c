// Pure state and helpers for the ranking board. Everything here is a
// function of server responses plus local rank assignments, so a hard
// refresh rebuilds the exact same view from the API.

export interface CandidateSummary {
    id: string;
    horizon: number;
    frame_count: number;
    created_at: number;
    status: string;
}

export interface CandidateView {
    id: string;
    frameCount: number;
    position: number;          // current flip-book frame
    rank: number | null;       // assigned slot, 0 = best
}

export interface RetrainReport {
    pairs_used: number;
    heldout_accuracy: number;
}

export function frameUrl(id: string, k: number): string {
    return `/api/candidates/${id}/frame/${k}`;
}

export function buildBoard(candidates: CandidateSummary[]): CandidateView[] {
    return candidates
        .filter((c) => c.status === "pending")
        .map((c) => ({ id: c.id, frameCount: c.frame_count, position: 0, rank: null }));
}

// Assign `rank` to candidate `id`. If another card already holds that
// rank, the two swap; assigning null clears the slot.
export function assignRank(
    board: CandidateView[], id: string, rank: number | null,
): CandidateView[] {
    const current = board.find((c) => c.id === id);
    if (!current) return board;
    const prev = current.rank;
    return board.map((c) => {
        if (c.id === id) return { ...c, rank };
        if (rank !== null && c.rank === rank) return { ...c, rank: prev };
        return c;
    });
}

export function submissionReady(board: CandidateView[]): boolean {
    if (board.length < 2) return false;
    const ranks = board.map((c) => c.rank);
    if (ranks.some((r) => r === null)) return false;
    return new Set(ranks).size === board.length;
}

// Ids best-to-worst; only valid when submissionReady.
export function orderingOf(board: CandidateView[]): string[] {
    return [...board]
        .sort((a, b) => (a.rank ?? 0) - (b.rank ?? 0))
        .map((c) => c.id);
}

export function expectedPairCount(n: number): number {
    return (n * (n - 1)) / 2;
}

export function advanceFrame(position: number, frameCount: number): number {
    if (frameCount <= 0) return 0;
    return (position + 1) % frameCount;
}

export function formatReport(report: RetrainReport): string {
    const pct = (report.heldout_accuracy * 100).toFixed(1);
    return `trained on ${report.pairs_used} pairs — held-out accuracy ${pct}%`;
}

export function newSessionId(now: number, entropy: number): string {
    return `session-${now.toString(36)}-${Math.floor(entropy * 1e9).toString(36)}`;
}
