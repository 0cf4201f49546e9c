import { describe, expect, it, vi } from "vitest";

import {
    advanceFrame,
    assignRank,
    buildBoard,
    expectedPairCount,
    formatReport,
    frameUrl,
    newSessionId,
    orderingOf,
    submissionReady,
    CandidateSummary,
} from "./logic.js";
import { ApiError, loadCandidates, submitRanking, triggerRetrain } from "./api.js";

const summary = (id: string, status = "pending"): CandidateSummary => ({
    id,
    horizon: 5,
    frame_count: 5,
    created_at: 0,
    status,
});

describe("frameUrl", () => {
    it("matches the service's frame endpoint exactly", () => {
        expect(frameUrl("abc123", 4)).toBe("/api/candidates/abc123/frame/4");
    });
});

describe("buildBoard", () => {
    it("keeps only pending candidates, unranked", () => {
        const board = buildBoard([summary("a"), summary("b", "ranked"), summary("c")]);
        expect(board.map((c) => c.id)).toEqual(["a", "c"]);
        expect(board.every((c) => c.rank === null)).toBe(true);
    });

    it("empty set gives an empty board", () => {
        expect(buildBoard([])).toEqual([]);
    });
});

describe("ranking board", () => {
    it("assigns and swaps ranks so duplicates cannot exist", () => {
        let board = buildBoard([summary("a"), summary("b"), summary("c")]);
        board = assignRank(board, "a", 0);
        board = assignRank(board, "b", 1);
        board = assignRank(board, "c", 0); // steals slot 0, a gets c's old rank
        const byId = Object.fromEntries(board.map((c) => [c.id, c.rank]));
        expect(byId["c"]).toBe(0);
        expect(byId["a"]).toBe(null);
        expect(byId["b"]).toBe(1);
        const ranks = board.map((c) => c.rank).filter((r) => r !== null);
        expect(new Set(ranks).size).toBe(ranks.length);
    });

    it("submission requires a full distinct assignment", () => {
        let board = buildBoard([summary("a"), summary("b")]);
        expect(submissionReady(board)).toBe(false);
        board = assignRank(board, "a", 0);
        expect(submissionReady(board)).toBe(false);
        board = assignRank(board, "b", 1);
        expect(submissionReady(board)).toBe(true);
    });

    it("ordering lists ids best to worst", () => {
        let board = buildBoard([summary("a"), summary("b"), summary("c")]);
        board = assignRank(board, "b", 0);
        board = assignRank(board, "c", 1);
        board = assignRank(board, "a", 2);
        expect(orderingOf(board)).toEqual(["b", "c", "a"]);
    });

    it("single candidate can never be submitted", () => {
        let board = buildBoard([summary("a")]);
        board = assignRank(board, "a", 0);
        expect(submissionReady(board)).toBe(false);
    });
});

describe("pair math", () => {
    it("n candidates expand to n(n-1)/2 pairs", () => {
        expect(expectedPairCount(2)).toBe(1);
        expect(expectedPairCount(3)).toBe(3);
        expect(expectedPairCount(5)).toBe(10);
    });
});

describe("flip-book", () => {
    it("wraps around the frame count", () => {
        expect(advanceFrame(0, 3)).toBe(1);
        expect(advanceFrame(2, 3)).toBe(0);
        expect(advanceFrame(5, 0)).toBe(0);
    });
});

describe("formatReport", () => {
    it("renders both numbers", () => {
        expect(formatReport({ pairs_used: 200, heldout_accuracy: 0.9 }))
            .toBe("trained on 200 pairs — held-out accuracy 90.0%");
    });
});

describe("session ids", () => {
    it("distinct inputs give distinct ids", () => {
        expect(newSessionId(1000, 0.5)).not.toBe(newSessionId(1001, 0.25));
    });
});

const jsonResponse = (doc: unknown, status = 200): Response =>
    new Response(JSON.stringify(doc), {
        status,
        headers: { "content-type": "application/json" },
    });

describe("api client", () => {
    it("loadCandidates parses the listing", async () => {
        const fetchFn = vi.fn(async () => jsonResponse([summary("a")]));
        const out = await loadCandidates(fetchFn as unknown as typeof fetch);
        expect(out[0].id).toBe("a");
        expect(fetchFn).toHaveBeenCalledWith("/api/candidates");
    });

    it("submitRanking posts the expected body", async () => {
        const fetchFn = vi.fn(async () => jsonResponse({ ok: true }, 201));
        await submitRanking("s1", ["a", "b"], fetchFn as unknown as typeof fetch);
        const [url, init] = fetchFn.mock.calls[0] as unknown as [string, RequestInit];
        expect(url).toBe("/api/rankings");
        expect(JSON.parse(String(init.body))).toEqual({
            session_id: "s1",
            ordering: ["a", "b"],
        });
    });

    it("409 surfaces as ApiError with the server detail", async () => {
        const fetchFn = vi.fn(async () =>
            jsonResponse({ detail: "no stored preference pairs" }, 409));
        await expect(triggerRetrain(fetchFn as unknown as typeof fetch))
            .rejects.toMatchObject({ status: 409, message: "no stored preference pairs" });
    });
});
