// Teacher console: watch each candidate's imagined video, drag the cards
// into ranked slots, submit, retrain. The server is the source of truth;
// every mutation round-trips through the API and reloads.

import { ApiError, loadCandidates, loadStatus, submitRanking, triggerRetrain } from "./api.js";
import {
    CandidateView,
    advanceFrame,
    assignRank,
    buildBoard,
    formatReport,
    frameUrl,
    newSessionId,
    orderingOf,
    submissionReady,
} from "./logic.js";

const FPS = 8;
const STATUS_POLL_MS = 5000;

let board: CandidateView[] = [];
let sessionId = newSessionId(Date.now(), Math.random());

const el = (id: string): HTMLElement => {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node;
};

function toast(message: string, kind: "info" | "error" = "info"): void {
    const box = el("toast");
    box.textContent = message;
    box.className = `toast ${kind} visible`;
    setTimeout(() => box.classList.remove("visible"), 6000);
}

function banner(message: string | null): void {
    const box = el("banner");
    if (message === null) {
        box.classList.add("hidden");
    } else {
        box.textContent = message;
        box.classList.remove("hidden");
    }
}

// -- rendering ----------------------------------------------------------------

function render(): void {
    const cards = el("cards");
    cards.innerHTML = "";
    if (board.length === 0) {
        cards.innerHTML = `<p class="empty">no candidates pending — the agent
            has nothing new to ask about</p>`;
    }
    for (const view of board) {
        cards.appendChild(renderCard(view));
    }
    renderSlots();
    const submit = el("submit") as HTMLButtonElement;
    submit.disabled = !submissionReady(board);
}

function renderCard(view: CandidateView): HTMLElement {
    const card = document.createElement("div");
    card.className = "card";
    card.draggable = true;
    card.dataset.id = view.id;

    const img = document.createElement("img");
    img.className = "player";
    img.src = frameUrl(view.id, view.position);
    img.alt = `candidate ${view.id}`;
    card.appendChild(img);

    const scrub = document.createElement("input");
    scrub.type = "range";
    scrub.min = "0";
    scrub.max = String(Math.max(0, view.frameCount - 1));
    scrub.value = String(view.position);
    scrub.addEventListener("input", () => {
        view.position = Number(scrub.value);
        img.src = frameUrl(view.id, view.position);
    });
    card.appendChild(scrub);

    const label = document.createElement("div");
    label.className = "card-label";
    label.textContent = view.rank === null
        ? `#${view.id.slice(0, 8)} — unranked`
        : `#${view.id.slice(0, 8)} — rank ${view.rank + 1}`;
    card.appendChild(label);

    card.addEventListener("dragstart", (ev) => {
        ev.dataTransfer?.setData("text/plain", view.id);
    });
    return card;
}

function renderSlots(): void {
    const slots = el("slots");
    slots.innerHTML = "";
    for (let r = 0; r < board.length; r++) {
        const slot = document.createElement("div");
        slot.className = "slot";
        slot.dataset.rank = String(r);
        const occupant = board.find((c) => c.rank === r);
        slot.textContent = occupant
            ? `${r + 1}. ${occupant.id.slice(0, 8)}`
            : `${r + 1}. drop here`;
        if (occupant) slot.classList.add("filled");
        slot.addEventListener("dragover", (ev) => ev.preventDefault());
        slot.addEventListener("drop", (ev) => {
            ev.preventDefault();
            const id = ev.dataTransfer?.getData("text/plain");
            if (id) {
                board = assignRank(board, id, r);
                render();
            }
        });
        slots.appendChild(slot);
    }
}

// -- player loop ----------------------------------------------------------------

setInterval(() => {
    for (const view of board) {
        view.position = advanceFrame(view.position, view.frameCount);
    }
    document.querySelectorAll<HTMLElement>(".card").forEach((card) => {
        const view = board.find((c) => c.id === card.dataset.id);
        if (!view) return;
        const img = card.querySelector("img");
        const scrub = card.querySelector("input");
        if (img) (img as HTMLImageElement).src = frameUrl(view.id, view.position);
        if (scrub) (scrub as HTMLInputElement).value = String(view.position);
    });
}, 1000 / FPS);

// -- actions ----------------------------------------------------------------

async function refresh(): Promise<void> {
    try {
        const candidates = await loadCandidates();
        board = buildBoard(candidates);
        banner(null);
        render();
    } catch (err) {
        banner("cannot reach the teacher service — retrying in 5 s");
        setTimeout(refresh, 5000);
    }
}

async function onSubmit(): Promise<void> {
    if (!submissionReady(board)) return;
    try {
        await submitRanking(sessionId, orderingOf(board));
        toast("ranking stored");
        sessionId = newSessionId(Date.now(), Math.random());
        await refresh();
    } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
            toast("these candidates were already ranked elsewhere — refreshing", "error");
            await refresh();
        } else {
            toast(`submit failed: ${err}`, "error");
        }
    }
}

async function onRetrain(): Promise<void> {
    try {
        const report = await triggerRetrain();
        toast(formatReport(report));
    } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
            toast("rank something first — the preference store is empty", "error");
        } else {
            toast(`retrain failed: ${err}`, "error");
        }
    }
}

async function pollStatus(): Promise<void> {
    try {
        const status = await loadStatus();
        el("status").textContent =
            `mode ${status.agent_mode} · step ${status.steps_taken} · ` +
            `${status.pending_candidates} pending`;
    } catch {
        el("status").textContent = "service unreachable";
    }
}

window.addEventListener("DOMContentLoaded", () => {
    el("submit").addEventListener("click", onSubmit);
    el("retrain").addEventListener("click", onRetrain);
    el("reload").addEventListener("click", refresh);
    refresh();
    pollStatus();
    setInterval(pollStatus, STATUS_POLL_MS);
});
