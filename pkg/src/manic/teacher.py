"""Teacher loop service: imagined-rollout candidates, rankings, retraining.

Candidates are persisted as PNG frame sequences plus JSON metadata, keyed
by a content hash of (plan, start belief), so storage is idempotent.
Rankings append to a JSON-lines log; candidate status (pending/ranked) is
*derived* from that log, so restarting the service reconstructs identical
state from disk. Retraining rebuilds belief traces from the stored plans
through the current learning system and fits only the contentment model.

All write paths (ingest, retrain) serialize through one lock; reads are
unrestricted. The HTTP surface is a small JSON API plus PNG frame bytes.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.staticfiles import StaticFiles

from .agent import ManicAgent, observation_png_bytes
from .contentment import ContentmentModel, PreferenceRecord, train_preferences
from .errors import PreconditionError, StoreError
from .learning import LearningSystem, Observation
from .planner import evaluate


def candidate_id(plan: np.ndarray, v0: np.ndarray) -> str:
    """Stable content hash of a candidate's plan and start belief."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(plan, dtype="<f8").tobytes())
    h.update(b"|")
    h.update(np.ascontiguousarray(v0, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


@dataclass
class CandidateBundle:
    id: str
    plan: np.ndarray
    v0: np.ndarray
    frames: list[Observation]
    created_at: int  # epoch ms
    status: str = "pending"  # "pending" | "ranked"

    @property
    def horizon(self) -> int:
        return self.plan.shape[0]


class CandidateStore:
    """Disk layout: <dir>/candidates/<id>/{meta.json, frame_*.png} and
    <dir>/preferences.jsonl (append-only)."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.candidates_dir = self.dir / "candidates"
        self.prefs_path = self.dir / "preferences.jsonl"
        self.candidates_dir.mkdir(parents=True, exist_ok=True)
        self._bundles: dict[str, CandidateBundle] = {}
        self._records: list[PreferenceRecord] = []
        self._load()

    def _load(self) -> None:
        for meta_path in sorted(self.candidates_dir.glob("*/meta.json")):
            meta = json.loads(meta_path.read_text())
            plan = np.asarray(meta["plan"], dtype=np.float64)
            v0 = np.asarray(meta["v0"], dtype=np.float64)
            frames = []  # lazily served straight from PNG files
            self._bundles[meta["id"]] = CandidateBundle(
                id=meta["id"], plan=plan, v0=v0, frames=frames,
                created_at=meta["created_at"],
            )
            self._frame_counts = getattr(self, "_frame_counts", {})
            self._frame_counts[meta["id"]] = meta["frame_count"]
        if self.prefs_path.exists():
            for line in self.prefs_path.read_text().splitlines():
                if line.strip():
                    self._records.append(PreferenceRecord.from_json(line))
        ranked = {cid for rec in self._records for cid in rec.ordering}
        for cid in ranked:
            if cid in self._bundles:
                self._bundles[cid].status = "ranked"

    # -- candidates -----------------------------------------------------------

    def add_bundle(self, bundle: CandidateBundle) -> None:
        cdir = self.candidates_dir / bundle.id
        if not cdir.exists():
            cdir.mkdir(parents=True)
            for k, frame in enumerate(bundle.frames):
                (cdir / f"frame_{k:04d}.png").write_bytes(observation_png_bytes(frame))
            meta = {
                "id": bundle.id,
                "plan": bundle.plan.tolist(),
                "v0": bundle.v0.tolist(),
                "created_at": bundle.created_at,
                "frame_count": len(bundle.frames),
            }
            (cdir / "meta.json").write_text(json.dumps(meta))
        if bundle.id not in self._bundles:
            self._bundles[bundle.id] = bundle
            self._frame_counts = getattr(self, "_frame_counts", {})
            self._frame_counts[bundle.id] = len(bundle.frames)

    def get(self, cid: str) -> CandidateBundle:
        if cid not in self._bundles:
            raise StoreError(f"unknown candidate id {cid!r}")
        return self._bundles[cid]

    def frame_count(self, cid: str) -> int:
        self.get(cid)
        return self._frame_counts[cid]

    def frame_png(self, cid: str, k: int) -> bytes:
        self.get(cid)
        path = self.candidates_dir / cid / f"frame_{k:04d}.png"
        if not path.exists():
            raise StoreError(f"candidate {cid!r} has no frame {k}")
        return path.read_bytes()

    def list_candidates(self) -> list[dict]:
        out = []
        for cid in sorted(self._bundles, key=lambda c: self._bundles[c].created_at):
            b = self._bundles[cid]
            out.append({
                "id": b.id,
                "horizon": int(b.plan.shape[0]),
                "frame_count": self.frame_count(cid),
                "created_at": b.created_at,
                "status": b.status,
            })
        return out

    def pending_ids(self) -> list[str]:
        return [cid for cid, b in self._bundles.items() if b.status == "pending"]

    # -- rankings -------------------------------------------------------------

    def ingest_ranking(self, session_id: str, ordering: list[str]) -> PreferenceRecord:
        if len(ordering) < 2:
            raise PreconditionError("a ranking needs at least 2 candidates")
        if len(set(ordering)) != len(ordering):
            raise PreconditionError("ranking contains duplicate ids")
        for cid in ordering:
            bundle = self.get(cid)
            if bundle.status != "pending":
                raise StoreError(f"candidate {cid!r} is not pending")
        record = PreferenceRecord.now(session_id, ordering)
        with open(self.prefs_path, "a") as fh:
            fh.write(record.to_json() + "\n")
        self._records.append(record)
        for cid in ordering:
            self._bundles[cid].status = "ranked"
        return record

    def records(self) -> list[PreferenceRecord]:
        return list(self._records)

    def all_pairs_count(self) -> int:
        return sum(len(r.pairs) for r in self._records)


def plan_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of steps whose actions differ (discrete) or mean L2 gap."""
    if a.shape != b.shape:
        return 1.0
    one_hot_like = np.all((a == 0.0) | (a == 1.0)) and np.all((b == 0.0) | (b == 1.0))
    if one_hot_like:
        return float(np.mean(np.argmax(a, axis=1) != np.argmax(b, axis=1)))
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def generate_candidates(
    agent: ManicAgent,
    n: int,
    diversity_seed: int,
    store: Optional[CandidateStore] = None,
) -> list[CandidateBundle]:
    """Current elite plan plus n-1 pool plans picked greedily for maximal
    pairwise action distance, each rendered as an imagined video.

    Duplicate plans collapse to one candidate (content-hashed ids), and if
    the pool lacks variety the set is topped up with fresh random plans.
    """
    if n < 2:
        raise PreconditionError("need at least 2 candidates to rank")
    pool = agent.pool
    if pool.scores is None:
        evaluate(pool, agent.ls, agent.cm, agent.v)
    v0 = agent.v.copy()
    elite_plan = pool.plans[pool.elite_index].copy()
    selected = [(candidate_id(elite_plan, v0), elite_plan)]
    seen = {selected[0][0]}
    others = []
    for i in range(pool.size):
        plan = pool.plans[i].copy()
        cid = candidate_id(plan, v0)
        if cid not in seen:
            seen.add(cid)
            others.append((cid, plan))
    while len(selected) < n and others:
        gaps = [min(plan_distance(p, q) for _, q in selected) for _, p in others]
        selected.append(others.pop(int(np.argmax(gaps))))
    rng = np.random.default_rng(diversity_seed)
    attempts = 0
    while len(selected) < n and attempts < 1000:
        plan = np.stack([pool.action_space.sample(rng) for _ in range(pool.horizon)])
        cid = candidate_id(plan, v0)
        if cid not in seen:
            seen.add(cid)
            selected.append((cid, plan))
        attempts += 1
    bundles = []
    for cid, plan in selected:
        bundle = CandidateBundle(
            id=cid, plan=plan, v0=v0, frames=agent.ls.imagine_video(v0, plan),
            created_at=int(time.time() * 1000),
        )
        if store is not None:
            store.add_bundle(bundle)
        bundles.append(bundle)
    return bundles


@dataclass
class TeacherContext:
    """Everything the service endpoints need to answer requests."""

    store: CandidateStore
    ls: LearningSystem
    cm: ContentmentModel
    agent_mode: str = "idle"
    steps_taken: int = 0
    retrain_epochs: int = 150
    retrain_rate: float = 0.2
    write_lock: threading.Lock = field(default_factory=threading.Lock)

    def trace_of(self, cid: str):
        bundle = self.store.get(cid)
        return self.ls.rollout(bundle.v0, bundle.plan)

    def retrain(self) -> dict:
        records = self.store.records()
        if not records or self.store.all_pairs_count() == 0:
            raise StoreError("no stored preference pairs to train on")
        fresh = self.cm.copy()
        report = train_preferences(
            fresh, records, self.trace_of,
            epochs=self.retrain_epochs, rate=self.retrain_rate,
        )
        # atomic hot swap: planning in flight keeps the old snapshot
        self.cm.h = fresh.h
        return {
            "pairs_used": report.pairs_used,
            "heldout_accuracy": report.heldout_accuracy,
        }

    def status(self) -> dict:
        return {
            "agent_mode": self.agent_mode,
            "steps_taken": self.steps_taken,
            "pending_candidates": len(self.store.pending_ids()),
            "model_hashes": {
                "f": self.ls.f.param_hash(),
                "g": self.ls.g.param_hash(),
                "h": self.cm.h.param_hash(),
            },
        }


def create_app(ctx: TeacherContext, static_dir: Optional[str] = None):
    """FastAPI application exposing the teacher HTTP API."""
    app = FastAPI(title="teacher-service")

    @app.get("/api/candidates")
    def list_candidates():
        return ctx.store.list_candidates()

    @app.get("/api/candidates/{cid}/frame/{k}")
    def get_frame(cid: str, k: int):
        try:
            data = ctx.store.frame_png(cid, k)
        except StoreError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return Response(content=data, media_type="image/png")

    @app.post("/api/rankings", status_code=201)
    async def post_ranking(request: Request):
        doc = await request.json()
        session_id = doc.get("session_id")
        ordering = doc.get("ordering")
        if not isinstance(session_id, str) or not isinstance(ordering, list) \
                or not all(isinstance(c, str) for c in ordering):
            raise HTTPException(status_code=422,
                                detail="body must be {session_id, ordering:[ids]}")
        with ctx.write_lock:
            try:
                record = ctx.store.ingest_ranking(session_id, ordering)
            except StoreError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            except PreconditionError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
        return json.loads(record.to_json())

    @app.post("/api/retrain")
    def post_retrain():
        with ctx.write_lock:
            try:
                return ctx.retrain()
            except StoreError as exc:
                raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/api/status")
    def get_status():
        return ctx.status()

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(ctx: TeacherContext, port: int = 8421, static_dir: Optional[str] = None) -> None:
    import uvicorn

    uvicorn.run(create_app(ctx, static_dir=static_dir), host="127.0.0.1", port=port,
                log_level="warning")
