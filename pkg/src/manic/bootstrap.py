"""Three-step bootstrap: random walk, belief estimation, supervised training.

Recurrent training of the transition/observation models is bypassed by
first estimating a belief trajectory directly from the frames: build a
nearest-neighbor graph over frames (always augmented with edges between
consecutive time steps, which keeps it connected), take all-pairs geodesic
distances, and embed with classical multidimensional scaling. With belief
targets in hand, all three networks train as plain supervised problems.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .environments import Environment
from .errors import FormatError, PreconditionError, ShapeError
from .learning import LearningSystem, Observation, build_learning_system, downsample
from .net import AdamTrainer, SgdTrainer

DATASET_MAGIC = b"MNC1"
BELIEFS_MAGIC = b"MNCB"
FORMAT_VERSION = 1


@dataclass
class WalkDataset:
    """A recorded random walk: T frames, T-1 actions between them.

    true_states is evaluation-only ground truth; training code never reads
    it.
    """

    frames: np.ndarray  # (T, W*H*C) float64 in [0,1]
    actions: np.ndarray  # (T-1, a_dims)
    width: int
    height: int
    channels: int
    a_dims: int
    seed: int
    true_states: Optional[np.ndarray] = None  # (T, state_dims)

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.width * self.height * self.channels:
            raise ShapeError("frames must be (T, W*H*C)")
        if self.actions.shape != (len(self.frames) - 1, self.a_dims):
            raise ShapeError("need exactly T-1 actions of length a_dims")
        if self.true_states is not None and len(self.true_states) != len(self.frames):
            raise ShapeError("true_states must align 1:1 with frames")

    def __len__(self) -> int:
        return len(self.frames)

    def observation(self, t: int) -> Observation:
        return Observation(width=self.width, height=self.height,
                           channels=self.channels, pixels=self.frames[t].copy())

    def save(self, path) -> None:
        with open(Path(path), "wb") as fh:
            t = len(self.frames)
            has_states = self.true_states is not None
            state_dims = self.true_states.shape[1] if has_states else 0
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<IIIIII", FORMAT_VERSION, t, self.width,
                                 self.height, self.channels, self.a_dims))
            fh.write(struct.pack("<BI", 1 if has_states else 0, state_dims))
            fh.write(np.ascontiguousarray(self.frames, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(self.actions, dtype="<f4").tobytes())
            if has_states:
                fh.write(np.ascontiguousarray(self.true_states, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "WalkDataset":
        raw = Path(path).read_bytes()
        if raw[:4] != DATASET_MAGIC:
            raise FormatError(f"bad magic {raw[:4]!r} in {path}")
        version, t, w, h, c, a_dims = struct.unpack_from("<IIIIII", raw, 4)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        flags, state_dims = struct.unpack_from("<BI", raw, 28)
        pos = 33
        n_px = w * h * c
        frames = np.frombuffer(raw, dtype="<f4", count=t * n_px, offset=pos)
        pos += 4 * t * n_px
        actions = np.frombuffer(raw, dtype="<f4", count=(t - 1) * a_dims, offset=pos)
        pos += 4 * (t - 1) * a_dims
        true_states = None
        if flags & 1:
            true_states = np.frombuffer(raw, dtype="<f4", count=t * state_dims, offset=pos)
            true_states = true_states.reshape(t, state_dims).astype(np.float64)
            pos += 4 * t * state_dims
        if pos != len(raw):
            raise FormatError(f"trailing bytes in dataset file {path}")
        return cls(
            frames=frames.reshape(t, n_px).astype(np.float64),
            actions=actions.reshape(t - 1, a_dims).astype(np.float64),
            width=w, height=h, channels=c, a_dims=a_dims, seed=0,
            true_states=true_states,
        )


@dataclass
class BeliefEstimates:
    """Belief trajectory aligned 1:1 with a walk's frames, in [-1,1]^d."""

    beliefs: np.ndarray  # (T, d)

    @property
    def d(self) -> int:
        return self.beliefs.shape[1]

    def __len__(self) -> int:
        return len(self.beliefs)

    def save(self, path) -> None:
        with open(Path(path), "wb") as fh:
            fh.write(BELIEFS_MAGIC)
            fh.write(struct.pack("<III", FORMAT_VERSION, *self.beliefs.shape))
            fh.write(np.ascontiguousarray(self.beliefs, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "BeliefEstimates":
        raw = Path(path).read_bytes()
        if raw[:4] != BELIEFS_MAGIC:
            raise FormatError(f"bad magic {raw[:4]!r} in {path}")
        version, t, d = struct.unpack_from("<III", raw, 4)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported beliefs version {version}")
        beliefs = np.frombuffer(raw, dtype="<f8", count=t * d, offset=16)
        return cls(beliefs=beliefs.reshape(t, d).copy())


def collect_random_walk(env: Environment, steps: int, seed: int) -> WalkDataset:
    """Drive the environment with uniformly random actions; `steps` frames
    come back with the actions between them and evaluation-only states."""
    if steps < 2:
        raise PreconditionError(f"need at least 2 steps, got {steps}")
    env.reset(seed)
    action_rng = np.random.default_rng([seed, 1])
    space = env.action_space
    frames = np.empty((steps, env.width * env.height * env.channels))
    actions = np.empty((steps - 1, space.dims))
    states = [env.true_state()]
    frames[0] = env.render().pixels
    for t in range(steps - 1):
        u = space.sample(action_rng)
        actions[t] = u
        env.step(u)
        states.append(env.true_state())
        frames[t + 1] = env.render().pixels
    return WalkDataset(
        frames=frames, actions=actions, width=env.width, height=env.height,
        channels=env.channels, a_dims=space.dims, seed=seed,
        true_states=np.asarray(states),
    )


# -- belief estimation ---------------------------------------------------------


def _pairwise_distances(frames: np.ndarray) -> np.ndarray:
    sq = np.sum(frames * frames, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * frames @ frames.T
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def _neighbor_graph(dist: np.ndarray, k: int) -> csr_matrix:
    """k nearest neighbors per frame (ties to the lower index) unioned with
    consecutive-in-time edges, weighted by pixel distance.

    Edges are assigned, not accumulated, so a temporal edge that is also a
    kNN edge keeps its single correct weight.
    """
    t = dist.shape[0]
    # identical frames would make zero-weight edges, which sparse csgraph
    # drops; floor them so the temporal chain can never disconnect
    tiny = 1e-12
    adj = np.zeros((t, t))
    order = np.argsort(dist, axis=1, kind="stable")
    for i in range(t):
        picked = 0
        for j in order[i]:
            if j == i:
                continue
            adj[i, j] = max(dist[i, j], tiny)
            picked += 1
            if picked == k:
                break
    chain = np.arange(t - 1)
    adj[chain, chain + 1] = np.maximum(dist[chain, chain + 1], tiny)
    adj = np.maximum(adj, adj.T)
    return csr_matrix(adj)


def _classical_mds(d2: np.ndarray, d: int) -> np.ndarray:
    """Embed a squared-distance matrix; returns (n, d) coordinates."""
    n = d2.shape[0]
    j = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * j @ d2 @ j
    b = 0.5 * (b + b.T)
    eigvals, eigvecs = np.linalg.eigh(b)
    top = np.argsort(eigvals)[::-1][:d]
    lams = np.clip(eigvals[top], 0.0, None)
    coords = eigvecs[:, top] * np.sqrt(lams)[None, :]
    # canonical sign: largest-magnitude coordinate positive per dimension
    for c in range(coords.shape[1]):
        col = coords[:, c]
        if col[np.argmax(np.abs(col))] < 0:
            coords[:, c] = -col
    return coords


def _rescale_to_unit_box(coords: np.ndarray) -> np.ndarray:
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = hi - lo
    out = np.zeros_like(coords)
    ok = span > 0
    out[:, ok] = 2.0 * (coords[:, ok] - lo[ok]) / span[ok] - 1.0
    return out


def _denoise_distances(dist: np.ndarray) -> np.ndarray:
    """Remove the additive pixel-noise floor from pairwise distances.

    Independent per-pixel noise adds a near-constant offset to every
    squared distance, which bends geodesic sums and warps the embedding.
    Random-walk revisits produce near-coincident states, so the lowest
    percentile of nearest-neighbor distances estimates that floor; it is
    subtracted in quadrature, clamped so no edge shrinks below 5% of its
    raw length.
    """
    masked = dist + np.diag(np.full(len(dist), np.inf))
    floor = np.percentile(masked.min(axis=1), 1.0)
    d2 = np.maximum(dist * dist - floor * floor, (0.05 * dist) ** 2)
    return np.sqrt(d2)


def estimate_beliefs(
    ds: WalkDataset,
    d: int,
    k: int,
    landmark_threshold: int = 2000,
    n_landmarks: int = 500,
    denoise: bool = True,
) -> BeliefEstimates:
    """Temporal-graph geodesic embedding of the walk's frames.

    Exact classical MDS below `landmark_threshold` frames; landmark MDS
    with evenly spaced landmarks above it. The result is affinely rescaled
    per dimension into [-1, 1].
    """
    t = len(ds)
    if d < 1:
        raise PreconditionError(f"need d >= 1, got {d}")
    if k < 2:
        raise PreconditionError(f"need k >= 2, got {k}")
    if t <= k:
        raise PreconditionError(f"need more frames than neighbors (T={t}, k={k})")
    dist = _pairwise_distances(ds.frames)
    if denoise:
        dist = _denoise_distances(dist)
    graph = _neighbor_graph(dist, k)
    if t <= landmark_threshold:
        geo = shortest_path(graph, method="D", directed=False)
        coords = _classical_mds(geo ** 2, d)
    else:
        landmarks = np.unique(np.linspace(0, t - 1, n_landmarks).astype(int))
        geo = shortest_path(graph, method="D", directed=False, indices=landmarks)
        coords = _landmark_mds(geo, landmarks, d)
    return BeliefEstimates(beliefs=_rescale_to_unit_box(coords))


def _landmark_mds(geo: np.ndarray, landmarks: np.ndarray, d: int) -> np.ndarray:
    """Nystrom-style embedding: exact MDS on the landmark block, then
    distance-based triangulation of every other point."""
    l2 = geo[:, landmarks] ** 2  # (m, m) squared landmark-to-landmark
    m = len(landmarks)
    j = np.eye(m) - np.full((m, m), 1.0 / m)
    b = -0.5 * j @ l2 @ j
    b = 0.5 * (b + b.T)
    eigvals, eigvecs = np.linalg.eigh(b)
    top = np.argsort(eigvals)[::-1][:d]
    lams = np.clip(eigvals[top], 1e-12, None)
    land_coords = eigvecs[:, top] * np.sqrt(lams)[None, :]
    # pseudo-inverse transform for out-of-sample points
    pinv = eigvecs[:, top] / np.sqrt(lams)[None, :]  # (m, d)
    mean_l2 = l2.mean(axis=0)  # (m,)
    delta = geo ** 2  # (m, T)
    coords = -0.5 * ((delta - mean_l2[:, None]).T @ pinv)  # (T, d)
    coords[landmarks] = land_coords
    for c in range(coords.shape[1]):
        col = coords[:, c]
        if col[np.argmax(np.abs(col))] < 0:
            coords[:, c] = -col
    return coords


# -- supervised pretraining ------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 50
    optimizer: str = "adam"  # "adam" | "sgd"; plain SGD cannot sharpen the decoder
    rate: float = 0.003  # adam lr, or sgd rate when optimizer == "sgd"
    rate_decay: float = 0.5  # applied to a model's rate when its loss rises
    decay_tolerance: float = 0.05  # relative rise ignored as sampling noise
    f_hidden: tuple = (32,)
    g_hidden: tuple = (96, 96)
    g_plus_hidden: tuple = (64,)
    pixels_per_frame: int = 512
    batch: int = 64  # mini-batch size for the transition/encoder fits
    holdout_frac: float = 0.1
    with_encoder: bool = True
    seed: int = 0


@dataclass
class TrainingLog:
    f_losses: list = field(default_factory=list)
    g_losses: list = field(default_factory=list)
    g_frame_losses: list = field(default_factory=list)
    g_plus_losses: list = field(default_factory=list)

    def final_losses(self) -> dict:
        return {
            "f": self.f_losses[-1] if self.f_losses else None,
            "g": self.g_losses[-1] if self.g_losses else None,
            "g_frame": self.g_frame_losses[-1] if self.g_frame_losses else None,
            "g_plus": self.g_plus_losses[-1] if self.g_plus_losses else None,
        }


def train_split(t: int, holdout_frac: float) -> int:
    """Index of the first held-out frame (the tail is reserved for eval)."""
    held = max(1, int(np.floor(t * holdout_frac)))
    return t - held


def pretrain(ds: WalkDataset, be: BeliefEstimates, cfg: TrainConfig) -> tuple[LearningSystem, TrainingLog]:
    """Build fresh networks and fit them to the estimated beliefs.

    f learns (v_t, u_t) -> v_{t+1}; g learns (v_t, px, py) -> pixel color
    on a fresh random pixel sample per frame per epoch; g_plus learns
    downsampled frame -> v_t. The held-out tail of the walk is never
    touched.
    """
    if len(ds) != len(be):
        raise ShapeError(f"dataset has {len(ds)} frames but {len(be)} beliefs")
    if cfg.epochs < 1:
        raise PreconditionError("epochs must be >= 1")
    ls = build_learning_system(
        d=be.d, width=ds.width, height=ds.height, channels=ds.channels,
        a_dims=ds.a_dims, f_hidden=tuple(cfg.f_hidden), g_hidden=tuple(cfg.g_hidden),
        g_plus_hidden=tuple(cfg.g_plus_hidden), with_encoder=cfg.with_encoder,
        seed=cfg.seed,
    )
    log = TrainingLog()
    train_models(ls, ds, be, cfg, log)
    return ls, log


def train_models(
    ls: LearningSystem,
    ds: WalkDataset,
    be: BeliefEstimates,
    cfg: TrainConfig,
    log: Optional[TrainingLog] = None,
) -> TrainingLog:
    """Run cfg.epochs of supervised training on an existing system.

    Used both for the initial fit and for later refinement epochs; belief
    targets are never revisited.
    """
    log = log if log is not None else TrainingLog()
    rng = np.random.default_rng([cfg.seed, 17])
    n_train = train_split(len(ds), cfg.holdout_frac)
    beliefs = be.beliefs
    w, h, c = ds.width, ds.height, ds.channels
    n_px = w * h
    frames3d = ds.frames.reshape(len(ds), h, w, c)

    def make_trainer(net):
        if cfg.optimizer == "adam":
            return AdamTrainer(net, lr=cfg.rate)
        if cfg.optimizer == "sgd":
            return SgdTrainer(net, rate=cfg.rate)
        raise PreconditionError(f"unknown optimizer {cfg.optimizer!r}")

    opt_f = make_trainer(ls.f)
    opt_g = make_trainer(ls.g)
    opt_gp = make_trainer(ls.g_plus) if ls.g_plus is not None else None

    probe = np.unique(np.linspace(0, n_train - 1, min(20, n_train)).astype(int))
    ds_cache = None
    if ls.g_plus is not None:
        ds_cache = np.stack([downsample(ds.observation(t)) for t in range(n_train)])

    # transition pairs as ready-made column matrices
    f_in = np.concatenate([beliefs[: n_train - 1], ds.actions[: n_train - 1]], axis=1).T
    f_out = beliefs[1:n_train].T

    for _ in range(cfg.epochs):
        # transition model on consecutive belief pairs, mini-batched
        order = rng.permutation(n_train - 1)
        f_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), cfg.batch):
            sel = order[lo:lo + cfg.batch]
            f_loss += opt_f.step(f_in[:, sel], f_out[:, sel])
            n_batches += 1
        f_loss /= max(1, n_batches)
        if log.f_losses and f_loss > log.f_losses[-1] * (1.0 + cfg.decay_tolerance):
            opt_f.scale_rate(cfg.rate_decay)
        log.f_losses.append(f_loss)

        # decoder on a fresh pixel sample per frame
        order = rng.permutation(n_train)
        g_loss = 0.0
        n_samp = min(cfg.pixels_per_frame, n_px)
        for t in order:
            idx = rng.integers(0, n_px, size=n_samp)
            cols, rows = idx % w, idx // w
            batch = np.empty((ls.d + 2, n_samp))
            batch[: ls.d, :] = beliefs[t][:, None]
            batch[ls.d, :] = (cols + 0.5) / w
            batch[ls.d + 1, :] = (rows + 0.5) / h
            targets = frames3d[t, rows, cols, :].T
            g_loss += opt_g.step(batch, targets)
        g_loss /= max(1, len(order))
        log.g_losses.append(g_loss)
        # decay from the deterministic whole-frame probe, not the noisy
        # per-batch sample loss
        frame_loss = _full_frame_loss(ls, ds, beliefs, probe)
        if log.g_frame_losses and frame_loss > log.g_frame_losses[-1] * (1.0 + cfg.decay_tolerance):
            opt_g.scale_rate(cfg.rate_decay)
        log.g_frame_losses.append(frame_loss)

        # encoder on downsampled frames, mini-batched
        if ls.g_plus is not None:
            order = rng.permutation(n_train)
            gp_loss = 0.0
            n_batches = 0
            for lo in range(0, len(order), cfg.batch):
                sel = order[lo:lo + cfg.batch]
                gp_loss += opt_gp.step(ds_cache[sel].T, beliefs[sel].T)
                n_batches += 1
            gp_loss /= max(1, n_batches)
            if log.g_plus_losses and gp_loss > log.g_plus_losses[-1] * (1.0 + cfg.decay_tolerance):
                opt_gp.scale_rate(cfg.rate_decay)
            log.g_plus_losses.append(gp_loss)
    return log


def _full_frame_loss(ls: LearningSystem, ds: WalkDataset, beliefs: np.ndarray, probe: np.ndarray) -> float:
    """Mean squared whole-frame reconstruction loss over probe frames."""
    w, h = ds.width, ds.height
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    coords = np.stack([(cols.ravel() + 0.5) / w, (rows.ravel() + 0.5) / h], axis=1)
    total = 0.0
    for t in probe:
        pred = ls.decode_pixels_batch(beliefs[t], coords)  # (c, n_px)
        target = ds.frames[t].reshape(h * w, ds.channels).T
        total += 0.5 * float(np.mean(np.sum((pred - target) ** 2, axis=0)))
    return total / len(probe)


def heldout_one_step_rms(ls: LearningSystem, ds: WalkDataset, be: BeliefEstimates,
                         holdout_frac: float = 0.1) -> float:
    """RMS per-dimension error of single transition predictions on the
    held-out tail of the walk."""
    start = train_split(len(ds), holdout_frac)
    errs = []
    for t in range(start, len(ds) - 1):
        pred = ls.predict_transition(be.beliefs[t], ds.actions[t])
        errs.append(pred - be.beliefs[t + 1])
    errs = np.asarray(errs)
    return float(np.sqrt(np.mean(errs ** 2)))
