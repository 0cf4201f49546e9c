"""The outer loop: observe, update beliefs, plan, act.

One agent owns a learning system, a contentment model, and a plan pool.
Each step runs a fixed state machine: belief update from the new frame,
pool advance + evaluate + refine, action choice, then bookkeeping
(prediction for the next step's error signal, optional online learning).

Also here: the two stripped-down baseline agents (observation->action,
and memory+policy) that slot into the same episode runner, and the
introspective-observation extension that appends sampled internal
parameters and the belief itself onto the percept vector.
"""

from __future__ import annotations

import base64
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .actions import ActionSpace, one_hot
from .contentment import ContentmentModel
from .environments import Environment
from .errors import PreconditionError, ShapeError
from .learning import LearningSystem, Observation, downsample, error_signal
from .net import Approximator
from .planner import advance, choose_action, evaluate, init_pool, refine


@dataclass
class AgentConfig:
    belief_dims: int = 2
    horizon: int = 8
    pool_size: int = 32
    refine_iterations: int = 10
    encoder_mode: str = "hybrid"  # "encoder" | "inference" | "hybrid"
    refine_steps: int = 10  # belief-inference gradient steps per frame
    refine_rate: float = 0.5
    online_learning: bool = False
    online_rate: float = 0.001
    track_error_signal: bool = True
    introspection: bool = False
    introspection_samples: int = 64
    planner_seed: int = 0
    introspection_seed: int = 0

    def __post_init__(self):
        if self.encoder_mode not in ("encoder", "inference", "hybrid"):
            raise PreconditionError(f"unknown encoder mode {self.encoder_mode!r}")
        for name in ("belief_dims", "horizon", "pool_size", "refine_iterations",
                     "refine_steps"):
            if getattr(self, name) < 1 and name != "refine_iterations":
                raise PreconditionError(f"{name} must be positive")
        if self.refine_iterations < 0:
            raise PreconditionError("refine_iterations must be >= 0")
        if self.introspection_samples < 0:
            raise PreconditionError("introspection_samples must be >= 0")


@dataclass
class StepRecord:
    observation: Observation
    belief: np.ndarray
    action: np.ndarray
    predicted_observation: Optional[Observation]
    error_norm: Optional[float]
    elite_utility: float


@dataclass
class EpisodeTrace:
    steps: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def error_norms(self) -> list[Optional[float]]:
        return [s.error_norm for s in self.steps]

    def save_jsonl(self, path, frames: str = "inline", frame_dir: Optional[str] = None) -> None:
        """One JSON line per step; frames inline (base64 PNG) or written to
        PNG files referenced by relative path."""
        path = Path(path)
        if frames == "png":
            frame_dir = Path(frame_dir) if frame_dir else path.parent / (path.stem + "_frames")
            frame_dir.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for t, rec in enumerate(self.steps):
                doc = {
                    "t": t,
                    "belief": rec.belief.tolist(),
                    "action": rec.action.tolist(),
                    "error_norm": rec.error_norm,
                    "elite_utility": rec.elite_utility,
                }
                if frames == "png":
                    frame_path = frame_dir / f"frame_{t:05d}.png"
                    save_observation_png(rec.observation, frame_path)
                    doc["frame_png"] = str(frame_path.relative_to(path.parent))
                else:
                    doc["frame_b64"] = base64.b64encode(
                        observation_png_bytes(rec.observation)).decode("ascii")
                fh.write(json.dumps(doc) + "\n")


def observation_png_bytes(obs: Observation) -> bytes:
    arr = np.clip(obs.as_array() * 255.0, 0, 255).astype(np.uint8)
    if obs.channels == 1:
        arr = arr[:, :, 0]
    img = Image.fromarray(arr)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_observation_png(obs: Observation, path) -> None:
    Path(path).write_bytes(observation_png_bytes(obs))


class ManicAgent:
    """Full model-based agent with the plan-pool decision loop."""

    def __init__(self, ls: LearningSystem, cm: ContentmentModel,
                 action_space: ActionSpace, config: AgentConfig):
        if cm.d != ls.d:
            raise ShapeError("contentment model dimension does not match beliefs")
        if action_space.dims != ls.a_dims:
            raise ShapeError("action space does not match the transition model")
        self.ls = ls
        self.cm = cm
        self.action_space = action_space
        self.config = config
        self.pool = init_pool(config.pool_size, config.horizon, action_space,
                              seed=config.planner_seed)
        self.v = np.zeros(ls.d)
        self.steps_taken = 0
        self.predicted_v: Optional[np.ndarray] = None
        self.predicted_obs: Optional[Observation] = None
        self.last_error_norm: Optional[float] = None
        self.last_step_events: list[str] = []
        self._prev_v: Optional[np.ndarray] = None
        self._prev_action: Optional[np.ndarray] = None
        if config.introspection:
            total = ls.f.num_params() + ls.g.num_params() + cm.h.num_params()
            if config.introspection_samples > total:
                raise PreconditionError(
                    f"cannot sample {config.introspection_samples} of {total} parameters")
            rng = np.random.default_rng(config.introspection_seed)
            self.introspection_indices = np.sort(
                rng.choice(total, size=config.introspection_samples, replace=False))
        else:
            self.introspection_indices = None

    # -- introspection ------------------------------------------------------

    def _internal_params(self) -> np.ndarray:
        return np.concatenate([
            self.ls.f.get_flat_params(),
            self.ls.g.get_flat_params(),
            self.cm.h.get_flat_params(),
        ])

    def introspective_observe(self, x: Observation) -> Observation:
        """Percept extended with sampled model parameters and the current
        belief, each mapped from [-1,1] into [0,1]."""
        if self.introspection_indices is None:
            raise PreconditionError("introspection was not enabled at init")
        samples = self._internal_params()[self.introspection_indices]
        squash = lambda a: (np.clip(a, -1.0, 1.0) + 1.0) / 2.0
        extended = np.concatenate([x.pixels, squash(samples), squash(self.v)])
        return Observation(width=extended.size, height=1, channels=1,
                           pixels=extended)

    # -- the step state machine ----------------------------------------------

    def _update_belief(self, x: Observation) -> None:
        mode = self.config.encoder_mode
        use_encoder = mode == "encoder" or (mode == "hybrid" and self.steps_taken == 0)
        if use_encoder:
            if self.config.introspection:
                ext = self.introspective_observe(x)
                extras = ext.pixels[x.pixels.size:]
                self.v = self.ls.encode(np.concatenate([downsample(x), extras]))
            else:
                self.v = self.ls.encode(x)
        else:
            start = self.predicted_v if self.predicted_v is not None else self.v
            self.v = self.ls.refine_beliefs(
                start, x, steps=self.config.refine_steps,
                rate=self.config.refine_rate, seed=self.steps_taken)

    def step(self, x: Observation) -> np.ndarray:
        """One full perception/decision cycle; returns the chosen action."""
        events = []
        # error signal against what we anticipated this frame would be
        if self.predicted_obs is not None and self.config.track_error_signal:
            self.last_error_norm = float(
                np.linalg.norm(error_signal(x, self.predicted_obs)))
        else:
            self.last_error_norm = None

        self._update_belief(x)
        events.append("belief_update")

        if self.config.online_learning and self._prev_v is not None:
            self._online_update(x)

        if self.steps_taken > 0:
            advance(self.pool)
        evaluate(self.pool, self.ls, self.cm, self.v)
        events.append("pool_evaluate")
        if self.config.refine_iterations > 0:
            refine(self.pool, self.ls, self.cm, self.v, self.config.refine_iterations)
            events.append("pool_refine")

        action = choose_action(self.pool)
        events.append("action_choice")

        self._prev_v = self.v.copy()
        self._prev_action = action.copy()
        self.predicted_v = self.ls.predict_transition(self.v, action)
        if self.config.track_error_signal:
            self.predicted_obs = self.ls.decode_frame(self.predicted_v)
        self.steps_taken += 1
        self.last_step_events = events
        return action

    def _online_update(self, x: Observation) -> None:
        """One SGD step each on f and g from the realized transition."""
        rate = self.config.online_rate
        self.ls.f.train_step(
            np.concatenate([self._prev_v, self._prev_action]), self.v, rate)
        rng = np.random.default_rng(self.steps_taken)
        n_px = self.ls.width * self.ls.height
        idx = rng.integers(0, n_px, size=min(64, n_px))
        cols, rows = idx % self.ls.width, idx // self.ls.width
        batch = np.empty((self.ls.d + 2, idx.size))
        batch[: self.ls.d, :] = self.v[:, None]
        batch[self.ls.d, :] = (cols + 0.5) / self.ls.width
        batch[self.ls.d + 1, :] = (rows + 0.5) / self.ls.height
        targets = x.as_array()[rows, cols, :].T
        self.ls.g.train_batch(batch, targets, rate)

    @property
    def elite_utility(self) -> float:
        return float(self.pool.scores[self.pool.elite_index])


class PolicyAgent:
    """Baseline: one model straight from (downsampled) observation to a
    one-hot action. No state, no memory."""

    def __init__(self, model: Approximator, action_space: ActionSpace):
        self.model = model
        self.action_space = action_space
        self.v = None

    def step(self, x: Observation) -> np.ndarray:
        scores = self.model.forward(downsample(x))
        return one_hot(int(np.argmax(scores)), self.action_space.n)


class MemoryPolicyAgent:
    """Baseline: a memory model folds each observation into a belief, and a
    policy model maps the belief to a one-hot action."""

    def __init__(self, memory: Approximator, policy: Approximator,
                 d: int, action_space: ActionSpace):
        self.memory = memory
        self.policy = policy
        self.d = d
        self.action_space = action_space
        self.v = np.zeros(d)

    def step(self, x: Observation) -> np.ndarray:
        self.v = np.clip(
            self.memory.forward(np.concatenate([self.v, downsample(x)])), -1.0, 1.0)
        scores = self.policy.forward(self.v)
        return one_hot(int(np.argmax(scores)), self.action_space.n)


def run_episode(agent, env: Environment, steps: int,
                stop_on_terminal: bool = True) -> EpisodeTrace:
    """Closed loop render -> agent.step -> env.step for `steps` frames."""
    if steps < 1:
        raise PreconditionError("steps must be >= 1")
    trace = EpisodeTrace()
    for _ in range(steps):
        x = env.render()
        action = agent.step(x)
        trace.steps.append(StepRecord(
            observation=x,
            belief=None if getattr(agent, "v", None) is None else agent.v.copy(),
            action=np.asarray(action).copy(),
            predicted_observation=getattr(agent, "predicted_obs", None),
            error_norm=getattr(agent, "last_error_norm", None),
            elite_utility=(agent.elite_utility
                           if isinstance(agent, ManicAgent) else float("nan")),
        ))
        env.step(action)
        if stop_on_terminal and env.terminated:
            break
    return trace
