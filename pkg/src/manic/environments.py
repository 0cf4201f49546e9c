"""Simulated camera worlds with seeded noise.

Four environments share one interface:

  crane     - a trolley/hook gantry with 2 degrees of freedom (boom
              position, cable length), viewed side-on.
  warehouse - a robot dot navigating a walled floor toward a goal, viewed
              top-down.
  ramp-test - a 1-D brightness ramp; exists purely as a dimensionality-
              reduction oracle fixture.
  corridor  - a cue/junction memory task where two situations look
              identical but demand different actions.

All rendering is subpixel (fractional rectangle coverage) so that images
vary smoothly with state: critical for manifold-based belief estimation.
Ground-truth state is available for evaluation but must never be fed to
training code.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .actions import ActionSpace, one_hot
from .errors import PreconditionError
from .learning import Observation


def _coverage(n: int, lo: float, hi: float) -> np.ndarray:
    """Per-cell overlap of the interval [lo, hi) with unit cells [k, k+1)."""
    edges = np.arange(n + 1.0)
    cov = np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo)
    return np.clip(cov, 0.0, 1.0)


def fill_rect(img: np.ndarray, x0: float, x1: float, y0: float, y1: float, color) -> None:
    """Alpha-blend an axis-aligned rectangle (pixel units) with soft edges."""
    alpha = np.outer(_coverage(img.shape[0], y0, y1), _coverage(img.shape[1], x0, x1))
    alpha = alpha[:, :, None]
    img *= 1.0 - alpha
    img += alpha * np.asarray(color, dtype=np.float64)[None, None, :]


class Environment:
    """Common surface: reset(seed) -> state, step(u) -> state, render()."""

    kind: str
    width: int
    height: int
    channels: int = 3

    def __init__(self, transition_noise: float, observation_noise: float):
        self.transition_noise = float(transition_noise)
        self.observation_noise = float(observation_noise)
        self.rng = np.random.default_rng(0)
        self.state = np.zeros(1)
        self.terminated = False

    @property
    def action_space(self) -> ActionSpace:
        raise NotImplementedError

    def reset(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def step(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _render_clean(self) -> np.ndarray:
        raise NotImplementedError

    def render(self) -> Observation:
        img = self._render_clean()
        if self.observation_noise > 0.0:
            img = img + self.rng.normal(0.0, self.observation_noise, size=img.shape)
        return Observation.from_array(np.clip(img, 0.0, 1.0))

    def true_state(self) -> np.ndarray:
        """Evaluation-only peek at the hidden state."""
        return np.asarray(self.state, dtype=np.float64).copy()


class CraneEnv(Environment):
    """2-DOF gantry: state (boom b, cable c) in [0,1]^2.

    Actions: 0=left (b-0.02), 1=right (b+0.02), 2=up (c-0.02),
    3=down (c+0.02), each plus Gaussian transition noise on both axes,
    saturating at the limits.
    """

    kind = "crane"
    width = 64
    height = 48
    STRIDE = 0.02

    BACKGROUND = (0.82, 0.85, 0.88)
    BOOM = (0.30, 0.30, 0.35)
    TROLLEY = (0.75, 0.15, 0.12)
    CABLE = (0.35, 0.35, 0.35)
    LOAD = (0.10, 0.25, 0.65)

    def __init__(self, transition_noise: float = 0.005, observation_noise: float = 0.01):
        super().__init__(transition_noise, observation_noise)
        self.state = np.array([0.5, 0.5])

    @property
    def action_space(self) -> ActionSpace:
        return ActionSpace.discrete(4)

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng([seed, 0])
        self.state = self.rng.uniform(0.1, 0.9, size=2)
        self.terminated = False
        return self.true_state()

    def step(self, u: np.ndarray) -> np.ndarray:
        idx = self.action_space.index_of(self.action_space.validate(u))
        delta = np.zeros(2)
        delta[0] = (-self.STRIDE, self.STRIDE, 0.0, 0.0)[idx]
        delta[1] = (0.0, 0.0, -self.STRIDE, self.STRIDE)[idx]
        if self.transition_noise > 0.0:
            delta += self.rng.normal(0.0, self.transition_noise, size=2)
        self.state = np.clip(self.state + delta, 0.0, 1.0)
        return self.true_state()

    def _render_clean(self) -> np.ndarray:
        # the load block is wider than tall so that horizontal (boom) and
        # vertical (cable) motion disturb comparable pixel area: the belief
        # estimator needs both axes visible at similar image-space scale
        b, c = self.state
        w, h = self.width, self.height
        img = np.empty((h, w, 3))
        img[:] = self.BACKGROUND
        fill_rect(img, 0, w, 0, 2.5, self.BOOM)
        tx = 20.0 + b * (w - 40.0)  # trolley center, kept inside the frame
        fill_rect(img, tx - 2.0, tx + 2.0, 1.5, 5.0, self.TROLLEY)
        load_top = 4.0 + c * (h - 19.0)
        fill_rect(img, tx - 0.5, tx + 0.5, 5.0, load_top, self.CABLE)
        fill_rect(img, tx - 6.0, tx + 6.0, load_top, load_top + 14.0, self.LOAD)
        return img


# default warehouse floor: one central pallet stack; the free ring keeps a
# bootstrap random walk covering the whole floor while still forcing plans
# to route around the block
DEFAULT_OBSTACLES = [
    (0.38, 0.35, 0.62, 0.68),
]


class WarehouseEnv(Environment):
    """Point robot on a walled floor; goal region in the far corner.

    Actions: 0=left, 1=right, 2=up, 3=down with stride 0.02, Gaussian
    transition noise, wall collisions saturating per axis.
    """

    kind = "warehouse"
    width = 64
    height = 48
    STRIDE = 0.02
    AGENT_R = 0.035  # half-size in unit coords

    FLOOR = (0.88, 0.88, 0.84)
    WALL = (0.18, 0.20, 0.24)
    GOAL = (0.10, 0.75, 0.20)
    AGENT = (0.85, 0.10, 0.10)

    def __init__(
        self,
        transition_noise: float = 0.005,
        observation_noise: float = 0.01,
        layout_seed: Optional[int] = None,
        goal: tuple[float, float] = (0.78, 0.50),
        goal_radius: float = 0.09,
        goal_terminates: bool = False,
    ):
        super().__init__(transition_noise, observation_noise)
        self.goal = np.asarray(goal, dtype=np.float64)
        self.goal_radius = float(goal_radius)
        self.goal_terminates = bool(goal_terminates)
        if layout_seed is None:
            self.obstacles = list(DEFAULT_OBSTACLES)
        else:
            self.obstacles = self._random_layout(layout_seed)
        self.state = np.array([0.1, 0.1])

    def _random_layout(self, layout_seed: int) -> list[tuple[float, float, float, float]]:
        rng = np.random.default_rng(layout_seed)
        obstacles = []
        while len(obstacles) < 2:
            x0 = rng.uniform(0.15, 0.6)
            y0 = rng.uniform(0.0, 0.5)
            rect = (x0, y0, x0 + rng.uniform(0.1, 0.2), y0 + rng.uniform(0.3, 0.5))
            if not self._point_in_rect(self.goal, rect, margin=self.goal_radius + 0.05):
                obstacles.append(rect)
        return obstacles

    @staticmethod
    def _point_in_rect(p, rect, margin=0.0) -> bool:
        x0, y0, x1, y1 = rect
        return (x0 - margin <= p[0] <= x1 + margin) and (y0 - margin <= p[1] <= y1 + margin)

    @property
    def action_space(self) -> ActionSpace:
        return ActionSpace.discrete(4)

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng([seed, 0])
        while True:
            candidate = self.rng.uniform(0.05, 0.95, size=2)
            if not self._collides(candidate) and not self.at_goal(candidate):
                break
        self.state = candidate
        self.terminated = False
        return self.true_state()

    def _collides(self, p: np.ndarray) -> bool:
        return any(self._point_in_rect(p, rect, margin=self.AGENT_R) for rect in self.obstacles)

    def at_goal(self, p: Optional[np.ndarray] = None) -> bool:
        p = self.state if p is None else p
        return bool(np.linalg.norm(p - self.goal) <= self.goal_radius)

    def step(self, u: np.ndarray) -> np.ndarray:
        idx = self.action_space.index_of(self.action_space.validate(u))
        delta = np.zeros(2)
        delta[0] = (-self.STRIDE, self.STRIDE, 0.0, 0.0)[idx]
        delta[1] = (0.0, 0.0, -self.STRIDE, self.STRIDE)[idx]
        if self.transition_noise > 0.0:
            delta += self.rng.normal(0.0, self.transition_noise, size=2)
        # axis-separable move with saturation at walls and obstacles
        for axis in range(2):
            trial = self.state.copy()
            trial[axis] = np.clip(trial[axis] + delta[axis], 0.0, 1.0)
            if not self._collides(trial):
                self.state = trial
        if self.goal_terminates and self.at_goal():
            self.terminated = True
        return self.true_state()

    def _render_clean(self) -> np.ndarray:
        w, h = self.width, self.height
        img = np.empty((h, w, 3))
        img[:] = self.FLOOR
        for x0, y0, x1, y1 in self.obstacles:
            fill_rect(img, x0 * w, x1 * w, y0 * h, y1 * h, self.WALL)
        gx, gy = self.goal[0] * w, self.goal[1] * h
        fill_rect(img, gx - 4.0, gx + 4.0, gy - 4.0, gy + 4.0, self.GOAL)
        ax, ay = self.state[0] * w, self.state[1] * h
        fill_rect(img, ax - 3.0, ax + 3.0, ay - 3.0, ay + 3.0, self.AGENT)
        return img


class RampEnv(Environment):
    """1-D brightness ramp: the whole frame is as bright as the state.

    Oracle fixture for belief estimation; noiseless by default.
    """

    kind = "ramp-test"
    width = 16
    height = 12
    STRIDE = 0.02

    def __init__(self, transition_noise: float = 0.0, observation_noise: float = 0.0):
        super().__init__(transition_noise, observation_noise)
        self.state = np.array([0.5])

    @property
    def action_space(self) -> ActionSpace:
        return ActionSpace.discrete(2)

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng([seed, 0])
        self.state = self.rng.uniform(0.05, 0.95, size=1)
        self.terminated = False
        return self.true_state()

    def step(self, u: np.ndarray) -> np.ndarray:
        idx = self.action_space.index_of(self.action_space.validate(u))
        delta = -self.STRIDE if idx == 0 else self.STRIDE
        if self.transition_noise > 0.0:
            delta += float(self.rng.normal(0.0, self.transition_noise))
        self.state = np.clip(self.state + delta, 0.0, 1.0)
        return self.true_state()

    def _render_clean(self) -> np.ndarray:
        img = np.empty((self.height, self.width, 3))
        img[:] = self.state[0]
        return img


class CorridorEnv(Environment):
    """Cue-then-junction memory task (the aliasing fixture).

    The agent starts on a colored cue cell, walks down a corridor whose
    cells all look identical, and at the junction must turn in the
    direction the cue dictated. State is (position 0..4, cue 0|1);
    observations at the junction are identical for both cues, so no
    memoryless mapping from observations to actions can exceed chance.

    Actions: 0=forward, 1=left turn, 2=right turn. Turning anywhere but
    the junction does nothing; at the junction it ends the episode, with
    success iff the turn matches the cue (0->left, 1->right).
    """

    kind = "corridor"
    width = 16
    height = 12
    LENGTH = 4  # junction position

    CUE_COLORS = ((0.85, 0.15, 0.10), (0.10, 0.80, 0.15))
    HALL = (0.5, 0.5, 0.5)
    JUNCTION = (0.95, 0.95, 0.95)

    def __init__(self, transition_noise: float = 0.0, observation_noise: float = 0.0):
        super().__init__(transition_noise, observation_noise)
        self.state = np.array([0.0, 0.0])
        self.success = False

    @property
    def action_space(self) -> ActionSpace:
        return ActionSpace.discrete(3)

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng([seed, 0])
        self.state = np.array([0.0, float(self.rng.integers(0, 2))])
        self.terminated = False
        self.success = False
        return self.true_state()

    def step(self, u: np.ndarray) -> np.ndarray:
        if self.terminated:
            return self.true_state()
        idx = self.action_space.index_of(self.action_space.validate(u))
        pos, cue = int(self.state[0]), int(self.state[1])
        if idx == 0 and pos < self.LENGTH:
            pos += 1
        elif idx in (1, 2) and pos == self.LENGTH:
            self.terminated = True
            self.success = (idx == 1) == (cue == 0)
        self.state = np.array([float(pos), float(cue)])
        return self.true_state()

    def _render_clean(self) -> np.ndarray:
        pos, cue = int(self.state[0]), int(self.state[1])
        img = np.empty((self.height, self.width, 3))
        if pos == 0:
            img[:] = self.CUE_COLORS[cue]
        elif pos < self.LENGTH:
            img[:] = self.HALL
        else:
            img[:] = self.JUNCTION
        return img


ENV_KINDS = {
    "crane": CraneEnv,
    "warehouse": WarehouseEnv,
    "ramp-test": RampEnv,
    "corridor": CorridorEnv,
}


def make_env(kind: str, **kwargs) -> Environment:
    if kind not in ENV_KINDS:
        raise PreconditionError(f"unknown environment kind {kind!r}; choose from {sorted(ENV_KINDS)}")
    return ENV_KINDS[kind](**kwargs)
