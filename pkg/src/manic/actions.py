"""Action-space descriptor shared by the environments and the planner."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import PreconditionError, ShapeError


def one_hot(index: int, n: int) -> np.ndarray:
    u = np.zeros(n)
    u[index] = 1.0
    return u


@dataclass
class ActionSpace:
    """Either a discrete one-hot set or a box of continuous action vectors."""

    kind: str  # "discrete" | "continuous"
    n: int = 0
    low: Optional[np.ndarray] = None
    high: Optional[np.ndarray] = None

    @classmethod
    def discrete(cls, n: int) -> "ActionSpace":
        if n < 1:
            raise PreconditionError("discrete action space needs n >= 1")
        return cls(kind="discrete", n=n)

    @classmethod
    def continuous(cls, low, high) -> "ActionSpace":
        low = np.asarray(low, dtype=np.float64)
        high = np.asarray(high, dtype=np.float64)
        if low.shape != high.shape or np.any(low >= high):
            raise PreconditionError("continuous bounds must satisfy low < high elementwise")
        return cls(kind="continuous", n=low.size, low=low, high=high)

    @property
    def dims(self) -> int:
        return self.n

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "discrete":
            return one_hot(int(rng.integers(0, self.n)), self.n)
        return rng.uniform(self.low, self.high)

    def mutate(self, rng: np.random.Generator, action: np.ndarray, sigma: float = 0.1) -> np.ndarray:
        """Mutation operator: resample for discrete, Gaussian bump (clamped
        to the bounds) for continuous."""
        if self.kind == "discrete":
            return one_hot(int(rng.integers(0, self.n)), self.n)
        return np.clip(action + rng.normal(0.0, sigma, size=self.n), self.low, self.high)

    def index_of(self, action: np.ndarray) -> int:
        """One-hot action back to its index (discrete only)."""
        if self.kind != "discrete":
            raise PreconditionError("index_of only applies to discrete spaces")
        action = np.asarray(action)
        if action.shape != (self.n,):
            raise ShapeError(f"action has shape {action.shape}, expected ({self.n},)")
        return int(np.argmax(action))

    def validate(self, action: np.ndarray) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.n,):
            raise ShapeError(f"action has shape {action.shape}, expected ({self.n},)")
        if self.kind == "discrete":
            ones = np.isclose(action, 1.0)
            if ones.sum() != 1 or not np.all(np.isclose(action[~ones], 0.0)):
                raise PreconditionError(f"discrete action must be one-hot, got {action}")
        return action
