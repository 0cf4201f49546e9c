"""Plan pool refined by simulated evolution.

The decision loop keeps N fixed-horizon action sequences, scores each by
rolling it out through the learned transition model and aggregating
contentment over the imagined trace, and improves the pool with a plain
generational GA (tournament selection, single-point crossover, per-step
mutation, one elite). Mutating operations invalidate cached scores;
reading a stale pool is an error rather than silent misbehavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .actions import ActionSpace
from .contentment import ContentmentModel
from .errors import PreconditionError, StaleScoresError
from .learning import LearningSystem


@dataclass
class PlanPool:
    """N plans of horizon L; scores are None until evaluate() runs."""

    plans: np.ndarray  # (N, L, a_dims)
    action_space: ActionSpace
    rng: np.random.Generator
    scores: Optional[np.ndarray] = None
    elite_index: Optional[int] = None
    crossover_p: float = 0.7
    mutation_p: float = 0.2
    tournament: int = 2
    mutation_sigma: float = 0.1

    @property
    def size(self) -> int:
        return self.plans.shape[0]

    @property
    def horizon(self) -> int:
        return self.plans.shape[1]

    def require_scores(self) -> np.ndarray:
        if self.scores is None:
            raise StaleScoresError("pool must be evaluated before this operation")
        return self.scores


def init_pool(
    n: int,
    horizon: int,
    action_space: ActionSpace,
    seed: int,
    **ga_params,
) -> PlanPool:
    """N uniformly random plans; deterministic in the seed."""
    if n < 1 or horizon < 1:
        raise PreconditionError(f"need n >= 1 and horizon >= 1, got ({n}, {horizon})")
    rng = np.random.default_rng(seed)
    plans = np.empty((n, horizon, action_space.dims))
    for i in range(n):
        for t in range(horizon):
            plans[i, t] = action_space.sample(rng)
    return PlanPool(plans=plans, action_space=action_space, rng=rng, **ga_params)


def evaluate(pool: PlanPool, ls: LearningSystem, cm: ContentmentModel,
             v0: np.ndarray) -> PlanPool:
    """Score every plan: utility of its imagined belief trace from v0."""
    scores = np.empty(pool.size)
    for i in range(pool.size):
        scores[i] = cm.plan_utility(ls.rollout(v0, pool.plans[i]))
    pool.scores = scores
    pool.elite_index = int(np.argmax(scores))
    return pool


def _tournament_pick(pool: PlanPool) -> int:
    contenders = pool.rng.integers(0, pool.size, size=pool.tournament)
    best = contenders[0]
    for c in contenders[1:]:
        if pool.scores[c] > pool.scores[best] or (
            pool.scores[c] == pool.scores[best] and c < best
        ):
            best = c
    return int(best)


def refine(pool: PlanPool, ls: LearningSystem, cm: ContentmentModel,
           v0: np.ndarray, iterations: int) -> PlanPool:
    """GA generations over the pool; the elite survives unchanged, so its
    score never decreases under a fixed (ls, cm, v0)."""
    pool.require_scores()
    for _ in range(iterations):
        new_plans = np.empty_like(pool.plans)
        new_plans[0] = pool.plans[pool.elite_index]
        for i in range(1, pool.size):
            a = pool.plans[_tournament_pick(pool)]
            b = pool.plans[_tournament_pick(pool)]
            child = a.copy()
            if pool.horizon > 1 and pool.rng.random() < pool.crossover_p:
                point = int(pool.rng.integers(1, pool.horizon))
                child[point:] = b[point:]
            for t in range(pool.horizon):
                if pool.rng.random() < pool.mutation_p:
                    child[t] = pool.action_space.mutate(
                        pool.rng, child[t], sigma=pool.mutation_sigma)
            new_plans[i] = child
        pool.plans = new_plans
        evaluate(pool, ls, cm, v0)
    return pool


def choose_action(pool: PlanPool) -> np.ndarray:
    """First action of the elite plan; pure read."""
    pool.require_scores()
    return pool.plans[pool.elite_index, 0].copy()


def advance(pool: PlanPool) -> PlanPool:
    """Shift every plan one step (the world moved on) and extend the tail
    with a fresh random action; scores become stale."""
    for i in range(pool.size):
        pool.plans[i, :-1] = pool.plans[i, 1:]
        pool.plans[i, -1] = pool.action_space.sample(pool.rng)
    pool.scores = None
    pool.elite_index = None
    return pool


def exhaustive_best(ls: LearningSystem, cm: ContentmentModel, v0: np.ndarray,
                    action_space: ActionSpace, horizon: int) -> tuple[float, np.ndarray]:
    """Brute-force the best plan over the full discrete plan space."""
    if action_space.kind != "discrete":
        raise PreconditionError("exhaustive search only covers discrete spaces")
    n = action_space.n
    best_score, best_plan = -np.inf, None
    plan_idx = np.zeros(horizon, dtype=int)
    total = n ** horizon
    for code in range(total):
        x = code
        for t in range(horizon):
            plan_idx[t] = x % n
            x //= n
        plan = np.zeros((horizon, n))
        plan[np.arange(horizon), plan_idx] = 1.0
        score = cm.plan_utility(ls.rollout(v0, plan))
        if score > best_score:
            best_score, best_plan = score, plan.copy()
    return best_score, best_plan
