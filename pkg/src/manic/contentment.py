"""The contentment model: scalar utility over beliefs, and how it trains.

Two training paths exist. The primary one is preference learning: a
teacher ranks imagined plan rollouts, rankings decompose into pairwise
comparisons, and the model fits a pairwise logistic (Bradley-Terry) loss
on the difference of plan utilities. The fallback is an evolutionary loop
that perturbs the model's parameters and keeps whatever scores best in
closed-loop episodes.

Plan utility aggregates per-step contentment with a discounted mean
(gamma = 0.97): utility is something maintained over time, not a terminal
payoff.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .environments import Environment
from .errors import DivergedError, PreconditionError, ShapeError, StoreError
from .learning import LearningSystem
from .net import Approximator, init_network

GAMMA = 0.97


@dataclass
class ContentmentModel:
    """Wraps the utility network h: belief (d,) -> scalar."""

    h: Approximator

    @property
    def d(self) -> int:
        return self.h.in_dim

    def contentment(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.d,):
            raise ShapeError(f"belief has shape {v.shape}, expected ({self.d},)")
        return float(self.h.forward(v)[0])

    def plan_utility(self, beliefs: Sequence[np.ndarray]) -> float:
        """Discounted mean of h over a belief trace."""
        if len(beliefs) == 0:
            raise PreconditionError("plan utility needs a non-empty belief trace")
        weights = GAMMA ** np.arange(len(beliefs))
        total = 0.0
        for w, v in zip(weights, beliefs):
            total += w * self.contentment(v)
        return total / float(weights.sum())

    def copy(self) -> "ContentmentModel":
        return ContentmentModel(h=self.h.copy())


def make_contentment(d: int, hidden: Sequence[int] = (16,), seed: int = 0) -> ContentmentModel:
    return ContentmentModel(h=init_network([d, *hidden, 1], seed))


@dataclass
class PreferenceRecord:
    """One persisted teacher judgment: a total order over candidate ids."""

    session_id: str
    timestamp_ms: int
    ordering: list[str]  # best -> worst
    pairs: list[tuple[str, str]] = field(default_factory=list)  # (winner, loser)

    def __post_init__(self):
        if len(self.ordering) < 2:
            raise PreconditionError("an ordering needs at least 2 candidates")
        if len(set(self.ordering)) != len(self.ordering):
            raise PreconditionError("ordering contains duplicate ids")
        if not self.pairs:
            self.pairs = expand_pairs(self.ordering)

    def to_json(self) -> str:
        return json.dumps({
            "session_id": self.session_id,
            "timestamp_ms": self.timestamp_ms,
            "ordering": self.ordering,
            "pairs": [list(p) for p in self.pairs],
        })

    @classmethod
    def from_json(cls, line: str) -> "PreferenceRecord":
        doc = json.loads(line)
        return cls(
            session_id=doc["session_id"],
            timestamp_ms=doc["timestamp_ms"],
            ordering=list(doc["ordering"]),
            pairs=[tuple(p) for p in doc["pairs"]],
        )

    @classmethod
    def now(cls, session_id: str, ordering: Sequence[str]) -> "PreferenceRecord":
        return cls(session_id=session_id, timestamp_ms=int(time.time() * 1000),
                   ordering=list(ordering))


def expand_pairs(ordering: Sequence[str]) -> list[tuple[str, str]]:
    """All n*(n-1)/2 (winner, loser) pairs implied by a total order."""
    return [(ordering[i], ordering[j])
            for i in range(len(ordering)) for j in range(i + 1, len(ordering))]


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def pairwise_loss_and_grads(
    cm: ContentmentModel,
    winner_trace: Sequence[np.ndarray],
    loser_trace: Sequence[np.ndarray],
):
    """Logistic ranking loss -log sigma(U_w - U_l) and its h-parameter
    gradients (summed per layer, same layout as Approximator.backprop)."""
    margin = cm.plan_utility(winner_trace) - cm.plan_utility(loser_trace)
    p = _sigmoid(margin)
    loss = -np.log(max(p, 1e-300))
    dmargin = -(1.0 - p)  # dL/dmargin
    w_tot = [np.zeros_like(w) for w in cm.h.weights]
    b_tot = [np.zeros_like(b) for b in cm.h.biases]
    for trace, sign in ((winner_trace, 1.0), (loser_trace, -1.0)):
        weights = GAMMA ** np.arange(len(trace))
        weights = weights / weights.sum()
        for coef, v in zip(weights, trace):
            out_grad = np.array([dmargin * sign * coef])
            w_grads, b_grads, _ = cm.h.backprop(np.asarray(v, dtype=np.float64), out_grad)
            for l in range(len(w_tot)):
                w_tot[l] += w_grads[l]
                b_tot[l] += b_grads[l]
    return loss, w_tot, b_tot


@dataclass
class PreferenceReport:
    pairs_used: int
    heldout_pairs: int
    train_accuracy: float
    heldout_accuracy: float
    final_loss: float


def train_preferences(
    cm: ContentmentModel,
    prefs: Sequence[PreferenceRecord],
    trace_of: Mapping[str, Sequence[np.ndarray]] | Callable[[str], Sequence[np.ndarray]],
    epochs: int,
    rate: float,
    holdout_frac: float = 0.2,
    seed: int = 0,
) -> PreferenceReport:
    """Fit h to ranked preferences; only h's parameters move.

    `trace_of` resolves a candidate id to its belief trace (the service
    supplies a resolver backed by its store and the learning system).
    Reports pair accuracy on a held-out split of the pairs.
    """
    lookup = trace_of if callable(trace_of) else trace_of.__getitem__
    pairs = []
    for rec in prefs:
        pairs.extend(rec.pairs)
    if not pairs:
        raise PreconditionError("no preference pairs to train on")
    traces = {}
    for winner, loser in pairs:
        for cid in (winner, loser):
            if cid not in traces:
                try:
                    traces[cid] = [np.asarray(v, dtype=np.float64) for v in lookup(cid)]
                except KeyError as exc:
                    raise StoreError(f"unresolvable belief trace reference {cid!r}") from exc
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_hold = int(np.floor(len(pairs) * holdout_frac))
    hold_idx = set(order[:n_hold].tolist())
    train_pairs = [pairs[i] for i in order[n_hold:]]
    hold_pairs = [pairs[i] for i in order[:n_hold]]

    loss = 0.0
    for _ in range(epochs):
        loss = 0.0
        for winner, loser in train_pairs:
            step_loss, w_grads, b_grads = pairwise_loss_and_grads(
                cm, traces[winner], traces[loser])
            if not np.isfinite(step_loss):
                raise DivergedError("ranking loss diverged")
            for l in range(len(w_grads)):
                cm.h.weights[l] -= rate * w_grads[l]
                cm.h.biases[l] -= rate * b_grads[l]
            loss += step_loss
        loss /= max(1, len(train_pairs))

    def accuracy(pair_list):
        if not pair_list:
            return float("nan")
        wins = sum(
            cm.plan_utility(traces[w]) > cm.plan_utility(traces[l])
            for w, l in pair_list
        )
        return wins / len(pair_list)

    return PreferenceReport(
        pairs_used=len(pairs),
        heldout_pairs=len(hold_pairs),
        train_accuracy=accuracy(train_pairs),
        heldout_accuracy=accuracy(hold_pairs) if hold_pairs else accuracy(train_pairs),
        final_loss=loss,
    )


def train_contentment_regression(
    cm: ContentmentModel,
    beliefs: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    rate: float,
    seed: int = 0,
    optimizer: str = "sgd",
    batch: int = 64,
) -> list[float]:
    """Supervised fit of h to scalar targets (goal-distance shaping and
    synthetic-teacher fixtures); per-sample SGD or mini-batched Adam."""
    from .net import AdamTrainer

    rng = np.random.default_rng(seed)
    beliefs = np.asarray(beliefs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    losses = []
    if optimizer == "adam":
        opt = AdamTrainer(cm.h, lr=rate)
        x_all = beliefs.T
        t_all = targets[None, :]
        for _ in range(epochs):
            order = rng.permutation(len(beliefs))
            total = 0.0
            n = 0
            for lo in range(0, len(order), batch):
                sel = order[lo:lo + batch]
                total += opt.step(x_all[:, sel], t_all[:, sel])
                n += 1
            losses.append(total / max(1, n))
        return losses
    for _ in range(epochs):
        order = rng.permutation(len(beliefs))
        total = 0.0
        for i in order:
            total += cm.h.train_step(beliefs[i], [targets[i]], rate)
        losses.append(total / len(beliefs))
    return losses


def evolve_contentment(
    env: Environment,
    ls: LearningSystem,
    fitness: Callable[[ContentmentModel, Environment, LearningSystem], float],
    population: int,
    generations: int,
    seed: int,
    hidden: Sequence[int] = (16,),
    sigma: float = 0.05,
) -> ContentmentModel:
    """(mu+lambda) evolution over h parameter vectors.

    Candidate 0 starts unperturbed, the rest are Gaussian jitters of it;
    each generation keeps the top half by fitness (ties to the lower
    index) and refills with sigma-jittered copies of survivors. The best
    candidate ever seen is returned, so best fitness never decreases.
    """
    if population < 2:
        raise PreconditionError("population must be >= 2")
    if generations < 1:
        raise PreconditionError("generations must be >= 1")
    rng = np.random.default_rng(seed)
    base = make_contentment(ls.d, hidden=hidden, seed=seed)
    n_params = base.h.num_params()
    genomes = [base.h.get_flat_params()]
    for _ in range(population - 1):
        genomes.append(genomes[0] + rng.normal(0.0, sigma, size=n_params))

    def score(genome: np.ndarray) -> float:
        candidate = base.copy()
        candidate.h.set_flat_params(genome)
        return float(fitness(candidate, env, ls))

    best_genome = None
    best_fitness = -np.inf
    mu = population // 2
    for _ in range(generations):
        scores = np.array([score(g) for g in genomes])
        ranked = sorted(range(population), key=lambda i: (-scores[i], i))
        if scores[ranked[0]] > best_fitness:
            best_fitness = float(scores[ranked[0]])
            best_genome = genomes[ranked[0]].copy()
        survivors = [genomes[i] for i in ranked[:mu]]
        children = []
        for j in range(population - mu):
            parent = survivors[j % mu]
            children.append(parent + rng.normal(0.0, sigma, size=n_params))
        genomes = survivors + children
    winner = base.copy()
    winner.h.set_flat_params(best_genome)
    return winner
