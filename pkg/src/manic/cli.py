"""Pipeline driver: collect -> bootstrap -> pretrain -> run -> eval -> teach.

Exit codes: 0 success, 2 usage or precondition failure, 3 runtime failure
(diverged training, corrupt artifacts). Output directories take a
lockfile for the duration of a run so concurrent invocations cannot
interleave writes; every command drops the resolved config (with its
hash) beside its outputs.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bootstrap as bs
from .actions import ActionSpace
from .agent import AgentConfig, ManicAgent, run_episode
from .config import RunConfig, load_config
from .contentment import (
    ContentmentModel,
    evolve_contentment,
    make_contentment,
    train_contentment_regression,
)
from .environments import make_env
from .errors import DivergedError, FormatError, ManicError, PreconditionError
from .learning import LearningSystem
from .net import load_model
from . import report as rpt


@contextlib.contextmanager
def output_lock(target: Path):
    """Exclusive lockfile next to (or inside) the output target."""
    lock = target / ".manic.lock" if target.is_dir() or not target.suffix \
        else target.with_suffix(target.suffix + ".lock")
    lock.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PreconditionError(f"output is locked by another run: {lock}")
    try:
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(lock)


def _require_exists(path: Path, what: str) -> Path:
    if not path.exists():
        raise PreconditionError(f"{what} not found: {path}")
    return path


def _build_env(cfg: RunConfig):
    return make_env(cfg.environment, transition_noise=cfg.transition_noise,
                    observation_noise=cfg.observation_noise)


def cmd_collect(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.steps is not None:
        steps = args.steps
    else:
        steps = 1000
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    if out.exists() and not args.force:
        raise PreconditionError(f"{out} exists; use --force to overwrite")
    env = _build_env(cfg)
    with output_lock(out):
        ds = bs.collect_random_walk(env, steps=steps, seed=cfg.seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        ds.save(out)
        cfg.save(out.with_suffix(out.suffix + ".config.json"))
    print(f"wrote {out} (T={len(ds)}, {ds.width}x{ds.height}x{ds.channels}, "
          f"config {cfg.config_hash()})")
    return 0


def cmd_bootstrap(args) -> int:
    cfg = load_config(args.config, args.set)
    in_path = _require_exists(Path(args.input), "dataset")
    out = Path(args.out)
    if out.exists() and not args.force:
        raise PreconditionError(f"{out} exists; use --force to overwrite")
    d = args.dims if args.dims is not None else cfg.belief_dims
    k = args.k if args.k is not None else cfg.nldr_k
    ds = bs.WalkDataset.load(in_path)
    with output_lock(out):
        be = bs.estimate_beliefs(ds, d=d, k=k)
        out.parent.mkdir(parents=True, exist_ok=True)
        be.save(out)
        cfg.save(out.with_suffix(out.suffix + ".config.json"))
    line = f"wrote {out} (T={len(be)}, d={be.d})"
    if ds.true_states is not None and ds.true_states.shape[1] == be.d:
        r2 = rpt.affine_alignment_r2(be.beliefs, ds.true_states)
        line += " alignment R2: " + " ".join(f"{v:.3f}" for v in r2)
    print(line)
    return 0


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, args.set)
    ds = bs.WalkDataset.load(_require_exists(Path(args.input), "dataset"))
    be = bs.BeliefEstimates.load(_require_exists(Path(args.beliefs), "beliefs"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    epochs = args.epochs if args.epochs is not None else cfg.epochs
    tc = bs.TrainConfig(
        epochs=epochs, rate=cfg.rate, f_hidden=cfg.f_hidden, g_hidden=cfg.g_hidden,
        g_plus_hidden=cfg.g_plus_hidden, pixels_per_frame=cfg.pixels_per_frame,
        holdout_frac=cfg.holdout_frac, with_encoder=cfg.with_encoder, seed=cfg.seed,
    )
    with output_lock(out):
        ls, log = bs.pretrain(ds, be, tc)
        ls.save(out)
        cfg.save(out / "config.json")
        metrics = {
            "config_hash": cfg.config_hash(),
            "final_losses": log.final_losses(),
            "heldout_one_step_rms": bs.heldout_one_step_rms(ls, ds, be, cfg.holdout_frac),
        }
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
        rpt.save_training_curve_figure(
            {"transition": log.f_losses, "decoder(frame)": log.g_frame_losses,
             "encoder": log.g_plus_losses}, out / "training_curves.png")
    print(f"wrote {out} losses={log.final_losses()} "
          f"one-step RMS={metrics['heldout_one_step_rms']:.4f}")
    return 0


def _load_contentment(path: Path, d: int) -> ContentmentModel:
    if path is not None and Path(path).exists():
        return ContentmentModel(h=load_model(path))
    return make_contentment(d)


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.steps < 1:
        raise PreconditionError("--steps must be >= 1")
    ls = LearningSystem.load(_require_exists(Path(args.model), "model directory"))
    cm = _load_contentment(args.contentment and Path(args.contentment), ls.d)
    env = _build_env(cfg)
    env.reset(cfg.seed)
    agent_cfg = AgentConfig(
        belief_dims=ls.d, horizon=cfg.horizon, pool_size=cfg.pool_size,
        refine_iterations=cfg.refine_iterations, encoder_mode=cfg.encoder_mode,
        refine_steps=cfg.refine_steps, refine_rate=cfg.refine_rate,
        online_learning=cfg.online_learning, online_rate=cfg.online_rate,
        track_error_signal=cfg.track_error_signal, planner_seed=cfg.seed,
    )
    agent = ManicAgent(ls, cm, env.action_space, agent_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with output_lock(out):
        trace = run_episode(agent, env, steps=args.steps)
        trace.save_jsonl(out / "trace.jsonl", frames=args.frames)
        cfg.save(out / "config.json")
        norms = [e for e in trace.error_norms() if e is not None]
        summary = {
            "config_hash": cfg.config_hash(),
            "steps": len(trace),
            "mean_error_norm": float(np.mean(norms)) if norms else None,
            "final_state": env.true_state().tolist(),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"ran {len(trace)} steps; summary in {out}/summary.json")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    ls = LearningSystem.load(_require_exists(Path(args.model), "model directory"))
    ds = bs.WalkDataset.load(_require_exists(Path(args.data), "dataset"))
    be = bs.BeliefEstimates.load(_require_exists(Path(args.beliefs), "beliefs"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with output_lock(out):
        metrics = {"config_hash": cfg.config_hash()}
        # belief-state alignment against recorded ground truth
        if ds.true_states is not None:
            r2 = rpt.affine_alignment_r2(be.beliefs, ds.true_states)
            metrics["alignment_r2"] = r2
            rpt.write_csv(out / "alignment.csv",
                          ["dim", "r_squared"],
                          [[i, v] for i, v in enumerate(r2)])
            if ds.true_states.shape[1] >= 2 and be.d >= 2:
                rpt.save_state_alignment_figure(
                    ds.true_states, be.beliefs, r2, out / "state_alignment.png")
        # open-loop rollout error against frame persistence
        horizon = args.rollout
        start = bs.train_split(len(ds), cfg.holdout_frac)
        starts = [t for t in range(start, len(ds) - horizon)][: args.rollout_starts]
        model_err = np.zeros(horizon)
        base_err = np.zeros(horizon)
        for t0 in starts:
            v = be.beliefs[t0]
            for j in range(horizon):
                v = ls.predict_transition(v, ds.actions[t0 + j])
                pred = ls.decode_frame(v)
                truth = ds.frames[t0 + j + 1]
                model_err[j] += np.mean(np.abs(pred.pixels - truth))
                base_err[j] += np.mean(np.abs(ds.frames[t0] - truth))
        if starts:
            model_err /= len(starts)
            base_err /= len(starts)
            metrics["rollout_mean_error"] = float(model_err.mean())
            metrics["persistence_mean_error"] = float(base_err.mean())
            rpt.write_csv(out / "rollout_errors.csv",
                          ["steps_ahead", "model_error", "persistence_error"],
                          [[j + 1, model_err[j], base_err[j]] for j in range(horizon)])
            rpt.save_rollout_error_figure(model_err, base_err, out / "rollout_error.png")
        metrics["heldout_one_step_rms"] = bs.heldout_one_step_rms(
            ls, ds, be, cfg.holdout_frac)
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
        cfg.save(out / "config.json")
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_teach(args) -> int:
    from .teacher import CandidateStore, TeacherContext, generate_candidates, serve

    cfg = load_config(args.config, args.set)
    ls = LearningSystem.load(_require_exists(Path(args.model), "model directory"))
    cm = _load_contentment(args.contentment and Path(args.contentment), ls.d)
    store = CandidateStore(args.store_dir)
    ctx = TeacherContext(store=store, ls=ls, cm=cm, agent_mode=cfg.encoder_mode)
    if args.generate > 0:
        env = _build_env(cfg)
        env.reset(cfg.seed)
        agent_cfg = AgentConfig(
            belief_dims=ls.d, horizon=cfg.horizon, pool_size=cfg.pool_size,
            refine_iterations=cfg.refine_iterations, encoder_mode=cfg.encoder_mode,
            refine_steps=cfg.refine_steps, track_error_signal=False,
            planner_seed=cfg.seed)
        agent = ManicAgent(ls, cm, env.action_space, agent_cfg)
        agent.step(env.render())
        generate_candidates(agent, n=args.generate, diversity_seed=cfg.seed, store=store)
        print(f"generated {args.generate} candidates into {args.store_dir}")
    print(f"serving teacher API on port {args.port}")
    serve(ctx, port=args.port, static_dir=args.static_dir)
    return 0


def cmd_evolve(args) -> int:
    cfg = load_config(args.config, args.set)
    ls = LearningSystem.load(_require_exists(Path(args.model), "model directory"))
    env = _build_env(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def episode_return(cm, env, ls):
        # closed-loop score: how close the agent ends to the goal, averaged
        # over a couple of seeded episodes
        total = 0.0
        for ep_seed in range(args.episodes):
            env.reset(cfg.seed + ep_seed)
            agent_cfg = AgentConfig(
                belief_dims=ls.d, horizon=cfg.horizon, pool_size=cfg.pool_size,
                refine_iterations=cfg.refine_iterations, encoder_mode=cfg.encoder_mode,
                refine_steps=cfg.refine_steps, track_error_signal=False,
                planner_seed=cfg.seed)
            agent = ManicAgent(ls, cm, env.action_space, agent_cfg)
            run_episode(agent, env, steps=args.steps)
            if hasattr(env, "goal"):
                total -= float(np.linalg.norm(env.true_state() - env.goal))
            else:
                total -= float(np.linalg.norm(env.true_state() - 0.5))
        return total / args.episodes

    with output_lock(out):
        winner = evolve_contentment(
            env, ls, episode_return, population=args.population,
            generations=args.generations, seed=cfg.seed,
            hidden=cfg.contentment_hidden)
        winner.h.save(out / "contentment.mncm")
        cfg.save(out / "config.json")
    print(f"wrote {out}/contentment.mncm")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manic",
        description="model-based agent pipeline: collect, estimate beliefs, "
                    "train, run, evaluate, teach")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config entry")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="record a random walk dataset")
    p.add_argument("--env", dest="env", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("bootstrap", help="estimate beliefs from a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--dims", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("pretrain", help="train the learning system on estimated beliefs")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--beliefs", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="run a closed-loop agent episode")
    p.add_argument("--model", required=True)
    p.add_argument("--contentment", default=None)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--frames", choices=("inline", "png"), default="png")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="report alignment and rollout error tables/figures")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--beliefs", required=True)
    p.add_argument("--rollout", type=int, default=50)
    p.add_argument("--rollout-starts", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("teach", help="serve the teacher ranking API")
    p.add_argument("--model", required=True)
    p.add_argument("--contentment", default=None)
    p.add_argument("--store-dir", required=True)
    p.add_argument("--static-dir", default=None)
    p.add_argument("--port", type=int, default=8421)
    p.add_argument("--generate", type=int, default=0)
    p.set_defaults(func=cmd_teach)

    p = sub.add_parser("evolve", help="evolve a contentment model by episode return")
    p.add_argument("--model", required=True)
    p.add_argument("--population", type=int, default=8)
    p.add_argument("--generations", type=int, default=5)
    p.add_argument("--episodes", type=int, default=2)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evolve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "env", None):
        args.set = list(args.set) + [f"environment={args.env}"]
    try:
        return args.func(args)
    except (PreconditionError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergedError, ManicError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
