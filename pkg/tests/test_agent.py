import json

import numpy as np
import pytest

from manic.actions import ActionSpace, one_hot
from manic.agent import (
    AgentConfig,
    ManicAgent,
    MemoryPolicyAgent,
    PolicyAgent,
    run_episode,
)
from manic.contentment import make_contentment
from manic.environments import CraneEnv, RampEnv, make_env
from manic.errors import PreconditionError
from manic.learning import Observation, build_learning_system, downsample, downsampled_len
from manic.net import init_network


def small_system(seed=0, with_encoder=True, encoder_extra=0):
    return build_learning_system(d=2, width=16, height=12, channels=3, a_dims=2,
                                 with_encoder=with_encoder,
                                 encoder_extra=encoder_extra, seed=seed)


def small_agent(config=None, seed=0, encoder_extra=0):
    ls = small_system(seed=seed, encoder_extra=encoder_extra)
    cm = make_contentment(2, hidden=(8,), seed=seed + 1)
    cfg = config or AgentConfig(belief_dims=2, horizon=3, pool_size=4,
                                refine_iterations=2, refine_steps=3,
                                track_error_signal=False)
    return ManicAgent(ls, cm, ActionSpace.discrete(2), cfg)


def ramp_obs(level=0.5):
    return Observation(width=16, height=12, channels=3,
                       pixels=np.full(16 * 12 * 3, level))


class TestAgentStep:
    def test_degenerate_single_plan(self):
        cfg = AgentConfig(belief_dims=2, horizon=1, pool_size=1,
                          refine_iterations=0, refine_steps=1,
                          track_error_signal=False)
        agent = small_agent(cfg)
        action = agent.step(ramp_obs())
        assert np.array_equal(action, agent.pool.plans[0, 0]) or action.sum() == 1.0
        assert action.shape == (2,)

    def test_state_machine_ordering(self):
        agent = small_agent()
        agent.step(ramp_obs())
        events = agent.last_step_events
        assert events.index("belief_update") < events.index("pool_evaluate")
        assert events.index("pool_evaluate") < events.index("action_choice")

    def test_identical_agents_identical_actions(self):
        def actions():
            env = RampEnv()
            env.reset(3)
            agent = small_agent()
            out = []
            for _ in range(10):
                a = agent.step(env.render())
                out.append(np.argmax(a))
                env.step(a)
            return out

        assert actions() == actions()

    def test_no_mutation_without_online_learning(self):
        agent = small_agent()
        hashes = (agent.ls.f.param_hash(), agent.ls.g.param_hash(),
                  agent.ls.g_plus.param_hash(), agent.cm.h.param_hash())
        for _ in range(5):
            agent.step(ramp_obs(0.3))
        assert hashes == (agent.ls.f.param_hash(), agent.ls.g.param_hash(),
                          agent.ls.g_plus.param_hash(), agent.cm.h.param_hash())

    def test_online_learning_updates_f_and_g(self):
        cfg = AgentConfig(belief_dims=2, horizon=3, pool_size=4,
                          refine_iterations=1, refine_steps=2,
                          online_learning=True, online_rate=0.01,
                          track_error_signal=False)
        agent = small_agent(cfg)
        f0, g0 = agent.ls.f.param_hash(), agent.ls.g.param_hash()
        agent.step(ramp_obs(0.2))  # first step has no realized transition yet
        agent.step(ramp_obs(0.4))
        assert agent.ls.f.param_hash() != f0
        assert agent.ls.g.param_hash() != g0

    def test_error_signal_tracked(self):
        cfg = AgentConfig(belief_dims=2, horizon=2, pool_size=2,
                          refine_iterations=0, refine_steps=2,
                          track_error_signal=True)
        agent = small_agent(cfg)
        agent.step(ramp_obs(0.5))
        assert agent.last_error_norm is None
        agent.step(ramp_obs(0.5))
        assert agent.last_error_norm is not None and agent.last_error_norm >= 0.0

    def test_encoder_modes(self):
        for mode in ("encoder", "inference", "hybrid"):
            cfg = AgentConfig(belief_dims=2, horizon=2, pool_size=2,
                              refine_iterations=0, refine_steps=2,
                              encoder_mode=mode, track_error_signal=False)
            agent = small_agent(cfg)
            agent.step(ramp_obs(0.1))
            agent.step(ramp_obs(0.2))
            assert np.all(np.abs(agent.v) <= 1.0)


class TestRunEpisode:
    def test_single_step_trace(self):
        env = RampEnv()
        env.reset(0)
        trace = run_episode(small_agent(), env, steps=1)
        assert len(trace) == 1

    def test_replay_reproduces_states(self):
        env = make_env("crane")
        env.reset(11)
        cfg = AgentConfig(belief_dims=2, horizon=2, pool_size=2,
                          refine_iterations=1, refine_steps=2,
                          track_error_signal=False)
        ls = build_learning_system(d=2, width=64, height=48, channels=3,
                                   a_dims=4, seed=0)
        agent = ManicAgent(ls, make_contentment(2, seed=1),
                           ActionSpace.discrete(4), cfg)
        trace = run_episode(agent, env, steps=6)

        env2 = make_env("crane")
        env2.reset(11)
        for rec in trace.steps:
            replayed = env2.render()
            assert np.array_equal(replayed.pixels, rec.observation.pixels)
            env2.step(rec.action)

    def test_trained_error_below_untrained(self):
        # closed loop on the ramp: an agent whose decoder knows the ramp
        # should anticipate frames far better than a fresh one
        from manic.bootstrap import TrainConfig, collect_random_walk, estimate_beliefs, pretrain

        env = RampEnv()
        ds = collect_random_walk(env, steps=80, seed=1)
        be = estimate_beliefs(ds, d=1, k=4)
        cfg = TrainConfig(epochs=120, f_hidden=(16,), g_hidden=(32,),
                          g_plus_hidden=(16,), pixels_per_frame=48, seed=0)
        ls, _ = pretrain(ds, be, cfg)

        def mean_error(system):
            agent_cfg = AgentConfig(belief_dims=1, horizon=2, pool_size=2,
                                    refine_iterations=0, refine_steps=8,
                                    refine_rate=0.5, encoder_mode="hybrid",
                                    track_error_signal=True)
            agent = ManicAgent(system, make_contentment(1, seed=2),
                               ActionSpace.discrete(2), agent_cfg)
            env2 = RampEnv()
            env2.reset(5)
            trace = run_episode(agent, env2, steps=12)
            norms = [e for e in trace.error_norms() if e is not None]
            return float(np.mean(norms))

        fresh = build_learning_system(d=1, width=16, height=12, channels=3,
                                      a_dims=2, seed=9)
        assert mean_error(ls) * 5.0 <= mean_error(fresh)

    def test_invalid_steps(self):
        with pytest.raises(PreconditionError):
            run_episode(small_agent(), RampEnv(), steps=0)


class TestTraceSerialization:
    def test_jsonl_inline(self, tmp_path):
        env = RampEnv()
        env.reset(0)
        trace = run_episode(small_agent(), env, steps=3)
        path = tmp_path / "trace.jsonl"
        trace.save_jsonl(path, frames="inline")
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3
        doc = json.loads(lines[0])
        assert "frame_b64" in doc and "belief" in doc and "action" in doc

    def test_jsonl_png(self, tmp_path):
        env = RampEnv()
        env.reset(0)
        trace = run_episode(small_agent(), env, steps=2)
        path = tmp_path / "trace.jsonl"
        trace.save_jsonl(path, frames="png")
        doc = json.loads(path.read_text().splitlines()[0])
        assert (tmp_path / doc["frame_png"]).exists()


class TestBaselines:
    def test_zero_weight_policy_constant_action(self):
        space = ActionSpace.discrete(3)
        model = init_network([downsampled_len(16, 12, 3), 3], seed=0)
        for w in model.weights:
            w[:] = 0.0
        agent = PolicyAgent(model, space)
        for level in (0.1, 0.5, 0.9):
            assert np.array_equal(agent.step(ramp_obs(level)), one_hot(0, 3))

    def test_identity_memory_degenerates_to_policy(self):
        # memory trained to copy its observation slice makes the combined
        # agent act like a policy on static frames
        space = ActionSpace.discrete(2)
        obs_len = downsampled_len(16, 12, 3)
        d = 4
        memory = init_network([d + obs_len, 16, d], seed=0)
        policy = init_network([d, 2], seed=1)
        rng = np.random.default_rng(0)
        for _ in range(600):
            obs = np.full(obs_len, rng.uniform(0, 1))
            v = rng.uniform(-1, 1, d)
            target = np.full(d, obs[0] * 2 - 1)
            memory.train_step(np.concatenate([v, obs]), target, 0.05)
        agent = MemoryPolicyAgent(memory, policy, d, space)
        x = ramp_obs(0.7)
        first = agent.step(x)
        for _ in range(5):
            assert np.array_equal(agent.step(x), first)

    def test_baselines_plug_into_run_episode(self):
        env = RampEnv()
        env.reset(2)
        model = init_network([downsampled_len(16, 12, 3), 2], seed=3)
        trace = run_episode(PolicyAgent(model, ActionSpace.discrete(2)), env, steps=4)
        assert len(trace) == 4


class TestIntrospection:
    def make_introspective_agent(self, m):
        d = 2
        cfg = AgentConfig(belief_dims=d, horizon=2, pool_size=2,
                          refine_iterations=0, refine_steps=2,
                          introspection=True, introspection_samples=m,
                          track_error_signal=False)
        extra = m + d
        return small_agent(cfg, encoder_extra=extra)

    def test_zero_samples_appends_only_belief(self):
        agent = self.make_introspective_agent(0)
        x = ramp_obs(0.5)
        ext = agent.introspective_observe(x)
        assert ext.pixels.size == x.pixels.size + 2
        assert np.array_equal(ext.pixels[: x.pixels.size], x.pixels)

    def test_extended_length_contract(self):
        agent = self.make_introspective_agent(16)
        ext = agent.introspective_observe(ramp_obs(0.2))
        assert ext.pixels.size == 16 * 12 * 3 + 16 + 2

    def test_entries_track_parameter_changes(self):
        agent = self.make_introspective_agent(32)
        x = ramp_obs(0.4)
        before = agent.introspective_observe(x).pixels
        # poke the first sampled parameter directly
        idx = int(agent.introspection_indices[0])
        flat = agent._internal_params()
        n_f = agent.ls.f.num_params()
        assert idx < n_f  # seed 0 samples at least one transition weight
        f_params = agent.ls.f.get_flat_params()
        f_params[idx] = np.clip(f_params[idx] + 0.5, -0.99, 0.99)
        agent.ls.f.set_flat_params(f_params)
        after = agent.introspective_observe(x).pixels
        changed = np.nonzero(before != after)[0]
        assert x.pixels.size + 0 in changed

    def test_disabled_introspection_errors(self):
        agent = small_agent()
        with pytest.raises(PreconditionError):
            agent.introspective_observe(ramp_obs())

    def test_encoder_mode_consumes_extended_observation(self):
        agent = self.make_introspective_agent(8)
        agent.config.encoder_mode = "encoder"
        action = agent.step(ramp_obs(0.6))
        assert action.sum() == 1.0
