import dataclasses

import numpy as np
import pytest

from giwr.datagen import Dataset, generate
from giwr.envlab import make_env
from giwr.objectives import ActorLossSpec, CriticLossSpec
from giwr.proposals import ProposalSpec
from giwr.trainer import (
    ExperimentConfig,
    MetricsRecord,
    NumericalAbort,
    PreflightError,
    RunStats,
    aggregate,
    build_models,
    metrics_to_csv,
    preflight,
    seed_rng_streams,
    summary_to_csv,
    train,
    train_seed,
)


def tiny_config(**overrides):
    base = dict(env="pointmass1d", algorithm="base", iterations=10, eval_every=5,
                eval_episodes=2, seeds=(0,), batch_size=16, hidden=8)
    base.update(overrides)
    return ExperimentConfig(**base)


def pm_dataset(n=300, sarsa=True, seed=1, behavior="random"):
    return generate(make_env("pointmass1d"), behavior, n, sarsa, seed)


def chain_dataset(n=300, sarsa=True, seed=2):
    return generate(make_env("chain"), "random", n, sarsa, seed)


def records_equal_modulo_wall(a, b):
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        for name in ("seed", "iteration", "return_mean", "return_std",
                     "critic_loss", "actor_loss", "gap"):
            va, vb = getattr(ra, name), getattr(rb, name)
            assert va == vb or (np.isnan(va) and np.isnan(vb)), \
                f"{name} differs at iteration {ra.iteration}: {va} vs {vb}"


class TestConfig:
    def test_unknown_algorithm(self):
        with pytest.raises(PreflightError, match="algorithm"):
            tiny_config(algorithm="dagger")

    def test_empty_seeds(self):
        with pytest.raises(PreflightError, match="seeds"):
            tiny_config(seeds=())

    def test_cadence_exceeds_cap(self):
        with pytest.raises(PreflightError, match="eval_every"):
            tiny_config(iterations=10, eval_every=20)

    def test_zero_iterations_allowed(self):
        cfg = tiny_config(iterations=0, eval_every=5000)
        assert cfg.iterations == 0

    def test_bad_wall_cap(self):
        with pytest.raises(PreflightError, match="wall_clock_cap"):
            tiny_config(wall_clock_cap=0.0)

    def test_bc_drops_both_specs(self):
        cfg = tiny_config(algorithm="bc")
        assert cfg.critic is None and cfg.actor is None

    def test_giwr_forces_policy_evaluation_proposal(self):
        cfg = tiny_config(
            algorithm="giwr",
            critic=CriticLossSpec(proposal=ProposalSpec(kind="beta_clone")))
        assert cfg.critic.proposal.kind == "theta"

    def test_rtg_defaults_conservative_alpha(self):
        cfg = tiny_config(algorithm="rtg")
        assert cfg.critic.cql_alpha == 0.2

    def test_rtg_keeps_explicit_zero_alpha(self):
        cfg = tiny_config(
            algorithm="rtg",
            critic=CriticLossSpec(proposal=ProposalSpec(kind="theta"), cql_alpha=0.0))
        assert cfg.critic.cql_alpha == 0.0

    def test_base_defaults(self):
        cfg = tiny_config()
        assert cfg.critic.proposal.kind == "theta"
        assert cfg.actor.proposals[0].kind == "beta_sarsa"
        assert cfg.actor.kappas == (1.0,)


class TestSeedStreams:
    def test_same_inputs_same_streams(self):
        a = seed_rng_streams(0, 3)
        b = seed_rng_streams(0, 3)
        for name in a:
            assert a[name].integers(0, 1 << 30) == b[name].integers(0, 1 << 30)

    def test_different_ranks_diverge(self):
        a = seed_rng_streams(0, 0)["minibatch"].integers(0, 1 << 30, 100)
        b = seed_rng_streams(0, 1)["minibatch"].integers(0, 1 << 30, 100)
        assert np.any(a != b)

    def test_different_masters_diverge(self):
        a = seed_rng_streams(0, 0)["minibatch"].integers(0, 1 << 30, 100)
        b = seed_rng_streams(1, 0)["minibatch"].integers(0, 1 << 30, 100)
        assert np.any(a != b)

    def test_components_are_isolated(self):
        plain = seed_rng_streams(0, 0)
        spent = seed_rng_streams(0, 0)
        spent["eval"].standard_normal(1000)
        np.testing.assert_array_equal(
            plain["minibatch"].integers(0, 1 << 30, 50),
            spent["minibatch"].integers(0, 1 << 30, 50))

    def test_all_components_present(self):
        streams = seed_rng_streams(5, 7)
        assert set(streams) == {"minibatch", "policy-sampling", "proposal-sampling",
                                "env-reset", "eval", "model-init"}


class TestPreflight:
    def test_dims_mismatch(self):
        with pytest.raises(PreflightError, match="dims"):
            preflight(tiny_config(), chain_dataset())

    def test_beta_sarsa_needs_sarsa_dataset(self):
        with pytest.raises(PreflightError, match="sarsa"):
            preflight(tiny_config(), pm_dataset(sarsa=False))

    def test_sars_dataset_fine_without_beta_sarsa(self):
        cfg = tiny_config(actor=ActorLossSpec(
            proposals=(ProposalSpec(kind="theta"),), kappas=(1.0,)))
        preflight(cfg, pm_dataset(sarsa=False))

    def test_optimality_needs_discrete_env(self):
        cfg = tiny_config(critic=CriticLossSpec(proposal=ProposalSpec(kind="theta"),
                                                optimality=True))
        with pytest.raises(PreflightError, match="discrete"):
            preflight(cfg, pm_dataset())

    def test_empty_dataset(self):
        ds = pm_dataset()
        empty = ds.subset(np.zeros(0, dtype=int))
        with pytest.raises(PreflightError, match="empty"):
            preflight(tiny_config(), empty)


class TestBuildModels:
    def test_bc_builds_policy_only(self):
        env = make_env("pointmass1d")
        m = build_models(tiny_config(algorithm="bc"), env, np.random.default_rng(0))
        assert m.critic is None and m.clone is None and m.rnd is None

    def test_base_needs_no_aux(self):
        env = make_env("pointmass1d")
        m = build_models(tiny_config(), env, np.random.default_rng(0))
        assert m.critic is not None
        assert m.clone is None and m.perturbation is None and m.rnd is None

    def test_spi_family_builds_everything(self):
        cfg = tiny_config(algorithm="giwr", actor=ActorLossSpec(
            proposals=(ProposalSpec(kind="beta_sarsa"),
                       ProposalSpec(kind="spi_perturbed_beta_clone_max", m=2)),
            kappas=(1.0, 0.2)))
        env = make_env("pointmass1d")
        m = build_models(cfg, env, np.random.default_rng(0))
        assert all(x is not None for x in (m.critic, m.clone, m.perturbation, m.rnd))


class TestTrainLoop:
    def test_zero_cap_one_initial_record(self):
        records, ckpt, stats = train_seed(tiny_config(iterations=0), pm_dataset(), 0)
        assert len(records) == 1
        r = records[0]
        assert r.iteration == 0
        assert np.isnan(r.critic_loss) and np.isnan(r.actor_loss)
        assert np.isfinite(r.gap)
        assert np.isfinite(r.return_mean)
        assert "policy.0" in ckpt and "critic.q1.0" in ckpt

    def test_eval_grid(self):
        records, _, _ = train_seed(tiny_config(iterations=10, eval_every=5),
                                   pm_dataset(), 0)
        assert [r.iteration for r in records] == [0, 5, 10]
        for r in records[1:]:
            assert np.isfinite(r.critic_loss) and np.isfinite(r.actor_loss)

    def test_rerun_is_deterministic(self):
        cfg = tiny_config(iterations=10, eval_every=5)
        ds = pm_dataset()
        a, ckpt_a, _ = train_seed(cfg, ds, 3)
        b, ckpt_b, _ = train_seed(cfg, ds, 3)
        records_equal_modulo_wall(a, b)
        for name in ckpt_a:
            np.testing.assert_array_equal(ckpt_a[name].data, ckpt_b[name].data)

    def test_seeds_differ(self):
        cfg = tiny_config(iterations=10, eval_every=10)
        ds = pm_dataset()
        a, _, _ = train_seed(cfg, ds, 0)
        b, _, _ = train_seed(cfg, ds, 1)
        assert a[-1].actor_loss != b[-1].actor_loss

    def test_giwr_singleton_equals_base(self):
        ds = pm_dataset(n=400)
        runs = {}
        for algorithm in ("base", "giwr"):
            cfg = tiny_config(algorithm=algorithm, iterations=30, eval_every=10)
            runs[algorithm], _, _ = train_seed(cfg, ds, 1)
        records_equal_modulo_wall(runs["base"], runs["giwr"])

    def test_wall_clock_cap_stops_immediately(self):
        cfg = tiny_config(iterations=10_000, eval_every=10_000, wall_clock_cap=1e-9)
        records, _, _ = train_seed(cfg, pm_dataset(), 0)
        assert [r.iteration for r in records] == [0]

    def test_bc_trains_policy_only(self):
        cfg = tiny_config(algorithm="bc", iterations=10, eval_every=5)
        records, ckpt, _ = train_seed(cfg, pm_dataset(), 0)
        assert np.isnan(records[-1].critic_loss)
        assert np.isfinite(records[-1].actor_loss)
        assert np.isnan(records[-1].gap)
        assert not any(name.startswith("critic") for name in ckpt)

    def test_full_family_smoke_and_eval_isolation(self):
        cfg = tiny_config(
            algorithm="giwr", iterations=6, eval_every=3, batch_size=8,
            actor=ActorLossSpec(
                proposals=(ProposalSpec(kind="beta_sarsa"),
                           ProposalSpec(kind="spi_perturbed_beta_clone_max", m=2)),
                kappas=(1.0, 0.2), n_base=2))
        records, ckpt, stats = train_seed(cfg, pm_dataset(n=200), 0)
        assert [r.iteration for r in records] == [0, 3, 6]
        # online novelty scale sees exactly the training minibatches: eval
        # rollouts and eval-time gap draws must not feed it
        count = ckpt["rnd.stats"].data[0]
        assert count == 6 * 8
        assert stats.weight_violations == 0
        assert stats.bounds_violations == 0

    def test_rtg_logs_gap(self):
        cfg = tiny_config(algorithm="rtg", iterations=4, eval_every=2,
                          env="chain")
        records, _, _ = train_seed(cfg, chain_dataset(), 0)
        assert all(np.isfinite(r.gap) for r in records)

    def test_nan_reward_aborts_critic(self):
        ds = pm_dataset()
        ds.rew[:] = np.nan
        with pytest.raises(NumericalAbort, match="critic") as info:
            train_seed(tiny_config(), ds, 0)
        assert info.value.iteration == 1
        assert "policy.0" in info.value.snapshot

    def test_nan_obs_aborts_bc_actor(self):
        ds = pm_dataset()
        ds.obs[:] = np.nan
        with pytest.raises(NumericalAbort, match="actor"):
            train_seed(tiny_config(algorithm="bc"), ds, 0)

    def test_train_covers_all_seeds(self):
        cfg = tiny_config(iterations=5, eval_every=5, seeds=(0, 1))
        result = train(cfg, pm_dataset())
        assert sorted(set(r.seed for r in result.records)) == [0, 1]
        assert set(result.checkpoints) == {0, 1}
        assert all(isinstance(s, RunStats) for s in result.stats.values())


class TestAggregate:
    def rec(self, seed, iteration, ret):
        return MetricsRecord(seed=seed, iteration=iteration, return_mean=ret,
                             return_std=0.0, critic_loss=0.0, actor_loss=0.0,
                             gap=0.0, wall_secs=0.0)

    def test_two_seed_band(self):
        rows = aggregate([self.rec(0, 0, 1.0), self.rec(1, 0, 3.0)])
        assert rows == [(0, 2.0, 0.95)]

    def test_single_seed_collapses(self):
        rows = aggregate([self.rec(0, 0, 5.0), self.rec(0, 10, 7.0)])
        assert rows == [(0, 5.0, 0.0), (10, 7.0, 0.0)]

    def test_permutation_invariant(self):
        records = [self.rec(s, it, s + it) for s in (0, 1, 2) for it in (0, 5)]
        assert aggregate(records) == aggregate(records[::-1])

    def test_ragged_grid_rejected(self):
        with pytest.raises(ValueError, match="grid"):
            aggregate([self.rec(0, 0, 1.0), self.rec(1, 5, 1.0)])

    def test_empty(self):
        assert aggregate([]) == []


class TestCsv:
    def test_metrics_csv_shape(self):
        records, _, _ = train_seed(tiny_config(iterations=0), pm_dataset(), 0)
        text = metrics_to_csv(records)
        lines = text.strip().split("\n")
        assert lines[0].startswith("# schema: giwr-metrics-v1")
        header = next(l for l in lines if not l.startswith("#"))
        assert header == ("seed,iteration,return_mean,return_std,"
                          "critic_loss,actor_loss,gap,wall_secs")
        assert len([l for l in lines if not l.startswith("#")]) == 2

    def test_metrics_csv_nan_round_trip(self):
        records = [MetricsRecord(seed=0, iteration=0, return_mean=1.5,
                                 return_std=0.25, critic_loss=float("nan"),
                                 actor_loss=float("nan"), gap=0.125, wall_secs=0.0)]
        row = metrics_to_csv(records).strip().split("\n")[-1].split(",")
        assert float(row[2]) == 1.5
        assert np.isnan(float(row[4]))

    def test_summary_csv(self):
        text = summary_to_csv([(0, 2.0, 0.95), (5, 3.5, 0.0)])
        lines = text.strip().split("\n")
        assert lines[0].startswith("# schema: giwr-summary-v1")
        assert lines[-1] == "5,3.5,0.0"
