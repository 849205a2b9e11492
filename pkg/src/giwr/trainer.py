"""Training loops and the evaluation protocol.

One loop serves all four algorithms; the algorithm name only shapes which
loss specs and models exist. An iteration is: sample minibatch, critic step,
one step for each auxiliary model the proposals need (clone, perturbation,
RND predictor), actor step, Polyak target update, and an evaluation whenever
the iteration index lands on the cadence grid (including iteration 0, before
any update). Runs stop at the iteration cap or the wall-clock cap, whichever
comes first.

Every random draw comes from a named per-component stream derived from
(master seed, rank), so logs are bitwise reproducible and eval-time draws
cannot perturb training.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .datagen import Dataset, sample_minibatch
from .diffcore import Tensor
from .envlab import make_env
from .nets import (
    Adam,
    BehaviorClone,
    GaussianPolicy,
    Perturbation,
    RndPair,
    TwinCritic,
    clone_loss,
    perturbation_loss,
    polyak_update,
    rnd_predictor_loss,
)
from .objectives import (
    ActorLossSpec,
    CriticLossSpec,
    actor_objective,
    bc_loss,
    critic_objective,
    gap,
    prepare_actor,
    prepare_critic,
)
from .proposals import (
    _REQUIRED_HANDLES,
    ProposalContext,
    ProposalSpec,
)

ALGORITHMS = ("base", "giwr", "rtg", "bc")

DEFAULT_ITERATIONS = 50_000
DEFAULT_EVAL_EVERY = 5_000
DEFAULT_EVAL_EPISODES = 10
DEFAULT_BATCH_SIZE = 256
DEFAULT_SEEDS = (0, 1, 2, 3)
DEFAULT_RTG_CQL_ALPHA = 0.2
BAND_SCALE = 0.95

STREAM_COMPONENTS = ("minibatch", "policy-sampling", "proposal-sampling",
                     "env-reset", "eval", "model-init")

METRICS_SCHEMA = "giwr-metrics-v1"
SUMMARY_SCHEMA = "giwr-summary-v1"
METRICS_HEADER = "seed,iteration,return_mean,return_std,critic_loss,actor_loss,gap,wall_secs"
SUMMARY_HEADER = "iteration,ret_mu,ret_band"


class PreflightError(ValueError):
    """Config/dataset contract violation caught before any training step."""


class NumericalAbort(RuntimeError):
    """A loss went NaN; carries a diagnostic snapshot of the run state."""

    def __init__(self, loss_name: str, seed: int, iteration: int,
                 snapshot: dict[str, Tensor]):
        super().__init__(
            f"{loss_name} loss is NaN at iteration {iteration} (seed {seed})")
        self.loss_name = loss_name
        self.seed = seed
        self.iteration = iteration
        self.snapshot = snapshot


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    algorithm: str
    critic: CriticLossSpec | None = None
    actor: ActorLossSpec | None = None
    dataset: str = ""  # path or recipe note; carried into manifests only
    iterations: int = DEFAULT_ITERATIONS
    wall_clock_cap: float | None = None
    eval_every: int = DEFAULT_EVAL_EVERY
    eval_episodes: int = DEFAULT_EVAL_EPISODES
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    batch_size: int = DEFAULT_BATCH_SIZE
    hidden: int = 256
    master_seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise PreflightError(
                f"unknown algorithm {self.algorithm!r}; expected one of {', '.join(ALGORITHMS)}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise PreflightError("seeds must be nonempty")
        if self.iterations < 0:
            raise PreflightError(f"iterations must be >= 0, got {self.iterations}")
        if self.eval_every < 1:
            raise PreflightError(f"eval_every must be >= 1, got {self.eval_every}")
        # Cap 0 is the degenerate no-training config and is exempt from the
        # cadence bound; it still emits the initial evaluation record.
        if self.iterations > 0 and self.eval_every > self.iterations:
            raise PreflightError(
                f"eval_every ({self.eval_every}) must not exceed iterations ({self.iterations})")
        if self.eval_episodes < 1:
            raise PreflightError(f"eval_episodes must be >= 1, got {self.eval_episodes}")
        if self.batch_size < 1:
            raise PreflightError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.hidden < 1:
            raise PreflightError(f"hidden must be >= 1, got {self.hidden}")
        if self.wall_clock_cap is not None and self.wall_clock_cap <= 0:
            raise PreflightError(
                f"wall_clock_cap must be positive seconds, got {self.wall_clock_cap}")
        object.__setattr__(self, "critic", self._effective_critic())
        object.__setattr__(self, "actor", self._effective_actor())

    def _effective_critic(self) -> CriticLossSpec | None:
        if self.algorithm == "bc":
            return None
        spec = self.critic
        if spec is None:
            spec = CriticLossSpec(proposal=ProposalSpec(kind="theta"))
        if self.algorithm == "giwr" and spec.proposal.kind != "theta":
            # Policy evaluation under the family objective always bootstraps
            # from the current policy.
            spec = dataclasses.replace(spec, proposal=ProposalSpec(kind="theta"))
        if self.algorithm == "rtg" and spec.cql_alpha is None:
            spec = dataclasses.replace(spec, cql_alpha=DEFAULT_RTG_CQL_ALPHA)
        return spec

    def _effective_actor(self) -> ActorLossSpec | None:
        if self.algorithm == "bc":
            return None
        if self.actor is not None:
            return self.actor
        return ActorLossSpec(proposals=(ProposalSpec(kind="beta_sarsa"),),
                             kappas=(1.0,))


@dataclass(frozen=True)
class MetricsRecord:
    seed: int
    iteration: int
    return_mean: float
    return_std: float
    critic_loss: float
    actor_loss: float
    gap: float
    wall_secs: float


@dataclass
class RunStats:
    """Range bookkeeping for the no-violations contract: every actor weight
    must land in (0, cap] and every proposal action inside the action box."""

    weight_count: int = 0
    weight_violations: int = 0
    action_count: int = 0
    bounds_violations: int = 0


@dataclass
class TrainResult:
    records: list[MetricsRecord]
    checkpoints: dict[int, dict[str, Tensor]]
    stats: dict[int, RunStats]


def seed_rng_streams(master_seed: int, rank: int) -> dict[str, np.random.Generator]:
    """Independent generators per component, keyed by (master seed, rank)."""
    streams = {}
    for component in STREAM_COMPONENTS:
        tag = f"{master_seed}|{rank}|{component}".encode()
        digest = hashlib.blake2b(tag, digest_size=8).digest()
        streams[component] = np.random.default_rng(int.from_bytes(digest, "little"))
    return streams


def _proposal_kinds(config: ExperimentConfig) -> tuple[str, ...]:
    kinds = []
    if config.critic is not None and not config.critic.optimality:
        kinds.append(config.critic.proposal.kind)
    if config.actor is not None:
        kinds.extend(p.kind for p in config.actor.proposals)
    return tuple(kinds)


def preflight(config: ExperimentConfig, dataset: Dataset) -> None:
    env = make_env(config.env)
    if dataset.obs_dim != env.spec.obs_dim or dataset.act_dim != env.spec.act_dim:
        raise PreflightError(
            f"dataset dims ({dataset.obs_dim}, {dataset.act_dim}) do not match "
            f"env '{config.env}' ({env.spec.obs_dim}, {env.spec.act_dim})")
    if len(dataset) == 0:
        raise PreflightError("dataset is empty")
    if "beta_sarsa" in _proposal_kinds(config) and not dataset.sarsa:
        raise PreflightError(
            "a beta_sarsa proposal needs stored successor actions; "
            "regenerate the dataset with --sarsa")
    if config.critic is not None and config.critic.optimality \
            and getattr(env, "discrete_actions", None) is None:
        raise PreflightError(
            f"the optimality critic target needs a discrete-action env, not '{config.env}'")


@dataclass
class ModelSet:
    policy: GaussianPolicy
    critic: TwinCritic | None = None
    clone: BehaviorClone | None = None
    perturbation: Perturbation | None = None
    rnd: RndPair | None = None

    def checkpoint(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}

        def put(prefix, params):
            for i, p in enumerate(params):
                out[f"{prefix}.{i}"] = p

        put("policy", self.policy.params)
        if self.critic is not None:
            put("critic.q1", self.critic.q1.params)
            put("critic.q2", self.critic.q2.params)
            put("critic.t1", self.critic.t1.params)
            put("critic.t2", self.critic.t2.params)
        if self.clone is not None:
            put("clone", self.clone.params)
        if self.perturbation is not None:
            put("xi", self.perturbation.params)
        if self.rnd is not None:
            put("rnd.frozen", self.rnd.frozen.params)
            put("rnd.predictor", self.rnd.predictor.params)
            out["rnd.stats"] = Tensor(np.array(
                [float(self.rnd._count), self.rnd._mean, self.rnd._m2]))
        return out


def build_models(config: ExperimentConfig, env, rng: np.random.Generator) -> ModelSet:
    spec = env.spec
    h = config.hidden
    policy = GaussianPolicy(spec.obs_dim, spec.act_dim, spec.act_low, spec.act_high,
                            rng, hidden=h)
    if config.algorithm == "bc":
        return ModelSet(policy=policy)
    handles = set()
    for kind in _proposal_kinds(config):
        handles.update(_REQUIRED_HANDLES[kind])
    models = ModelSet(policy=policy)
    models.critic = TwinCritic(spec.obs_dim, spec.act_dim, rng, hidden=h)
    if "clone" in handles:
        models.clone = BehaviorClone(spec.obs_dim, spec.act_dim, spec.act_low,
                                     spec.act_high, rng, hidden=h)
    if "perturbation" in handles:
        models.perturbation = Perturbation(spec.obs_dim, spec.act_dim, spec.act_low,
                                           spec.act_high, rng, hidden=h)
    if "rnd" in handles:
        models.rnd = RndPair(spec.obs_dim, spec.act_dim, rng, hidden=h)
    return models


def _check_finite(name: str, loss: Tensor, seed: int, iteration: int,
                  models: ModelSet) -> float:
    value = float(loss.data)
    if math.isnan(value):
        raise NumericalAbort(name, seed, iteration, models.checkpoint())
    return value


def _eval_policy(env, policy, episodes: int, reset_rng, act_rng) -> tuple[float, float]:
    returns = np.zeros(episodes)
    for ep in range(episodes):
        obs = env.reset(reset_rng)
        total = 0.0
        for _ in range(env.spec.horizon):
            action = policy.act(obs, act_rng, deterministic=True)
            result = env.step(obs, action)
            total += result.reward
            obs = result.obs
            if result.terminal:
                break
        returns[ep] = total
    return float(returns.mean()), float(returns.std())


def _eval_gap(models: ModelSet, ctx: ProposalContext, dataset: Dataset,
              batch_size: int, rng: np.random.Generator) -> float:
    if models.critic is None:
        return float("nan")
    idx = rng.integers(0, len(dataset), size=min(batch_size, len(dataset)))
    return gap(models.critic, dataset.obs[idx], dataset.act[idx], 10, rng,
               ctx.act_low, ctx.act_high, discrete_actions=ctx.discrete_actions)


def train_seed(config: ExperimentConfig, dataset: Dataset,
               seed: int) -> tuple[list[MetricsRecord], dict[str, Tensor], RunStats]:
    """One rank: full training run, metric records on the eval grid, the
    final parameter snapshot, and range-violation counters."""
    preflight(config, dataset)
    env = make_env(config.env)
    streams = seed_rng_streams(config.master_seed, seed)
    models = build_models(config, env, streams["model-init"])
    ctx = ProposalContext(
        act_low=env.spec.act_low, act_high=env.spec.act_high,
        policy=models.policy, clone=models.clone,
        perturbation=models.perturbation, critic=models.critic, rnd=models.rnd,
        discrete_actions=getattr(env, "discrete_actions", None))
    stats = RunStats()

    policy_opt = Adam(models.policy.params)
    critic_opt = Adam(models.critic.params) if models.critic else None
    clone_opt = Adam(models.clone.params) if models.clone else None
    xi_opt = Adam(models.perturbation.params) if models.perturbation else None
    rnd_opt = Adam(models.rnd.params) if models.rnd else None

    records: list[MetricsRecord] = []
    start = time.monotonic()
    critic_value = actor_value = float("nan")

    def evaluate(iteration: int) -> None:
        ret_mu, ret_sd = _eval_policy(env, models.policy, config.eval_episodes,
                                      streams["env-reset"], streams["eval"])
        gap_value = _eval_gap(models, ctx, dataset, config.batch_size, streams["eval"])
        records.append(MetricsRecord(
            seed=seed, iteration=iteration, return_mean=ret_mu, return_std=ret_sd,
            critic_loss=critic_value, actor_loss=actor_value, gap=gap_value,
            wall_secs=time.monotonic() - start))

    evaluate(0)
    for iteration in range(1, config.iterations + 1):
        if config.wall_clock_cap is not None \
                and time.monotonic() - start >= config.wall_clock_cap:
            break
        batch = sample_minibatch(dataset, config.batch_size, streams["minibatch"])

        if models.critic is not None:
            prepared = prepare_critic(config.critic, batch, ctx, env.spec.gamma,
                                      streams["proposal-sampling"],
                                      policy_rng=streams["policy-sampling"])
            with dc.Graph() as g:
                loss = critic_objective(prepared, batch, ctx)
                grads = g.backward(loss)
            critic_value = _check_finite("critic", loss, seed, iteration, models)
            critic_opt.step([g.grad(grads, p) for p in models.critic.params])

        if models.clone is not None:
            with dc.Graph() as g:
                loss = clone_loss(models.clone, batch.obs, batch.act,
                                       streams["proposal-sampling"])
                grads = g.backward(loss)
            _check_finite("clone", loss, seed, iteration, models)
            clone_opt.step([g.grad(grads, p) for p in models.clone.params])

        if models.perturbation is not None:
            with dc.Graph() as g:
                loss = perturbation_loss(models.perturbation, models.critic,
                                              models.clone, batch.obs,
                                              streams["proposal-sampling"])
                grads = g.backward(loss)
            _check_finite("perturbation", loss, seed, iteration, models)
            xi_opt.step([g.grad(grads, p) for p in models.perturbation.params])

        if models.rnd is not None:
            with dc.Graph() as g:
                loss = rnd_predictor_loss(models.rnd, batch.obs, batch.act)
                grads = g.backward(loss)
            _check_finite("rnd", loss, seed, iteration, models)
            rnd_opt.step([g.grad(grads, p) for p in models.rnd.params])
            models.rnd.observe(models.rnd.eta(batch.obs, batch.act))

        if config.algorithm == "bc":
            with dc.Graph() as g:
                loss = bc_loss(models.policy, batch)
                grads = g.backward(loss)
        else:
            prepared = prepare_actor(config.actor, batch, ctx,
                                     streams["proposal-sampling"],
                                     policy_rng=streams["policy-sampling"])
            for _, actions, weights in prepared.terms:
                stats.weight_count += weights.size
                stats.weight_violations += int(np.sum(
                    (weights <= 0.0) | (weights > config.actor.weight_cap)))
                stats.action_count += actions.shape[0]
            with dc.Graph() as g:
                loss = actor_objective(prepared, models.policy, batch.obs)
                grads = g.backward(loss)
        actor_value = _check_finite("actor", loss, seed, iteration, models)
        policy_opt.step([g.grad(grads, p) for p in models.policy.params])

        if models.critic is not None:
            polyak_update(models.critic)

        if iteration % config.eval_every == 0:
            evaluate(iteration)

    stats.bounds_violations = ctx.stats["bounds_violations"]
    return records, models.checkpoint(), stats


def train(config: ExperimentConfig, dataset: Dataset) -> TrainResult:
    """All seeds sequentially; see the cli module for parallel dispatch."""
    records: list[MetricsRecord] = []
    checkpoints: dict[int, dict[str, Tensor]] = {}
    stats: dict[int, RunStats] = {}
    for seed in config.seeds:
        seed_records, ckpt, seed_stats = train_seed(config, dataset, seed)
        records.extend(seed_records)
        checkpoints[seed] = ckpt
        stats[seed] = seed_stats
    return TrainResult(records=records, checkpoints=checkpoints, stats=stats)


def aggregate(records: list[MetricsRecord]) -> list[tuple[int, float, float]]:
    """Per-iteration mean return and 0.95 * population-sigma band half-width
    across seeds. All seeds must share one evaluation grid."""
    by_seed: dict[int, list[MetricsRecord]] = {}
    for r in records:
        by_seed.setdefault(r.seed, []).append(r)
    if not by_seed:
        return []
    ordered = {s: sorted(rs, key=lambda r: r.iteration) for s, rs in by_seed.items()}
    grids = {s: tuple(r.iteration for r in rs) for s, rs in ordered.items()}
    grid = next(iter(grids.values()))
    if any(g != grid for g in grids.values()):
        raise ValueError("seeds disagree on the evaluation grid; cannot aggregate")
    out = []
    for i, iteration in enumerate(grid):
        values = np.array([rs[i].return_mean for rs in ordered.values()])
        out.append((iteration, float(values.mean()),
                    float(BAND_SCALE * values.std())))
    return out


def metrics_to_csv(records: list[MetricsRecord]) -> str:
    lines = [f"# schema: {METRICS_SCHEMA}",
             "# gap: best of 10 uniform actions minus dataset action, first main critic",
             METRICS_HEADER]
    for r in records:
        lines.append(",".join([
            str(r.seed), str(r.iteration), repr(r.return_mean), repr(r.return_std),
            repr(r.critic_loss), repr(r.actor_loss), repr(r.gap), repr(r.wall_secs)]))
    return "\n".join(lines) + "\n"


def summary_to_csv(aggregated: list[tuple[int, float, float]]) -> str:
    lines = [f"# schema: {SUMMARY_SCHEMA}",
             "# band: 0.95 * population sigma of per-seed mean returns",
             SUMMARY_HEADER]
    for iteration, mu, band in aggregated:
        lines.append(f"{iteration},{mu!r},{band!r}")
    return "\n".join(lines) + "\n"
