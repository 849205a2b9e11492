"""Training objectives and diagnostics.

Every loss is split into a prepare step and an objective step. Prepare runs
in inference mode: it draws proposal actions, bootstrap targets, advantage
weights, and uniform comparison actions, all as plain arrays. The objective
step builds the differentiated expression from those constants. Gradients
therefore never flow through sampling, through bootstrap targets, or through
the advantage inside an exponential weight; the finite-difference checks in
the tests certify exactly the gradients this split defines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .proposals import (
    ProposalConfigError,
    ProposalContext,
    ProposalSpec,
    sample_batch,
    snap_to_embedded,
)

DEFAULT_N_BASE = 8
DEFAULT_M_GAP = 10
DEFAULT_LAMBDA_KL = 1.0
DEFAULT_WEIGHT_CAP = 20.0
DEFAULT_CQL_UNIFORM = 10

# Smallest normal double stands in for the open lower bound of the weight
# range when exp underflows.
_WEIGHT_FLOOR = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class CriticLossSpec:
    """Evaluation-side loss: squared Bellman residual against a proposal
    bootstrap, optionally with an advantage-learning bonus inside the target
    or a conservative value-shaping pair added outside it. optimality swaps
    the proposal draw for an exact max over embedded discrete actions."""

    proposal: ProposalSpec
    al_alpha: float | None = None
    cql_alpha: float | None = None
    cql_uniform_count: int = DEFAULT_CQL_UNIFORM
    optimality: bool = False

    def __post_init__(self):
        if self.al_alpha is not None and not 0.0 < self.al_alpha < 1.0:
            raise ProposalConfigError(
                f"advantage-learning alpha must lie in (0, 1), got {self.al_alpha}")
        if self.cql_alpha is not None and self.cql_alpha < 0.0:
            raise ProposalConfigError(
                f"conservative alpha must be >= 0, got {self.cql_alpha}")
        if self.al_alpha is not None and self.cql_alpha not in (None, 0.0):
            raise ProposalConfigError(
                "at most one of the advantage-learning and conservative terms may be active")
        if self.cql_uniform_count < 1:
            raise ProposalConfigError(
                f"conservative uniform count must be >= 1, got {self.cql_uniform_count}")


@dataclass(frozen=True)
class ActorLossSpec:
    """Improvement-side loss over a family of proposals with nonnegative
    coefficients. The singleton family over dataset actions with coefficient
    one is the plain advantage-weighted regression update."""

    proposals: tuple[ProposalSpec, ...]
    kappas: tuple[float, ...]
    lambda_kl: float = DEFAULT_LAMBDA_KL
    weight_cap: float = DEFAULT_WEIGHT_CAP
    n_base: int = DEFAULT_N_BASE

    def __post_init__(self):
        object.__setattr__(self, "proposals", tuple(self.proposals))
        object.__setattr__(self, "kappas", tuple(float(k) for k in self.kappas))
        if len(self.proposals) != len(self.kappas) or not self.proposals:
            raise ProposalConfigError(
                "proposal family and coefficients must have equal nonzero length")
        if any(k < 0 for k in self.kappas):
            raise ProposalConfigError("proposal coefficients must be nonnegative")
        if not self.lambda_kl > 0:
            raise ProposalConfigError(f"lambda_kl must be positive, got {self.lambda_kl}")
        if not self.weight_cap > 0:
            raise ProposalConfigError(f"weight cap must be positive, got {self.weight_cap}")
        if self.n_base < 1:
            raise ProposalConfigError(f"n_base must be >= 1, got {self.n_base}")


def _policy_actions(policy, obs, rng) -> np.ndarray:
    drawn = policy.sample(obs, rng)
    if isinstance(drawn, tuple):
        drawn = drawn[0]
    return np.asarray(drawn.data if isinstance(drawn, Tensor) else drawn, dtype=np.float64)


def advantage(critic, policy, obs: np.ndarray, act: np.ndarray, n_base: int,
              rng: np.random.Generator) -> np.ndarray:
    """A(s,a) = Q1(s,a) minus the mean first-main value of n_base fresh
    policy samples at s. Pure inference; returns a constant array."""
    if n_base < 1:
        raise ProposalConfigError(f"n_base must be >= 1, got {n_base}")
    value = critic.value_first_main(obs, act)
    baseline = np.zeros(obs.shape[0])
    for _ in range(n_base):
        baseline += critic.value_first_main(obs, _policy_actions(policy, obs, rng))
    return value - baseline / n_base


def exp_weight(adv: np.ndarray, lambda_kl: float, cap: float) -> np.ndarray:
    """min(exp(A / lambda_kl), cap), kept strictly positive under underflow."""
    if not lambda_kl > 0:
        raise ProposalConfigError(f"lambda_kl must be positive, got {lambda_kl}")
    if not cap > 0:
        raise ProposalConfigError(f"weight cap must be positive, got {cap}")
    with np.errstate(over="ignore", under="ignore"):
        w = np.exp(np.asarray(adv, dtype=np.float64) / lambda_kl)
    return np.clip(w, _WEIGHT_FLOOR, cap)


def _uniform_actions(rng, count, n, act_dim, lo, hi, discrete_actions):
    draws = rng.uniform(lo, hi, (count, n, act_dim))
    if discrete_actions is not None:
        draws = np.stack([snap_to_embedded(d, discrete_actions) for d in draws])
    return draws


@dataclass
class CriticPrepared:
    target: np.ndarray
    cql_alpha: float | None
    cql_actions: np.ndarray | None


def prepare_critic(spec: CriticLossSpec, batch, ctx: ProposalContext, gamma: float,
                   rng: np.random.Generator,
                   policy_rng: np.random.Generator | None = None) -> CriticPrepared:
    """policy_rng, when given, feeds the fresh policy draws inside advantage
    baselines; proposal and uniform draws stay on rng. Defaults to rng so
    single-stream callers keep one consumption order."""
    if len(batch) == 0:
        raise ValueError("critic loss needs a nonempty batch")
    policy_rng = rng if policy_rng is None else policy_rng
    if spec.optimality:
        if ctx.discrete_actions is None:
            raise ProposalConfigError(
                "the optimality target enumerates actions and needs a discrete embedding")
        n = len(batch)
        boots = np.stack([
            ctx.critic.value_min_targets(batch.next_obs, np.full((n, 1), a))
            for a in ctx.discrete_actions])
        boot = boots.max(axis=0)
    else:
        next_act = sample_batch(spec.proposal, ctx, batch.next_obs, rng,
                                stored_actions=batch.next_act)
        boot = ctx.critic.value_min_targets(batch.next_obs, next_act)
    if spec.al_alpha is not None:
        if ctx.policy is None:
            raise ProposalConfigError("the advantage-learning bonus needs a policy handle")
        boot = boot + spec.al_alpha * advantage(
            ctx.critic, ctx.policy, batch.obs, batch.act, DEFAULT_N_BASE, policy_rng)
    target = batch.rew + gamma * (1.0 - batch.terminal) * boot
    cql_actions = None
    if spec.cql_alpha is not None:
        cql_actions = _uniform_actions(rng, spec.cql_uniform_count, len(batch),
                                       batch.act.shape[1], ctx.act_low, ctx.act_high,
                                       ctx.discrete_actions)
    return CriticPrepared(target=target, cql_alpha=spec.cql_alpha, cql_actions=cql_actions)


def critic_objective(prepared: CriticPrepared, batch, ctx: ProposalContext) -> Tensor:
    y = Tensor(prepared.target)
    preds = ctx.critic.predictions(batch.obs, batch.act)
    loss = None
    for pred in preds:
        term = dc.mean(dc.square(dc.sub(pred, y)))
        loss = term if loss is None else dc.add(loss, term)
    loss = dc.mul(loss, 1.0 / len(preds))
    if prepared.cql_alpha is not None:
        push_down = None
        for u in prepared.cql_actions:
            term = dc.mean(ctx.critic.first_prediction(batch.obs, u))
            push_down = term if push_down is None else dc.add(push_down, term)
        push_down = dc.mul(push_down, 1.0 / len(prepared.cql_actions))
        pull_up = dc.mean(preds[0])
        loss = dc.add(loss, dc.mul(dc.sub(push_down, pull_up), prepared.cql_alpha))
    return loss


def critic_loss(spec: CriticLossSpec, batch, ctx: ProposalContext, gamma: float,
                rng: np.random.Generator,
                policy_rng: np.random.Generator | None = None) -> Tensor:
    return critic_objective(prepare_critic(spec, batch, ctx, gamma, rng, policy_rng),
                            batch, ctx)


def gap(critic, obs: np.ndarray, act: np.ndarray, m_gap: int, rng: np.random.Generator,
        act_low: float, act_high: float,
        discrete_actions: np.ndarray | None = None) -> float:
    """Signed mean of (best of m_gap uniform actions under Q1) - Q1(s, a)."""
    if m_gap < 1:
        raise ProposalConfigError(f"m_gap must be >= 1, got {m_gap}")
    draws = _uniform_actions(rng, m_gap, obs.shape[0], act.shape[1],
                             act_low, act_high, discrete_actions)
    best = np.full(obs.shape[0], -np.inf)
    for u in draws:
        best = np.maximum(best, critic.value_first_main(obs, u))
    return float(np.mean(best - critic.value_first_main(obs, act)))


@dataclass
class ActorPrepared:
    terms: list = field(default_factory=list)  # (kappa, actions, weights)


def prepare_actor(spec: ActorLossSpec, batch, ctx: ProposalContext,
                  rng: np.random.Generator,
                  policy_rng: np.random.Generator | None = None) -> ActorPrepared:
    if len(batch) == 0:
        raise ValueError("actor loss needs a nonempty batch")
    policy_rng = rng if policy_rng is None else policy_rng
    prepared = ActorPrepared()
    for proposal, kappa in zip(spec.proposals, spec.kappas):
        actions = sample_batch(proposal, ctx, batch.obs, rng, stored_actions=batch.act)
        adv = advantage(ctx.critic, ctx.policy, batch.obs, actions, spec.n_base,
                        policy_rng)
        weights = exp_weight(adv, spec.lambda_kl, spec.weight_cap)
        prepared.terms.append((kappa, actions, weights))
    return prepared


def actor_objective(prepared: ActorPrepared, policy, obs: np.ndarray) -> Tensor:
    loss = None
    for kappa, actions, weights in prepared.terms:
        logp = policy.log_prob(obs, actions)
        term = dc.mul(dc.mean(dc.mul(logp, Tensor(weights))), kappa)
        loss = term if loss is None else dc.add(loss, term)
    return dc.neg(loss)


def actor_loss_giwr(spec: ActorLossSpec, batch, ctx: ProposalContext,
                    rng: np.random.Generator,
                    policy_rng: np.random.Generator | None = None) -> Tensor:
    """Descent form of the family objective:
    -E_s[sum_i kappa_i * E_{a~zeta_i}[exp_weight(A) * log pi(a|s)]]."""
    return actor_objective(prepare_actor(spec, batch, ctx, rng, policy_rng),
                           ctx.policy, batch.obs)


def actor_objective_base(batch, ctx: ProposalContext, n_base: int = DEFAULT_N_BASE,
                         lambda_kl: float = DEFAULT_LAMBDA_KL,
                         cap: float = DEFAULT_WEIGHT_CAP,
                         rng: np.random.Generator | None = None,
                         policy_rng: np.random.Generator | None = None) -> Tensor:
    """The plain ascent objective on dataset pairs,
    U = E_batch[exp_weight(A(s,a)) * log pi(a|s)], written independently of
    the family machinery so the two can be checked against each other."""
    adv = advantage(ctx.critic, ctx.policy, batch.obs, batch.act, n_base,
                    rng if policy_rng is None else policy_rng)
    weights = exp_weight(adv, lambda_kl, cap)
    logp = ctx.policy.log_prob(batch.obs, batch.act)
    return dc.mean(dc.mul(logp, Tensor(weights)))


def bc_loss(policy, batch) -> Tensor:
    """Mean negative log-likelihood of the dataset actions."""
    if len(batch) == 0:
        raise ValueError("cloning loss needs a nonempty batch")
    return dc.neg(dc.mean(policy.log_prob(batch.obs, batch.act)))


def zeta_iw_pmf(pmf: np.ndarray, advantages: np.ndarray, lambda_kl: float) -> np.ndarray:
    """Closed-form KL-regularized improvement over a discrete support:
    out(a) proportional to pmf(a) * exp(A(a) / lambda_kl), normalized by exact
    summation. Shift-invariant in A via max subtraction."""
    pmf = np.asarray(pmf, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    if pmf.shape != advantages.shape or pmf.ndim != 1:
        raise ValueError("pmf and advantages must be 1-d arrays of equal length")
    if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-8:
        raise ValueError("input pmf must be nonnegative and sum to 1 within 1e-8")
    if not lambda_kl > 0:
        raise ProposalConfigError(f"lambda_kl must be positive, got {lambda_kl}")
    scaled = advantages / lambda_kl
    with np.errstate(under="ignore"):
        weights = pmf * np.exp(scaled - scaled.max())
    return weights / weights.sum()
