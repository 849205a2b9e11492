"""Proposal distributions: the action sources for critic bootstrapping and
actor regression targets.

Nine named kinds. Three plain samplers (dataset successor actions, the
behavior clone, the current policy), three best-of-m variants scored by the
min over target critics, and three gated variants that fall back from the
policy's best-of-m action to a clone-derived action when an RND novelty
potential flags it as off-distribution.

Everything here runs in inference mode: proposal draws enter losses as
constants, so these functions never touch an autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROPOSAL_KINDS = (
    "beta_sarsa",
    "beta_clone",
    "theta",
    "beta_clone_max",
    "perturbed_beta_clone_max",
    "theta_max",
    "spi_beta_clone",
    "spi_beta_clone_max",
    "spi_perturbed_beta_clone_max",
)

DEFAULT_M = 10
DEFAULT_DELTA = 0.6
DEFAULT_TAU_RND = 0.06

# Handles each kind reads from the context. beta_sarsa reads none: its
# actions come straight from the stored transitions.
_REQUIRED_HANDLES = {
    "beta_sarsa": (),
    "beta_clone": ("clone",),
    "theta": ("policy",),
    "beta_clone_max": ("clone", "critic"),
    "perturbed_beta_clone_max": ("clone", "perturbation", "critic"),
    "theta_max": ("policy", "critic"),
    "spi_beta_clone": ("clone", "policy", "critic", "rnd"),
    "spi_beta_clone_max": ("clone", "policy", "critic", "rnd"),
    "spi_perturbed_beta_clone_max": ("clone", "perturbation", "policy", "critic", "rnd"),
}


class ProposalConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProposalSpec:
    kind: str
    m: int = DEFAULT_M
    delta: float = DEFAULT_DELTA
    tau_rnd: float = DEFAULT_TAU_RND
    # The gate convention (high novelty selects the safe branch) follows the
    # potential's semantics; this flag flips it for sensitivity checks.
    spi_invert_gate: bool = False

    def __post_init__(self):
        if self.kind not in PROPOSAL_KINDS:
            raise ProposalConfigError(
                f"unknown proposal kind {self.kind!r}; expected one of {', '.join(PROPOSAL_KINDS)}")
        if self.m < 1:
            raise ProposalConfigError(f"proposal m must be >= 1, got {self.m}")
        if not 0.0 <= self.delta < 1.0:
            raise ProposalConfigError(f"spi delta must lie in [0, 1), got {self.delta}")
        if self.tau_rnd <= 0.0:
            raise ProposalConfigError(f"rnd temperature must be positive, got {self.tau_rnd}")


@dataclass
class ProposalContext:
    """Read-only model handles plus action-space facts. discrete_actions, when
    set, snaps every proposal output to the nearest embedded action."""

    act_low: float
    act_high: float
    policy: object = None
    clone: object = None
    perturbation: object = None
    critic: object = None
    rnd: object = None
    discrete_actions: np.ndarray | None = None
    stats: dict = field(default_factory=lambda: {"bounds_violations": 0})


def validate_context(spec: ProposalSpec, ctx: ProposalContext) -> None:
    for handle in _REQUIRED_HANDLES[spec.kind]:
        if getattr(ctx, handle) is None:
            raise ProposalConfigError(
                f"proposal kind {spec.kind!r} requires a {handle} handle, none provided")


def snap_to_embedded(actions: np.ndarray, embedded: np.ndarray) -> np.ndarray:
    """Nearest embedded action per row; ties go to the lower index."""
    dist = np.abs(actions[:, 0][:, None] - embedded[None, :])
    return embedded[np.argmin(dist, axis=1)][:, None]


def _finalize(ctx: ProposalContext, actions: np.ndarray) -> np.ndarray:
    if ctx.discrete_actions is not None:
        actions = snap_to_embedded(actions, ctx.discrete_actions)
    clipped = np.clip(actions, ctx.act_low, ctx.act_high)
    moved = np.any(np.abs(clipped - actions) > 1e-12, axis=1)
    ctx.stats["bounds_violations"] += int(np.sum(moved))
    return clipped


def _base_sampler(name: str, ctx: ProposalContext):
    if name == "theta":
        def draw(obs, rng):
            action, _ = ctx.policy.sample(obs, rng)
            return _finalize(ctx, action.data)
    elif name == "beta_clone":
        def draw(obs, rng):
            return _finalize(ctx, ctx.clone.sample(obs, rng))
    elif name == "perturbed_beta_clone":
        def draw(obs, rng):
            return _finalize(ctx, ctx.perturbation.sample(ctx.clone, obs, rng))
    else:
        raise ProposalConfigError(f"no base sampler named {name!r}")
    return draw


def t_eval(base_sampler, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return base_sampler(obs, rng)


def t_max(base_sampler, score_fn, obs: np.ndarray, m: int,
          rng: np.random.Generator) -> np.ndarray:
    """Best of m draws under score_fn(obs, actions); ties resolve to the
    lowest draw index."""
    if m < 1:
        raise ProposalConfigError(f"t_max needs m >= 1, got {m}")
    candidates = []
    scores = []
    for _ in range(m):
        acts = base_sampler(obs, rng)
        candidates.append(acts)
        scores.append(np.asarray(score_fn(obs, acts), dtype=np.float64))
    cand = np.stack(candidates)
    score = np.stack(scores)
    pick = np.argmax(score, axis=0)
    cols = np.arange(obs.shape[0])
    chosen = cand[pick, cols]
    assert np.all(score[pick, cols][None, :] >= score), \
        "t_max selected a dominated candidate"
    return chosen


def potential_rho(rnd, obs: np.ndarray, act: np.ndarray, tau_rnd: float) -> np.ndarray:
    """Novelty potential in [0, 1); evaluation only, never updates the
    online error scale."""
    if tau_rnd <= 0.0:
        raise ProposalConfigError(f"rnd temperature must be positive, got {tau_rnd}")
    return 1.0 - np.exp(-rnd.eta_bar(obs, act) / tau_rnd)


def _min_target_score(ctx: ProposalContext):
    def score(obs, acts):
        return ctx.critic.value_min_targets(obs, acts)
    return score


def _gated(spec: ProposalSpec, ctx: ProposalContext, obs: np.ndarray,
           rng: np.random.Generator, base_name: str, safe_is_max: bool) -> np.ndarray:
    """Both branches are computed for the whole batch before selection, so
    the rng stream advances the same way regardless of the gate outcome."""
    score = _min_target_score(ctx)
    amax = t_max(_base_sampler("theta", ctx), score, obs, spec.m, rng)
    rho = potential_rho(ctx.rnd, obs, amax, spec.tau_rnd)
    safe_side = rho >= spec.delta
    if spec.spi_invert_gate:
        safe_side = ~safe_side
    base = _base_sampler(base_name, ctx)
    if safe_is_max:
        safe = t_max(base, score, obs, spec.m, rng)
    else:
        safe = t_eval(base, obs, rng)
    return np.where(safe_side[:, None], safe, amax)


def sample_batch(spec: ProposalSpec, ctx: ProposalContext, obs: np.ndarray,
                 rng: np.random.Generator,
                 stored_actions: np.ndarray | None = None) -> np.ndarray:
    """Draw one proposal action per row of obs. beta_sarsa returns the
    stored partner actions for these states and needs them passed in."""
    validate_context(spec, ctx)
    kind = spec.kind
    if kind == "beta_sarsa":
        if stored_actions is None:
            raise ProposalConfigError(
                "beta_sarsa proposals read stored actions; this batch has none "
                "(dataset written without --sarsa?)")
        return _finalize(ctx, np.array(stored_actions, dtype=np.float64))
    if kind == "beta_clone":
        return t_eval(_base_sampler("beta_clone", ctx), obs, rng)
    if kind == "theta":
        return t_eval(_base_sampler("theta", ctx), obs, rng)
    score = _min_target_score(ctx) if ctx.critic is not None else None
    if kind == "beta_clone_max":
        return t_max(_base_sampler("beta_clone", ctx), score, obs, spec.m, rng)
    if kind == "perturbed_beta_clone_max":
        return t_max(_base_sampler("perturbed_beta_clone", ctx), score, obs, spec.m, rng)
    if kind == "theta_max":
        return t_max(_base_sampler("theta", ctx), score, obs, spec.m, rng)
    if kind == "spi_beta_clone":
        return _gated(spec, ctx, obs, rng, "beta_clone", safe_is_max=False)
    if kind == "spi_beta_clone_max":
        return _gated(spec, ctx, obs, rng, "beta_clone", safe_is_max=True)
    if kind == "spi_perturbed_beta_clone_max":
        return _gated(spec, ctx, obs, rng, "perturbed_beta_clone", safe_is_max=True)
    raise ProposalConfigError(f"unhandled proposal kind {kind!r}")


def sample_from(spec: ProposalSpec, ctx: ProposalContext, s: np.ndarray,
                rng: np.random.Generator, transition=None) -> np.ndarray:
    """Single-state form of sample_batch; beta_sarsa takes the transition
    whose successor state is s and returns its stored successor action."""
    s = np.asarray(s, dtype=np.float64)
    if spec.kind == "beta_sarsa":
        if transition is None:
            raise ProposalConfigError("beta_sarsa proposals need the stored transition")
        nxt = np.asarray(transition.next_obs, dtype=np.float64)
        if not np.array_equal(nxt, s):
            raise ProposalConfigError(
                "beta_sarsa transition mismatch: its successor state is not s")
        stored = np.asarray(transition.next_act, dtype=np.float64)[None, :]
        return sample_batch(spec, ctx, s[None, :], rng, stored_actions=stored)[0]
    return sample_batch(spec, ctx, s[None, :], rng)[0]
