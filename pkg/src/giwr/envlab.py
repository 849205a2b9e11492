"""In-repo environments: two continuous point-mass tasks and a small
discrete chain whose dynamics are explicit tables, so exact answers exist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    act_dim: int
    act_low: float
    act_high: float
    horizon: int
    gamma: float

    @property
    def act_scale(self) -> float:
        return self.act_high


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminal: int  # 1 ends the episode; bootstraps then use gamma = 0


class _PointMass:
    """Shared double-integrator dynamics, one instance per spatial dimension.

    vel' = 0.95 vel + 0.1 a, pos' = pos + 0.1 vel'. Success once every
    coordinate of pos' and vel' is within 0.02 of zero; the time cap is
    folded into the terminal flag.
    """

    def __init__(self, dims: int):
        self.dims = dims
        self.spec = EnvSpec(obs_dim=2 * dims, act_dim=dims, act_low=-1.0,
                            act_high=1.0, horizon=200, gamma=0.99)
        self.clip_warnings = 0
        self._t = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        # Start positions avoid the band around the goal: |pos| in [0.1, 1].
        signs = rng.integers(0, 2, size=self.dims) * 2 - 1
        mags = rng.uniform(0.1, 1.0, size=self.dims)
        self._t = 0
        return np.concatenate([signs * mags, np.zeros(self.dims)])

    def step(self, obs: np.ndarray, action: np.ndarray) -> StepResult:
        action = np.asarray(action, dtype=np.float64).reshape(self.dims)
        if np.any(action < self.spec.act_low) or np.any(action > self.spec.act_high):
            self.clip_warnings += 1
            action = np.clip(action, self.spec.act_low, self.spec.act_high)
        pos, vel = obs[:self.dims], obs[self.dims:]
        vel2 = 0.95 * vel + 0.1 * action
        pos2 = pos + 0.1 * vel2
        reward = -float(np.linalg.norm(pos2)) - 0.01 * float(action @ action)
        self._t += 1
        success = bool(np.all(np.abs(pos2) < 0.02) and np.all(np.abs(vel2) < 0.02))
        terminal = int(success or self._t >= self.spec.horizon)
        return StepResult(obs=np.concatenate([pos2, vel2]), reward=reward, terminal=terminal)


class PointMass1D(_PointMass):
    def __init__(self):
        super().__init__(dims=1)


class PointMass2D(_PointMass):
    def __init__(self):
        super().__init__(dims=2)


# Chain fixture: 5 states in a line, actions embedded as {-1: left, 0: stay,
# +1: right} with clamping at both ends. Staying on the last state pays 1;
# moving costs a little, so the optimal policy walks right and parks.
CHAIN_ACTIONS = np.array([-1.0, 0.0, 1.0])
CHAIN_N_STATES = 5


def _chain_tables() -> tuple[np.ndarray, np.ndarray]:
    n, k = CHAIN_N_STATES, len(CHAIN_ACTIONS)
    transitions = np.zeros((n, k, n))
    rewards = np.zeros((n, k))
    for s in range(n):
        for j, move in enumerate((-1, 0, 1)):
            transitions[s, j, int(np.clip(s + move, 0, n - 1))] = 1.0
        rewards[s] = (0.0, 1.0, 0.2) if s == n - 1 else (-0.05, 0.0, -0.01)
    return transitions, rewards


CHAIN_TRANSITIONS, CHAIN_REWARDS = _chain_tables()


class DiscreteChain:
    """Tabular MDP dressed in the continuous-env interface: observations are
    one-hot state vectors and continuous actions snap to the nearest
    embedded action value."""

    def __init__(self):
        self.spec = EnvSpec(obs_dim=CHAIN_N_STATES, act_dim=1, act_low=-1.0,
                            act_high=1.0, horizon=40, gamma=0.9)
        self.discrete_actions = CHAIN_ACTIONS
        self.transitions = CHAIN_TRANSITIONS
        self.rewards = CHAIN_REWARDS
        self.clip_warnings = 0
        self._t = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._t = 0
        obs = np.zeros(CHAIN_N_STATES)
        obs[0] = 1.0
        return obs

    def step(self, obs: np.ndarray, action: np.ndarray) -> StepResult:
        action = np.asarray(action, dtype=np.float64).reshape(1)
        if action[0] < self.spec.act_low or action[0] > self.spec.act_high:
            self.clip_warnings += 1
            action = np.clip(action, self.spec.act_low, self.spec.act_high)
        state = int(np.argmax(obs))
        a_idx = snap_action_index(action[0])
        next_state = int(np.argmax(self.transitions[state, a_idx]))
        reward = float(self.rewards[state, a_idx])
        self._t += 1
        next_obs = np.zeros(CHAIN_N_STATES)
        next_obs[next_state] = 1.0
        return StepResult(obs=next_obs, reward=reward,
                          terminal=int(self._t >= self.spec.horizon))


def snap_action_index(a: float) -> int:
    """Index of the nearest embedded chain action; ties take the lower index."""
    return int(np.argmin(np.abs(CHAIN_ACTIONS - a)))


_CHAIN_QSTAR: oracle.TabularQ | None = None


def chain_qstar() -> oracle.TabularQ:
    global _CHAIN_QSTAR
    if _CHAIN_QSTAR is None:
        _CHAIN_QSTAR = oracle.value_iteration(CHAIN_TRANSITIONS, CHAIN_REWARDS,
                                              gamma=0.9, tol=1e-12)
    return _CHAIN_QSTAR


def make_env(kind: str):
    envs = {"pointmass1d": PointMass1D, "pointmass2d": PointMass2D, "chain": DiscreteChain}
    if kind not in envs:
        raise ValueError(f"unknown env kind '{kind}', expected one of {sorted(envs)}")
    return envs[kind]()


def expert_policy(env):
    """Scripted controller for an env instance: a PD law on the point
    masses, the greedy optimal action on the chain."""
    if isinstance(env, _PointMass):
        d = env.dims

        def act(obs, rng, deterministic=True):
            return np.clip(-2.0 * obs[:d] - 1.0 * obs[d:], -1.0, 1.0)

        return act
    if isinstance(env, DiscreteChain):
        greedy = np.argmax(chain_qstar().table, axis=1)

        def act(obs, rng, deterministic=True):
            return CHAIN_ACTIONS[greedy[int(np.argmax(obs))]].reshape(1)

        return act
    raise TypeError(f"no scripted expert for {type(env).__name__}")


def rollout(env, policy, seed: int, deterministic: bool = False,
            init_obs: np.ndarray | None = None) -> float:
    """Undiscounted return of one episode; policy is (obs, rng, deterministic) -> action."""
    rng = np.random.default_rng(seed)
    obs = env.reset(rng) if init_obs is None else np.asarray(init_obs, dtype=np.float64)
    if init_obs is not None:
        env._t = 0
    total = 0.0
    for _ in range(env.spec.horizon):
        result = env.step(obs, policy(obs, rng, deterministic))
        total += result.reward
        obs = result.obs
        if result.terminal:
            break
    return total
