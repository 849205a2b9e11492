"""Dataset generation across a quality spectrum, plus the on-disk format.

Datasets are columnar float64 arrays in memory and a little-endian packed
binary on disk (magic GIWRDATA). SARSA datasets additionally store the
next action taken by the behavior; on terminal transitions that slot is a
zero vector and is never read by consumers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .envlab import expert_policy

MAGIC = b"GIWRDATA"
FORMAT_VERSION = 1
FLAG_SARSA = 1

REPLAY_EPSILONS = (0.8, 0.6, 0.4, 0.2)


class DatasetFormatError(ValueError):
    pass


@dataclass
class Transition:
    obs: np.ndarray
    act: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: float
    next_act: np.ndarray | None = None


@dataclass
class Batch:
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    terminal: np.ndarray
    next_act: np.ndarray | None = None

    def __len__(self):
        return self.obs.shape[0]


class Dataset:
    def __init__(self, obs, act, rew, next_obs, terminal, next_act=None,
                 grade_label: str = ""):
        self.obs = np.asarray(obs, dtype=np.float64)
        self.act = np.asarray(act, dtype=np.float64)
        self.rew = np.asarray(rew, dtype=np.float64)
        self.next_obs = np.asarray(next_obs, dtype=np.float64)
        self.terminal = np.asarray(terminal, dtype=np.float64)
        self.next_act = None if next_act is None else np.asarray(next_act, dtype=np.float64)
        self.grade_label = grade_label
        n = self.obs.shape[0]
        if not (self.act.shape[0] == self.rew.shape[0] == self.next_obs.shape[0]
                == self.terminal.shape[0] == n):
            raise ValueError("dataset columns disagree on record count")

    @property
    def sarsa(self) -> bool:
        return self.next_act is not None

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[1]

    @property
    def act_dim(self) -> int:
        return self.act.shape[1]

    def __len__(self):
        return self.obs.shape[0]

    def __getitem__(self, i: int) -> Transition:
        return Transition(obs=self.obs[i], act=self.act[i], reward=float(self.rew[i]),
                          next_obs=self.next_obs[i], terminal=float(self.terminal[i]),
                          next_act=None if self.next_act is None else self.next_act[i])

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.obs[index], self.act[index], self.rew[index],
                       self.next_obs[index], self.terminal[index],
                       None if self.next_act is None else self.next_act[index],
                       grade_label=self.grade_label)


def _behavior_fn(env, behavior):
    """Action sampler (obs, rng) -> action for a behavior description.

    behavior is "expert", "random", or ("epsilon-mix", eps): take the expert
    action with probability 1 - eps, otherwise uniform on the bounds.
    """
    lo, hi = env.spec.act_low, env.spec.act_high
    da = env.spec.act_dim
    if behavior == "random":
        return lambda obs, rng: rng.uniform(lo, hi, size=da)
    expert = expert_policy(env)
    if behavior == "expert":
        return lambda obs, rng: expert(obs, rng)
    if isinstance(behavior, tuple) and behavior[0] == "epsilon-mix":
        eps = float(behavior[1])
        if not 0.0 <= eps <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {eps}")

        def act(obs, rng):
            coin = rng.random()
            noise = rng.uniform(lo, hi, size=da)
            return noise if coin < eps else expert(obs, rng)

        return act
    raise ValueError(f"unknown behavior {behavior!r}")


def _default_label(behavior) -> str:
    if behavior == "expert":
        return "expert"
    if behavior == "random":
        return "random"
    if isinstance(behavior, tuple) and behavior[0] == "epsilon-mix":
        eps = float(behavior[1])
        return "medium" if eps == 0.5 else f"epsilon-mix({eps:g})"
    if behavior == "replay":
        return "replay"
    raise ValueError(f"unknown behavior {behavior!r}")


def generate(env, behavior, n: int, sarsa: bool, seed: int,
             grade_label: str | None = None) -> Dataset:
    """Roll the behavior in env until n transitions exist, then trim to n.

    Whole episodes are generated before trimming so a record cut mid-episode
    still carries its true next action in SARSA mode. "replay" concatenates
    near-equal shares of epsilon-mix(0.8/0.6/0.4/0.2) rollouts.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if behavior == "replay":
        shares = [n // 4] * 4
        for i in range(n - 4 * (n // 4)):
            shares[i] += 1
        parts = [generate(env, ("epsilon-mix", eps), size, sarsa, seed + i)
                 for i, (eps, size) in enumerate(zip(REPLAY_EPSILONS, shares))]
        return Dataset(
            np.concatenate([p.obs for p in parts]),
            np.concatenate([p.act for p in parts]),
            np.concatenate([p.rew for p in parts]),
            np.concatenate([p.next_obs for p in parts]),
            np.concatenate([p.terminal for p in parts]),
            np.concatenate([p.next_act for p in parts]) if sarsa else None,
            grade_label=grade_label if grade_label is not None else "replay")

    act_fn = _behavior_fn(env, behavior)
    rng = np.random.default_rng(seed)
    rows: list[tuple] = []
    while len(rows) < n:
        obs = env.reset(rng)
        action = act_fn(obs, rng)
        episode = []
        for _ in range(env.spec.horizon):
            result = env.step(obs, action)
            next_action = (np.zeros(env.spec.act_dim) if result.terminal
                           else act_fn(result.obs, rng))
            episode.append((obs, action, result.reward, result.obs,
                            float(result.terminal), next_action))
            obs, action = result.obs, next_action
            if result.terminal:
                break
        rows.extend(episode)
    rows = rows[:n]

    da = env.spec.act_dim
    return Dataset(
        obs=np.array([r[0] for r in rows]).reshape(n, env.spec.obs_dim),
        act=np.array([r[1] for r in rows]).reshape(n, da),
        rew=np.array([r[2] for r in rows]),
        next_obs=np.array([r[3] for r in rows]).reshape(n, env.spec.obs_dim),
        terminal=np.array([r[4] for r in rows]),
        next_act=np.array([r[5] for r in rows]).reshape(n, da) if sarsa else None,
        grade_label=grade_label if grade_label is not None else _default_label(behavior))


def mix(expert_ds: Dataset, random_ds: Dataset, p: float, seed: int) -> Dataset:
    """Corruption mixture: floor(p * |expert|) expert records plus
    ceil((1-p) * |random|) random records, shuffled before and after."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if expert_ds.obs_dim != random_ds.obs_dim or expert_ds.act_dim != random_ds.act_dim:
        raise ValueError("mix requires datasets over the same spaces")
    if expert_ds.sarsa != random_ds.sarsa:
        raise ValueError("mix requires matching sarsa flags")
    rng = np.random.default_rng(seed)
    e_idx = rng.permutation(len(expert_ds))[:int(np.floor(p * len(expert_ds)))]
    r_idx = rng.permutation(len(random_ds))[:int(np.ceil((1.0 - p) * len(random_ds)))]
    e, r = expert_ds.subset(e_idx), random_ds.subset(r_idx)
    order = rng.permutation(len(e) + len(r))
    cat = Dataset(
        np.concatenate([e.obs, r.obs])[order],
        np.concatenate([e.act, r.act])[order],
        np.concatenate([e.rew, r.rew])[order],
        np.concatenate([e.next_obs, r.next_obs])[order],
        np.concatenate([e.terminal, r.terminal])[order],
        np.concatenate([e.next_act, r.next_act])[order] if expert_ds.sarsa else None,
        grade_label=f"mixed({p:g})")
    return cat


def _record_dtype(obs_dim: int, act_dim: int, sarsa: bool) -> np.dtype:
    fields = [("obs", "<f8", (obs_dim,)), ("act", "<f8", (act_dim,)),
              ("rew", "<f8"), ("next_obs", "<f8", (obs_dim,)), ("terminal", "u1")]
    if sarsa:
        fields.append(("next_act", "<f8", (act_dim,)))
    return np.dtype(fields)


def save(dataset: Dataset, path) -> None:
    label = dataset.grade_label.encode("utf-8")
    flags = FLAG_SARSA if dataset.sarsa else 0
    header = MAGIC + struct.pack("<IIIQIH", FORMAT_VERSION, dataset.obs_dim,
                                 dataset.act_dim, len(dataset), flags, len(label)) + label
    dtype = _record_dtype(dataset.obs_dim, dataset.act_dim, dataset.sarsa)
    block = np.zeros(len(dataset), dtype=dtype)
    block["obs"] = dataset.obs
    block["act"] = dataset.act
    block["rew"] = dataset.rew
    block["next_obs"] = dataset.next_obs
    block["terminal"] = dataset.terminal.astype(np.uint8)
    if dataset.sarsa:
        block["next_act"] = dataset.next_act
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(block.tobytes())


def load(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic at byte 0, not a dataset file")
    fixed_end = 8 + struct.calcsize("<IIIQIH")
    if len(raw) < fixed_end:
        raise DatasetFormatError(f"{path}: truncated header at byte {len(raw)}")
    version, obs_dim, act_dim, count, flags, label_len = struct.unpack(
        "<IIIQIH", raw[8:fixed_end])
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {version}")
    body_start = fixed_end + label_len
    if len(raw) < body_start:
        raise DatasetFormatError(f"{path}: truncated label at byte {len(raw)}")
    label = raw[fixed_end:body_start].decode("utf-8")
    sarsa = bool(flags & FLAG_SARSA)
    dtype = _record_dtype(obs_dim, act_dim, sarsa)
    expected = count * dtype.itemsize
    if len(raw) - body_start != expected:
        raise DatasetFormatError(
            f"{path}: record block is {len(raw) - body_start} bytes at byte {body_start}, "
            f"expected {expected}")
    block = np.frombuffer(raw, dtype=dtype, count=count, offset=body_start)
    return Dataset(
        obs=block["obs"].reshape(count, obs_dim).copy(),
        act=block["act"].reshape(count, act_dim).copy(),
        rew=block["rew"].copy(),
        next_obs=block["next_obs"].reshape(count, obs_dim).copy(),
        terminal=block["terminal"].astype(np.float64),
        next_act=block["next_act"].reshape(count, act_dim).copy() if sarsa else None,
        grade_label=label)


def sample_minibatch(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement."""
    if len(dataset) == 0:
        raise ValueError("cannot sample from an empty dataset")
    idx = rng.integers(0, len(dataset), size=batch_size)
    return Batch(obs=dataset.obs[idx], act=dataset.act[idx], rew=dataset.rew[idx],
                 next_obs=dataset.next_obs[idx], terminal=dataset.terminal[idx],
                 next_act=None if dataset.next_act is None else dataset.next_act[idx])
