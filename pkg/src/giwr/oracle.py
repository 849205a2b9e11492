"""Exact tabular computations used as ground truth in tests.

Everything here works on explicit transition/reward tables, so the
stochastic pieces of the library (sampled operators, TD training) can be
checked against closed-form answers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass
class TabularQ:
    """An exact action-value table over a finite MDP."""

    table: np.ndarray  # (n_states, n_actions)
    gamma: float

    def greedy(self) -> np.ndarray:
        """Deterministic greedy policy as an (S, A) row-stochastic matrix."""
        pmf = np.zeros_like(self.table)
        pmf[np.arange(self.table.shape[0]), np.argmax(self.table, axis=1)] = 1.0
        return pmf


def value_iteration(transitions: np.ndarray, rewards: np.ndarray, gamma: float,
                    tol: float = 1e-10, max_iters: int = 1_000_000) -> TabularQ:
    """Optimal Q via Q <- r + gamma * P @ max_a' Q, to sup-norm residual < tol.

    transitions: (S, A, S) row-stochastic in the last axis; rewards: (S, A).
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"value_iteration requires gamma in [0, 1), got {gamma}")
    transitions = np.asarray(transitions, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    row_sums = transitions.sum(axis=2)
    if not np.allclose(row_sums, 1.0, atol=1e-12):
        raise ValueError("transition rows must sum to 1")

    q = np.zeros_like(rewards)
    for _ in range(max_iters):
        backed_up = rewards + gamma * transitions @ q.max(axis=1)
        residual = np.max(np.abs(backed_up - q))
        q = backed_up
        if residual < tol:
            return TabularQ(table=q, gamma=gamma)
    raise RuntimeError(f"value iteration did not reach residual {tol} in {max_iters} sweeps")


def exact_policy_eval(transitions: np.ndarray, rewards: np.ndarray,
                      policy: np.ndarray, gamma: float) -> TabularQ:
    """Q^pi from the linear system Q = r + gamma * P * Pi * Q (direct solve)."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"exact_policy_eval requires gamma in [0, 1), got {gamma}")
    transitions = np.asarray(transitions, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    policy = np.asarray(policy, dtype=np.float64)
    n_states, n_actions = rewards.shape
    if not np.allclose(policy.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("policy rows must sum to 1")

    # M[(s,a),(s',a')] = gamma * P(s'|s,a) * pi(a'|s'), flattened over (s,a).
    flow = transitions.reshape(n_states * n_actions, n_states)
    m = gamma * flow[:, :, None] * policy[None, :, :]
    m = m.reshape(n_states * n_actions, n_states * n_actions)
    q = np.linalg.solve(np.eye(n_states * n_actions) - m, rewards.reshape(-1))
    return TabularQ(table=q.reshape(n_states, n_actions), gamma=gamma)


def brute_force_tmax_dist(base_pmf: np.ndarray, q_row: np.ndarray, m: int) -> np.ndarray:
    """Exact law of best-of-m selection over a finite action set.

    Draw m i.i.d. actions from base_pmf, keep the one with the highest
    q_row value; ties go to the lowest draw index. Returns the pmf of the
    kept action, via order statistics rather than simulation.
    """
    base_pmf = np.asarray(base_pmf, dtype=np.float64)
    q_row = np.asarray(q_row, dtype=np.float64)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if base_pmf.ndim != 1 or base_pmf.shape != q_row.shape:
        raise ValueError("base_pmf and q_row must be 1-d and the same length")
    if abs(base_pmf.sum() - 1.0) > 1e-12 or np.any(base_pmf < 0):
        raise ValueError("base_pmf must be a probability vector")

    out = np.zeros_like(base_pmf)
    for a, p_a in enumerate(base_pmf):
        if p_a == 0.0:
            continue
        # Draw i wins with action a iff every earlier draw is strictly worse
        # and every later draw is no better: p_a * sum_i lo^(i-1) * hi^(m-i).
        lo = base_pmf[q_row < q_row[a]].sum()
        hi = base_pmf[q_row <= q_row[a]].sum()
        if hi == lo:
            series = m * lo ** (m - 1)
        else:
            series = (hi ** m - lo ** m) / (hi - lo)
        out[a] = p_a * series
    return out


def save_table(path, table: np.ndarray, note: str = "") -> None:
    """Write a numeric table as plain text with an integrity checksum."""
    table = np.asarray(table, dtype=np.float64)
    body_lines = [" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(table)]
    body = "\n".join(body_lines) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    header = f"# sha256 {digest}\n"
    if note:
        header += f"# {note}\n"
    header += f"# shape {' '.join(str(d) for d in table.shape)}\n"
    with open(path, "w") as fh:
        fh.write(header + body)


def load_table(path) -> np.ndarray:
    """Read a checksummed table written by save_table; fails on tampering."""
    with open(path) as fh:
        lines = fh.readlines()
    if not lines or not lines[0].startswith("# sha256 "):
        raise ValueError(f"{path}: missing checksum header")
    expected = lines[0].split()[2]
    shape = None
    body_start = 1
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("# shape "):
            shape = tuple(int(t) for t in line.split()[2:])
        if not line.startswith("#"):
            body_start = i
            break
    body = "".join(lines[body_start:])
    digest = hashlib.sha256(body.encode()).hexdigest()
    if digest != expected:
        raise ValueError(f"{path}: checksum mismatch, fixture was modified")
    table = np.array([[float(v) for v in line.split()] for line in body.splitlines()])
    if shape is not None:
        table = table.reshape(shape)
    return table
