"""Finite-horizon MDP primitives: policies, value queries, and value oracles.

States and actions are 1-D float vectors (tabular environments embed the
integer index as a one-element vector). Policies are time-indexed: an action
rule ``decide(state, t, rng)`` valid for t in {0, ..., horizon-1}. Everything
here is pure given (inputs, seed), so calls are safe to issue concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Policy",
    "ValueQuery",
    "UnsupportedEnvError",
    "policy_value_mc",
    "policy_value_dp",
    "compose_first_action",
    "rollout_return",
]


class UnsupportedEnvError(TypeError):
    """Raised when an operation needs structure the environment lacks."""


@dataclass(frozen=True)
class Policy:
    """A time-indexed (non-stationary) action rule.

    ``decide`` maps (state, t, rng) to an action and must be deterministic
    given identical rng state. ``action_probs``, when present, gives the exact
    per-timestep action distribution over a tabular environment's action set
    (indexed by integer state) and enables the exact DP value oracle.
    ``decide_batch``, when present, maps (states [B, d], t, rng) to a [B, d_a]
    action block and is used by vectorized rollout paths.
    """

    decide: Callable[[np.ndarray, int, np.random.Generator], np.ndarray]
    id: str
    action_probs: Optional[Callable[[int, int], np.ndarray]] = None
    decide_batch: Optional[Callable[[np.ndarray, int, np.random.Generator], np.ndarray]] = field(
        default=None, compare=False
    )


@dataclass(frozen=True)
class ValueQuery:
    """Arguments of a finite-horizon discounted value evaluation."""

    state: np.ndarray
    policy: Policy
    horizon: int
    gamma: float

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")


def rollout_return(env, policy: Policy, state: np.ndarray, horizon: int, gamma: float,
                   rng: np.random.Generator) -> float:
    """Single rollout of the discounted return over ``horizon`` steps.

    Stops early once a terminal state is reached; remaining rewards are 0.
    """
    s = np.asarray(state, dtype=float)
    total = 0.0
    discount = 1.0
    for t in range(horizon):
        a = policy.decide(s, t, rng)
        s, r, terminal = env.step(s, a, rng)
        total += discount * r
        if terminal:
            break
        discount *= gamma
    return total


def policy_value_mc(env, query: ValueQuery, n_rollouts: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo estimate of the finite-horizon value with its standard error.

    Rollout i draws all randomness from a generator seeded with ``seed + i``,
    so the estimate is reproducible and rollouts could run concurrently.
    Returns (sample mean, standard error); the standard error is 0 when
    ``n_rollouts`` is 1.
    """
    if n_rollouts < 1:
        raise ValueError(f"n_rollouts must be >= 1, got {n_rollouts}")
    env.validate_state(query.state)
    returns = np.empty(n_rollouts)
    for i in range(n_rollouts):
        rng = np.random.default_rng(seed + i)
        returns[i] = rollout_return(env, query.policy, query.state, query.horizon,
                                    query.gamma, rng)
    mean = float(returns.mean())
    std_err = float(returns.std(ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return mean, std_err


def policy_value_mc_batched(env, query: ValueQuery, n_rollouts: int, seed: int) -> tuple[float, float]:
    """Vectorized Monte-Carlo value estimate for environments with a batched step.

    All rollouts advance in lockstep from a single generator seeded with
    ``seed`` (deterministic, but a different random stream than the
    rollout-indexed seeding of :func:`policy_value_mc`). Falls back to
    :func:`policy_value_mc` when the environment or policy has no batch path.
    """
    if n_rollouts < 1:
        raise ValueError(f"n_rollouts must be >= 1, got {n_rollouts}")
    if not hasattr(env, "step_batch") or query.policy.decide_batch is None:
        return policy_value_mc(env, query, n_rollouts, seed)
    env.validate_state(query.state)
    rng = np.random.default_rng(seed)
    states = np.repeat(np.asarray(query.state, dtype=float)[None, :], n_rollouts, axis=0)
    returns = np.zeros(n_rollouts)
    alive = np.ones(n_rollouts, dtype=bool)
    discount = 1.0
    for t in range(query.horizon):
        actions = query.policy.decide_batch(states, t, rng)
        states, rewards, terminal = env.step_batch(states, actions, rng)
        returns += discount * rewards * alive
        alive &= ~terminal
        if not alive.any():
            break
        discount *= query.gamma
    mean = float(returns.mean())
    std_err = float(returns.std(ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return mean, std_err


def policy_value_dp(env, query: ValueQuery) -> float:
    """Exact finite-horizon value by backward induction on a tabular environment.

    Requires the environment to expose ``transition_table`` [S, A, S],
    ``reward_table`` [S, A], ``terminal_mask`` [S], and ``state_index``; the
    policy must expose ``action_probs``. V_h = 0, and for t = h-1 ... 0:

        V_t(s) = sum_a pi(a | s, t) * (R(s, a) + gamma * sum_s' P(s' | s, a) * V_{t+1}(s'))

    with V_t(s) = 0 at terminal states (they yield no further reward).
    """
    for attr in ("transition_table", "reward_table", "terminal_mask", "state_index"):
        if not hasattr(env, attr):
            raise UnsupportedEnvError(f"exact DP needs a tabular environment (missing {attr})")
    if query.policy.action_probs is None:
        raise UnsupportedEnvError("exact DP needs a policy with action_probs")

    p = env.transition_table  # [S, A, S]
    r = env.reward_table      # [S, A]
    terminal = env.terminal_mask
    n_states, n_actions = r.shape

    v_next = np.zeros(n_states)
    for t in range(query.horizon - 1, -1, -1):
        q = r + query.gamma * p @ v_next  # [S, A]
        probs = np.array([query.policy.action_probs(s, t) for s in range(n_states)])
        v = (probs * q).sum(axis=1)
        v[terminal] = 0.0
        v_next = v
    return float(v_next[env.state_index(query.state)])


def compose_first_action(policy: Policy, a0: np.ndarray) -> Policy:
    """Policy that plays ``a0`` at t = 0 and defers to ``policy`` afterwards.

    The inner policy keeps seeing the original time index t (not t - 1), so
    evaluating the composed policy's value from state s over horizon h gives
    the action value Q(s, a0, h) of the inner policy.
    """
    a0 = np.asarray(a0, dtype=float)

    def decide(state: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
        if t == 0:
            return a0
        return policy.decide(state, t, rng)

    action_probs = None
    if policy.action_probs is not None:
        inner_probs = policy.action_probs
        a0_index = int(round(float(a0[0])))

        def action_probs(s: int, t: int) -> np.ndarray:
            if t == 0:
                probs = np.zeros_like(inner_probs(s, 0))
                probs[a0_index] = 1.0
                return probs
            return inner_probs(s, t)

    decide_batch = None
    if policy.decide_batch is not None:
        inner_batch = policy.decide_batch

        def decide_batch(states: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
            if t == 0:
                return np.repeat(a0[None, :], states.shape[0], axis=0)
            return inner_batch(states, t, rng)

    return Policy(decide=decide, id=f"{policy.id}|a0", action_probs=action_probs,
                  decide_batch=decide_batch)
