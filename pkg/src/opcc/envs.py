"""Desk-scale ground-truth environments.

Two families are provided:

* :class:`ChainWorld` - a stochastic 1-D chain with two actions and exact
  transition/reward tables, so the dynamic-programming value oracle applies.
* :class:`PointMaze` - a continuous 2-D navigation task with 4-D observations
  (x, y, vx, vy), 2-D acceleration actions, sparse unit reward inside a goal
  rectangle, axis-aligned rectangular walls, and no terminal states.

Environment objects are immutable descriptions; ``step`` is pure given the
rng, so instances are freely shareable across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mdp import Policy

__all__ = [
    "ChainWorld",
    "Rect",
    "PointMaze",
    "make_env",
    "random_policy",
    "termination_for",
    "sample_initial_states",
    "ENV_IDS",
]

LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class ChainWorld:
    """Stochastic chain over states {0, ..., n_states-1} with actions LEFT/RIGHT.

    A move succeeds with probability ``p_advance`` and otherwise leaves the
    state unchanged; positions clamp at both ends. States listed in
    ``absorbing_states`` self-loop with probability 1 regardless of the
    action. ``terminal_states`` additionally raise the terminal flag, ending
    episodes; stepping from a terminal state yields reward 0.
    """

    n_states: int
    p_advance: float
    reward_table: np.ndarray  # [n_states, 2]
    absorbing_states: frozenset = frozenset()
    terminal_states: frozenset = frozenset()
    max_steps: int = 40
    id: str = "chain"

    obs_dim = 1
    act_dim = 1
    n_actions = 2

    def __post_init__(self) -> None:
        if self.n_states < 2:
            raise ValueError("ChainWorld needs at least 2 states")
        if not 0.0 < self.p_advance <= 1.0:
            raise ValueError("p_advance must be in (0, 1]")
        rewards = np.asarray(self.reward_table, dtype=float)
        if rewards.shape != (self.n_states, 2):
            raise ValueError(f"reward_table must have shape ({self.n_states}, 2)")
        object.__setattr__(self, "reward_table", rewards)
        if not self.terminal_states <= self.absorbing_states:
            raise ValueError("terminal states must be absorbing")

    @property
    def transition_table(self) -> np.ndarray:
        """Exact transition kernel P[s, a, s']; rows sum to 1."""
        p = np.zeros((self.n_states, 2, self.n_states))
        for s in range(self.n_states):
            if s in self.absorbing_states:
                p[s, :, s] = 1.0
                continue
            for a, move in ((LEFT, -1), (RIGHT, +1)):
                nxt = min(max(s + move, 0), self.n_states - 1)
                p[s, a, nxt] += self.p_advance
                p[s, a, s] += 1.0 - self.p_advance
        return p

    @property
    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.terminal_states)] = True
        return mask

    def validate_state(self, state: np.ndarray) -> None:
        state = np.asarray(state)
        if state.shape != (1,):
            raise ValueError(f"ChainWorld state must be a 1-vector, got shape {state.shape}")
        if not np.isfinite(state).all():
            raise ValueError("state entries must be finite")

    def state_index(self, state: np.ndarray) -> int:
        self.validate_state(state)
        idx = int(round(float(state[0])))
        if not 0 <= idx < self.n_states:
            raise ValueError(f"state index {idx} outside [0, {self.n_states})")
        return idx

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(1)

    def step(self, state: np.ndarray, action: np.ndarray,
             rng: np.random.Generator) -> tuple[np.ndarray, float, bool]:
        s = self.state_index(state)
        action = np.asarray(action)
        if action.shape != (1,):
            raise ValueError(f"ChainWorld action must be a 1-vector, got shape {action.shape}")
        a = int(round(float(action[0])))
        if a not in (LEFT, RIGHT):
            raise ValueError(f"ChainWorld action must be 0 (left) or 1 (right), got {a}")
        if s in self.terminal_states:
            return np.array([float(s)]), 0.0, True
        reward = float(self.reward_table[s, a])
        if s in self.absorbing_states:
            nxt = s
        else:
            move = -1 if a == LEFT else +1
            nxt = min(max(s + move, 0), self.n_states - 1) if rng.random() < self.p_advance else s
        return np.array([float(nxt)]), reward, nxt in self.terminal_states


def _sparse_chain(n_states: int, p_advance: float, max_steps: int, env_id: str) -> ChainWorld:
    # Goal at the right end: absorbing self-loop paying 1 per step, no terminal flag.
    rewards = np.zeros((n_states, 2))
    rewards[n_states - 1, :] = 1.0
    return ChainWorld(n_states=n_states, p_advance=p_advance, reward_table=rewards,
                      absorbing_states=frozenset({n_states - 1}), max_steps=max_steps,
                      id=env_id)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate rectangle {self}")

    def contains(self, x, y):
        return (self.x0 <= x) & (x <= self.x1) & (self.y0 <= y) & (y <= self.y1)

    def strictly_inside(self, x, y):
        return (self.x0 < x) & (x < self.x1) & (self.y0 < y) & (y < self.y1)

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)])


@dataclass(frozen=True)
class PointMaze:
    """Point-mass navigation in a walled box with sparse goal reward.

    Observation is (x, y, vx, vy); the action is a 2-D acceleration clipped
    componentwise to ``[-action_bound, action_bound]``. One step integrates

        v' = (1 - damping) * v + dt * a + noise,   p' = p + dt * v'

    with iid Gaussian velocity noise of scale ``noise_std``, then resolves
    collisions. If the new position lands strictly inside a wall, the
    position component that crossed the wall face is projected back onto
    that face and the matching velocity component is zeroed; when both
    components crossed in the same step, the face reached first (smaller
    entry fraction along the motion) is the one hit. The outer box is handled
    the same way. Reward is 1 when the post-step position lies in
    ``goal_region`` (edges inclusive), else 0. Episodes never terminate.
    """

    width: float
    height: float
    walls: tuple[Rect, ...]
    goal_region: Rect
    start_region: Rect
    damping: float = 0.05
    noise_std: float = 0.05
    dt: float = 0.1
    action_bound: float = 1.0
    max_steps: int = 150
    id: str = "point"

    obs_dim = 4
    act_dim = 2

    def __post_init__(self) -> None:
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")
        if self.noise_std < 0 or self.dt <= 0 or self.action_bound <= 0:
            raise ValueError("noise_std must be >= 0; dt and action_bound positive")
        for region in (self.goal_region, self.start_region):
            for wall in self.walls:
                overlap_x = max(region.x0, wall.x0) < min(region.x1, wall.x1)
                overlap_y = max(region.y0, wall.y0) < min(region.y1, wall.y1)
                if overlap_x and overlap_y:
                    raise ValueError("start/goal region intersects a wall")

    def validate_state(self, state: np.ndarray) -> None:
        state = np.asarray(state)
        if state.shape != (4,):
            raise ValueError(f"PointMaze state must be a 4-vector, got shape {state.shape}")
        if not np.isfinite(state).all():
            raise ValueError("state entries must be finite")

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        r = self.start_region
        x = r.x0 + (r.x1 - r.x0) * rng.random()
        y = r.y0 + (r.y1 - r.y0) * rng.random()
        return np.array([x, y, 0.0, 0.0])

    def step(self, state: np.ndarray, action: np.ndarray,
             rng: np.random.Generator) -> tuple[np.ndarray, float, bool]:
        self.validate_state(state)
        action = np.asarray(action, dtype=float)
        if action.shape != (2,):
            raise ValueError(f"PointMaze action must be a 2-vector, got shape {action.shape}")
        nxt, reward, terminal = self.step_batch(state[None, :], action[None, :], rng)
        return nxt[0], float(reward[0]), bool(terminal[0])

    def step_batch(self, states: np.ndarray, actions: np.ndarray,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized step over a [B, 4] state block; same physics as ``step``."""
        states = np.asarray(states, dtype=float)
        actions = np.clip(np.asarray(actions, dtype=float), -self.action_bound, self.action_bound)
        pos_old = states[:, :2]
        vel = states[:, 2:]

        vel = (1.0 - self.damping) * vel + self.dt * actions
        if self.noise_std > 0:
            vel = vel + self.noise_std * rng.standard_normal(vel.shape)
        pos = pos_old + self.dt * vel
        vel = vel.copy()

        # Outer box: clamp and kill the velocity component that hit.
        for axis, hi in ((0, self.width), (1, self.height)):
            low = pos[:, axis] < 0.0
            high = pos[:, axis] > hi
            pos[low, axis] = 0.0
            pos[high, axis] = hi
            vel[low | high, axis] = 0.0

        for _ in range(4):
            hit_any = False
            for wall in self.walls:
                inside = wall.strictly_inside(pos[:, 0], pos[:, 1])
                if not inside.any():
                    continue
                hit_any = True
                idx = np.nonzero(inside)[0]
                for i in idx:
                    self._resolve_wall(wall, pos_old[i], pos[i], vel[i])
            if not hit_any:
                break

        reward = self.goal_region.contains(pos[:, 0], pos[:, 1]).astype(float)
        nxt = np.concatenate([pos, vel], axis=1)
        terminal = np.zeros(len(nxt), dtype=bool)
        return nxt, reward, terminal

    @staticmethod
    def _resolve_wall(wall: Rect, p_old: np.ndarray, p: np.ndarray, v: np.ndarray) -> None:
        # Entry fraction along each axis; inf when that axis did not cross a face.
        tx = ty = np.inf
        face_x = face_y = None
        if p_old[0] <= wall.x0:
            face_x, tx = wall.x0, (wall.x0 - p_old[0]) / max(p[0] - p_old[0], 1e-300)
        elif p_old[0] >= wall.x1:
            face_x, tx = wall.x1, (wall.x1 - p_old[0]) / min(p[0] - p_old[0], -1e-300)
        if p_old[1] <= wall.y0:
            face_y, ty = wall.y0, (wall.y0 - p_old[1]) / max(p[1] - p_old[1], 1e-300)
        elif p_old[1] >= wall.y1:
            face_y, ty = wall.y1, (wall.y1 - p_old[1]) / min(p[1] - p_old[1], -1e-300)

        if face_x is None and face_y is None:
            # Started inside (should not occur from a legal state): push to the
            # nearest face on each axis and stop dead.
            p[0] = wall.x0 if p[0] - wall.x0 <= wall.x1 - p[0] else wall.x1
            p[1] = wall.y0 if p[1] - wall.y0 <= wall.y1 - p[1] else wall.y1
            v[:] = 0.0
            return
        if tx <= ty:
            p[0] = face_x
            v[0] = 0.0
        else:
            p[1] = face_y
            v[1] = 0.0


def _open_maze() -> PointMaze:
    return PointMaze(width=6.0, height=6.0, walls=(),
                     goal_region=Rect(4.5, 4.5, 5.5, 5.5),
                     start_region=Rect(0.5, 0.5, 1.5, 1.5), id="point-open")


def _u_maze() -> PointMaze:
    # One bar rising from the floor: the route to the goal bends over its top.
    return PointMaze(width=6.0, height=6.0,
                     walls=(Rect(2.7, 0.0, 3.3, 4.2),),
                     goal_region=Rect(4.5, 4.5, 5.5, 5.5),
                     start_region=Rect(0.5, 0.5, 1.5, 1.5), id="point-umaze")


def _medium_maze() -> PointMaze:
    # Two offset bars forming a slalom.
    return PointMaze(width=6.0, height=6.0,
                     walls=(Rect(1.8, 1.5, 2.4, 6.0), Rect(3.6, 0.0, 4.2, 4.5)),
                     goal_region=Rect(4.8, 4.8, 5.6, 5.6),
                     start_region=Rect(0.5, 0.5, 1.5, 1.5), id="point-medium")


ENV_IDS = ("chain-default", "point-open", "point-umaze", "point-medium")


def make_env(env_id: str):
    """Build one of the shipped environments by id."""
    if env_id in ("chain", "chain-default"):
        return _sparse_chain(n_states=12, p_advance=0.85, max_steps=40, env_id="chain-default")
    if env_id == "point-open":
        return _open_maze()
    if env_id == "point-umaze":
        return _u_maze()
    if env_id == "point-medium":
        return _medium_maze()
    raise ValueError(f"unknown environment id {env_id!r}; known: {', '.join(ENV_IDS)}")


def random_policy(env) -> Policy:
    """Uniform-random policy over the environment's action space."""
    if isinstance(env, ChainWorld):
        def decide(state, t, rng):
            return np.array([float(rng.integers(0, 2))])

        return Policy(decide=decide, id="random",
                      action_probs=lambda s, t: np.array([0.5, 0.5]))

    bound = env.action_bound

    def decide(state, t, rng):
        return rng.uniform(-bound, bound, size=2)

    def decide_batch(states, t, rng):
        return rng.uniform(-bound, bound, size=(states.shape[0], 2))

    return Policy(decide=decide, id="random", decide_batch=decide_batch)


def termination_for(env) -> Callable[[np.ndarray], np.ndarray] | None:
    """Predefined episode-termination rule for model rollouts, or None.

    Mirrors the true environment: PointMaze never terminates; ChainWorld
    terminates on (rounded) terminal states.
    """
    if isinstance(env, ChainWorld) and env.terminal_states:
        terminal = env.terminal_mask

        def fn(states: np.ndarray) -> np.ndarray:
            idx = np.clip(np.rint(states[..., 0]).astype(int), 0, env.n_states - 1)
            return terminal[idx]

        return fn
    return None


def sample_initial_states(env, generators: Sequence[Policy], n: int, seed: int) -> list[np.ndarray]:
    """Harvest ``n`` states from episodes driven by the given policies.

    Episodes rotate round-robin through each generator plus, when several are
    given, a mixture policy that picks one generator uniformly at every step.
    All states visited (including reset states) are logged in order and the
    first ``n`` are returned. Deterministic given ``seed``: episode k uses a
    generator seeded with ``seed + k``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not generators:
        raise ValueError("need at least one generator policy")

    drivers = list(generators)
    if len(generators) > 1:
        members = list(generators)

        def mixture_decide(state, t, rng):
            return members[rng.integers(0, len(members))].decide(state, t, rng)

        drivers.append(Policy(decide=mixture_decide, id="mixture"))

    pool: list[np.ndarray] = []
    episode = 0
    while len(pool) < n:
        driver = drivers[episode % len(drivers)]
        rng = np.random.default_rng(seed + episode)
        s = env.reset(rng)
        pool.append(s)
        for t in range(env.max_steps):
            if len(pool) >= n:
                break
            a = driver.decide(s, t, rng)
            s, _, terminal = env.step(s, a, rng)
            pool.append(s)
            if terminal:
                break
        episode += 1
    return pool[:n]
