import numpy as np
import pytest

from opcc.envs import (ChainWorld, PointMaze, Rect, make_env, random_policy,
                       sample_initial_states, termination_for)
from opcc.mdp import Policy


def test_chain_transition_rows_sum_to_one():
    for env_id in ("chain-default",):
        env = make_env(env_id)
        p = env.transition_table
        assert np.max(np.abs(p.sum(axis=2) - 1.0)) <= 1e-12


def test_chain_deterministic_advance():
    env = ChainWorld(n_states=4, p_advance=1.0, reward_table=np.zeros((4, 2)))
    rng = np.random.default_rng(0)
    for k in range(3):
        nxt, _, terminal = env.step(np.array([float(k)]), np.array([1.0]), rng)
        assert nxt[0] == k + 1
        assert not terminal


def test_chain_absorbing_and_terminal():
    rewards = np.ones((3, 2))
    env = ChainWorld(n_states=3, p_advance=1.0, reward_table=rewards,
                     absorbing_states=frozenset({2}), terminal_states=frozenset({2}))
    rng = np.random.default_rng(0)
    nxt, r, terminal = env.step(np.array([1.0]), np.array([1.0]), rng)
    assert nxt[0] == 2 and r == 1.0 and terminal
    # stepping from a terminal state yields nothing
    nxt, r, terminal = env.step(np.array([2.0]), np.array([0.0]), rng)
    assert nxt[0] == 2 and r == 0.0 and terminal


def test_chain_rejects_bad_inputs():
    env = make_env("chain")
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        env.step(np.array([0.0, 1.0]), np.array([1.0]), rng)
    with pytest.raises(ValueError):
        env.step(np.array([0.0]), np.array([3.0]), rng)
    with pytest.raises(ValueError):
        env.step(np.array([99.0]), np.array([1.0]), rng)


# ---------------------------------------------------------------------------
# PointMaze

def bare_maze(**kw):
    defaults = dict(width=6.0, height=6.0, walls=(),
                    goal_region=Rect(4.5, 4.5, 5.5, 5.5),
                    start_region=Rect(0.5, 0.5, 1.5, 1.5),
                    damping=0.1, noise_std=0.0, dt=0.5, action_bound=1.0)
    defaults.update(kw)
    return PointMaze(**defaults)


def test_maze_rest_state_stays_put():
    env = bare_maze()
    rng = np.random.default_rng(0)
    s = np.array([2.0, 3.0, 0.0, 0.0])
    nxt, r, terminal = env.step(s, np.zeros(2), rng)
    assert np.array_equal(nxt, s)
    assert r == 0.0 and not terminal
    # same but resting inside the goal region pays unit reward
    s_goal = np.array([5.0, 5.0, 0.0, 0.0])
    _, r, _ = env.step(s_goal, np.zeros(2), rng)
    assert r == 1.0


def test_maze_noise_free_determinism_is_bitwise():
    env = make_env("point-umaze")
    env = PointMaze(**{**env.__dict__, "noise_std": 0.0})
    s = np.array([1.3, 2.2, 0.4, -0.2])
    a = np.array([0.5, -0.3])
    outs = [env.step(s, a, np.random.default_rng(0)) for _ in range(3)]
    for nxt, r, term in outs[1:]:
        assert np.array_equal(nxt, outs[0][0]) and r == outs[0][1]


def test_maze_hand_computed_collision_trajectory():
    # Wall face at x=2; dt=0.5, damping=0.1, no noise. The documented rule:
    # project the crossing component onto the face and zero that velocity.
    env = bare_maze(walls=(Rect(2.0, 1.0, 3.0, 5.0),))
    rng = np.random.default_rng(0)
    s = np.array([1.0, 2.0, 2.0, 0.0])
    expected = [
        (1.9, 2.0, 1.8, 0.0),   # free flight: v = 0.9 * 2.0, p = 1.0 + 0.5 * 1.8
        (2.0, 2.0, 0.0, 0.0),   # 1.9 + 0.5 * 1.62 = 2.71 -> inside; project, kill vx
        (2.0, 2.0, 0.0, 0.0),   # at rest on the face
    ]
    for exp in expected:
        s, r, _ = env.step(s, np.zeros(2), rng)
        assert np.allclose(s, exp, atol=1e-12)
        assert r == 0.0


def test_maze_outer_bounds_clamp():
    env = bare_maze()
    rng = np.random.default_rng(0)
    s = np.array([0.2, 3.0, -2.0, 0.0])
    nxt, _, _ = env.step(s, np.zeros(2), rng)
    assert nxt[0] == 0.0 and nxt[2] == 0.0  # clamped at the left edge, vx zeroed


def test_no_state_strictly_inside_walls():
    for env_id in ("point-umaze", "point-medium"):
        env = make_env(env_id)
        pol = random_policy(env)
        for seed in range(3):
            rng = np.random.default_rng(seed)
            s = env.reset(rng)
            for t in range(400):
                s, _, _ = env.step(s, pol.decide(s, t, rng), rng)
                for wall in env.walls:
                    assert not wall.strictly_inside(s[0], s[1])


def test_step_batch_matches_single_semantics():
    env = make_env("point-medium")
    states = np.array([[1.0, 1.0, 0.5, 0.2], [4.0, 3.0, -0.4, 0.6]])
    actions = np.array([[0.3, 0.3], [-0.2, 0.9]])
    batch_next, batch_r, batch_t = env.step_batch(states, actions, np.random.default_rng(5))
    env0 = PointMaze(**{**env.__dict__, "noise_std": 0.0})
    for i in range(2):
        nxt, r, term = env0.step(states[i], actions[i], np.random.default_rng(0))
        nb, rb, tb = env0.step_batch(states[i:i + 1], actions[i:i + 1], np.random.default_rng(0))
        assert np.array_equal(nxt, nb[0]) and r == rb[0] and term == tb[0]
    assert batch_next.shape == (2, 4) and batch_r.shape == (2,) and not batch_t.any()


def test_layout_invariants():
    for env_id in ("point-open", "point-umaze", "point-medium"):
        env = make_env(env_id)
        assert env.obs_dim == 4 and env.act_dim == 2
        # start/goal clear of walls is enforced at construction
        with pytest.raises(ValueError):
            PointMaze(**{**env.__dict__,
                         "walls": (Rect(env.goal_region.x0 - 0.1, env.goal_region.y0 - 0.1,
                                        env.goal_region.x1, env.goal_region.y1),)})


def test_termination_rules():
    assert termination_for(make_env("point-open")) is None
    assert termination_for(make_env("chain")) is None  # absorbing goal, no terminal flag
    env = ChainWorld(n_states=3, p_advance=1.0, reward_table=np.zeros((3, 2)),
                     absorbing_states=frozenset({2}), terminal_states=frozenset({2}))
    fn = termination_for(env)
    assert fn is not None
    flags = fn(np.array([[0.1], [1.9], [2.2]]))
    assert list(flags) == [False, True, True]


# ---------------------------------------------------------------------------
# initial-state harvesting

def test_single_deterministic_generator_returns_start_state():
    env = bare_maze()
    pol = Policy(decide=lambda s, t, rng: np.zeros(2), id="rest")
    states = sample_initial_states(env, [pol], n=1, seed=4)
    assert len(states) == 1
    expected = env.reset(np.random.default_rng(4))
    assert np.array_equal(states[0], expected)


def test_chain_states_stay_in_range():
    env = make_env("chain")
    states = sample_initial_states(env, [random_policy(env)], n=100, seed=0)
    idx = np.array([s[0] for s in states])
    assert ((idx >= 0) & (idx < env.n_states)).all()
    assert len(states) == 100


def test_mixture_of_generators_widens_coverage():
    env = make_env("point-open")
    corners = [Rect(0.2, 4.5, 1.0, 5.5).center, Rect(4.5, 0.2, 5.5, 1.0).center,
               Rect(4.5, 4.5, 5.5, 5.5).center]

    def seeker(target):
        def decide(s, t, rng):
            return np.clip(target - s[:2] - 0.8 * s[2:], -1, 1)
        return Policy(decide=decide, id=f"to{target[0]:.0f}{target[1]:.0f}")

    generators = [seeker(c) for c in corners]
    wins = 0
    for seed in range(5):
        pooled = np.array(sample_initial_states(env, generators, 500, seed))
        pooled_area = np.prod(pooled[:, :2].max(axis=0) - pooled[:, :2].min(axis=0))
        single_areas = []
        for g in generators:
            solo = np.array(sample_initial_states(env, [g], 500, seed))
            single_areas.append(np.prod(solo[:, :2].max(axis=0) - solo[:, :2].min(axis=0)))
        if pooled_area > max(single_areas):
            wins += 1
    assert wins >= 4


def test_sample_initial_states_validation():
    env = make_env("chain")
    with pytest.raises(ValueError):
        sample_initial_states(env, [], n=5, seed=0)
    with pytest.raises(ValueError):
        sample_initial_states(env, [random_policy(env)], n=0, seed=0)
