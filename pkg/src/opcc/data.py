"""Offline transition datasets: collection, statistics, bootstrap, persistence.

Datasets are immutable column arrays of (s, a, s', r, terminal) tuples. The
file format is line-oriented decimal text - a JSON header line followed by
one whitespace-separated record per transition - chosen so files diff cleanly
and round-trip bitwise (floats are written with ``repr``, which Python
guarantees to parse back exactly).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .mdp import Policy

__all__ = [
    "Transition",
    "Dataset",
    "DatasetStats",
    "collect_dataset",
    "compute_stats",
    "bootstrap_resample",
    "save_dataset",
    "load_dataset",
]

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: float
    terminal: bool


class Dataset:
    """Immutable set of offline transitions with uniform dimensions."""

    def __init__(self, obs: np.ndarray, act: np.ndarray, next_obs: np.ndarray,
                 rew: np.ndarray, term: np.ndarray, name: str = "unnamed",
                 env_id: str = "", seed: int = 0):
        obs = np.asarray(obs, dtype=float)
        act = np.asarray(act, dtype=float)
        next_obs = np.asarray(next_obs, dtype=float)
        rew = np.asarray(rew, dtype=float)
        term = np.asarray(term, dtype=bool)
        n = len(obs)
        if n == 0:
            raise ValueError("dataset must be nonempty")
        if not (len(act) == len(next_obs) == len(rew) == len(term) == n):
            raise ValueError("dataset columns have mismatched lengths")
        if obs.shape != next_obs.shape:
            raise ValueError("obs and next_obs have mismatched shapes")
        self.obs = obs
        self.act = act
        self.next_obs = next_obs
        self.rew = rew
        self.term = term
        self.name = name
        self.env_id = env_id
        self.seed = seed
        for arr in (self.obs, self.act, self.next_obs, self.rew, self.term):
            arr.setflags(write=False)

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[1]

    @property
    def act_dim(self) -> int:
        return self.act.shape[1]

    def __len__(self) -> int:
        return len(self.obs)

    def __getitem__(self, i: int) -> Transition:
        return Transition(self.obs[i], self.act[i], self.next_obs[i],
                          float(self.rew[i]), bool(self.term[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


@dataclass(frozen=True)
class DatasetStats:
    """Empirical bounds and moments used for clipping and normalization.

    ``obs_min``/``obs_max`` bound the observations seen anywhere in the data
    (current and next states alike, since model predictions are clipped to
    what the data covers). Standard deviations are floored at 1e-6.
    """

    obs_min: np.ndarray
    obs_max: np.ndarray
    rew_min: float
    rew_max: float
    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_mean: np.ndarray
    act_std: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray


def compute_stats(dataset: Dataset) -> DatasetStats:
    """Exact empirical min/max/mean/std over the dataset columns."""
    both = np.concatenate([dataset.obs, dataset.next_obs], axis=0)
    delta = dataset.next_obs - dataset.obs
    return DatasetStats(
        obs_min=both.min(axis=0),
        obs_max=both.max(axis=0),
        rew_min=float(dataset.rew.min()),
        rew_max=float(dataset.rew.max()),
        obs_mean=dataset.obs.mean(axis=0),
        obs_std=np.maximum(dataset.obs.std(axis=0), STD_FLOOR),
        act_mean=dataset.act.mean(axis=0),
        act_std=np.maximum(dataset.act.std(axis=0), STD_FLOOR),
        delta_mean=delta.mean(axis=0),
        delta_std=np.maximum(delta.std(axis=0), STD_FLOOR),
    )


def collect_dataset(env, behavior_policies: Sequence[Policy], n_transitions: int,
                    seed: int, name: str = "mixed") -> Dataset:
    """Record ``n_transitions`` transitions from episodic rollouts.

    Episodes rotate round-robin through the behavior policies; episode k
    draws its randomness from a generator seeded with ``seed + k``, so the
    result is reproducible. The final episode may be truncated.
    """
    if n_transitions < 1:
        raise ValueError("n_transitions must be >= 1")
    if not behavior_policies:
        raise ValueError("need at least one behavior policy")
    obs, act, next_obs, rew, term = [], [], [], [], []
    episode = 0
    while len(obs) < n_transitions:
        policy = behavior_policies[episode % len(behavior_policies)]
        rng = np.random.default_rng(seed + episode)
        s = env.reset(rng)
        for t in range(env.max_steps):
            if len(obs) >= n_transitions:
                break
            a = policy.decide(s, t, rng)
            s_next, r, terminal = env.step(s, a, rng)
            obs.append(s)
            act.append(np.asarray(a, dtype=float))
            next_obs.append(s_next)
            rew.append(r)
            term.append(terminal)
            s = s_next
            if terminal:
                break
        episode += 1
    return Dataset(np.array(obs), np.array(act), np.array(next_obs),
                   np.array(rew), np.array(term), name=name,
                   env_id=getattr(env, "id", ""), seed=seed)


def bootstrap_resample(dataset: Dataset, seed: int) -> Dataset:
    """Resample |D| transitions i.i.d. with replacement; deterministic given seed."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(dataset), size=len(dataset))
    return Dataset(dataset.obs[idx], dataset.act[idx], dataset.next_obs[idx],
                   dataset.rew[idx], dataset.term[idx], name=dataset.name,
                   env_id=dataset.env_id, seed=seed)


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    header = {
        "format": "opcc-dataset", "version": 1,
        "env_id": dataset.env_id, "name": dataset.name,
        "obs_dim": dataset.obs_dim, "act_dim": dataset.act_dim,
        "seed": dataset.seed, "n": len(dataset),
    }
    lines = [json.dumps(header)]
    for i in range(len(dataset)):
        lines.append(" ".join([
            _floats(dataset.obs[i]), _floats(dataset.act[i]),
            _floats(dataset.next_obs[i]), repr(float(dataset.rew[i])),
            str(int(dataset.term[i])),
        ]))
    path.write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "opcc-dataset":
            raise ValueError(f"{path} is not a dataset file")
        d_s, d_a, n = header["obs_dim"], header["act_dim"], header["n"]
        obs = np.empty((n, d_s))
        act = np.empty((n, d_a))
        next_obs = np.empty((n, d_s))
        rew = np.empty(n)
        term = np.empty(n, dtype=bool)
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != 2 * d_s + d_a + 2:
                raise ValueError(f"{path}: malformed record on line {i + 2}")
            obs[i] = [float(v) for v in parts[:d_s]]
            act[i] = [float(v) for v in parts[d_s:d_s + d_a]]
            next_obs[i] = [float(v) for v in parts[d_s + d_a:2 * d_s + d_a]]
            rew[i] = float(parts[2 * d_s + d_a])
            term[i] = bool(int(parts[2 * d_s + d_a + 1]))
    return Dataset(obs, act, next_obs, rew, term, name=header["name"],
                   env_id=header["env_id"], seed=header["seed"])
