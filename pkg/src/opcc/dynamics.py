"""Learned dynamics/reward models, bootstrap ensembles, and model rollouts.

Three base models share one interface:

* ``deterministic-ff`` - a point predictor of (state delta, reward) trained
  with mean squared error.
* ``gaussian-ff`` - mean and diagonal log-variance heads over (delta, reward)
  trained with Gaussian negative log-likelihood; sampling draws every
  dimension in one pass.
* ``autoregressive`` - a Gaussian head over one feature at a time; feature i
  of the delta is sampled conditioned on (s, a) and the features sampled
  before it, taking n forward passes for an n-dimensional state plus a final
  pass for the reward.

Every member owns a frozen randomly-initialized prior network of the same
architecture whose output, scaled by ``prior_scale``, is added to the mean
head only. Members predict state deltas; predicted next observations and
rewards are clipped per step to the dataset bounds.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import Dataset, DatasetStats, bootstrap_resample, compute_stats
from .mdp import Policy
from .nets import MLP, Adam, gaussian_nll_loss, mse_loss, soft_clamp

__all__ = [
    "KINDS",
    "BaseModelConfig",
    "EnsembleMember",
    "Ensemble",
    "TrainingDivergedError",
    "train_member",
    "train_ensemble",
    "predict_next",
    "predict_next_batch",
    "rollout_value",
    "rollout_values_batch",
    "member_loss",
    "save_ensemble",
    "load_ensemble",
]

KINDS = ("deterministic-ff", "gaussian-ff", "autoregressive")


class TrainingDivergedError(RuntimeError):
    """Raised when a member's training loss stops being finite."""


@dataclass(frozen=True)
class BaseModelConfig:
    kind: str = "deterministic-ff"
    hidden_sizes: tuple[int, ...] = (64, 64)
    normalize: bool = True
    prior_scale: float = 0.0
    logvar_clamp: tuple[float, float] = (-10.0, 0.5)
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    holdout_frac: float = 0.1
    patience: int = 5

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.hidden_sizes:
            raise ValueError("hidden_sizes must be nonempty")
        lo, hi = self.logvar_clamp
        if not lo < hi:
            raise ValueError("logvar_clamp must satisfy lo < hi")
        if self.prior_scale < 0:
            raise ValueError("prior_scale must be >= 0 (0 disables the prior)")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("bad training schedule")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "logvar_clamp", (float(lo), float(hi)))


def _layer_sizes(config: BaseModelConfig, obs_dim: int, act_dim: int) -> list[int]:
    hidden = list(config.hidden_sizes)
    if config.kind == "deterministic-ff":
        return [obs_dim + act_dim, *hidden, obs_dim + 1]
    if config.kind == "gaussian-ff":
        return [obs_dim + act_dim, *hidden, 2 * (obs_dim + 1)]
    # autoregressive: input carries the sampled-delta prefix and a one-hot
    # feature index (obs_dim delta features, then the reward feature).
    return [obs_dim + act_dim + obs_dim + (obs_dim + 1), *hidden, 2]


class EnsembleMember:
    """One trained base model plus its frozen prior and dataset statistics."""

    def __init__(self, net: MLP, prior: MLP, stats: DatasetStats,
                 config: BaseModelConfig, obs_dim: int, act_dim: int):
        self.net = net
        self.prior = prior
        self.stats = stats
        self.config = config
        self.obs_dim = obs_dim
        self.act_dim = act_dim

    def norm_inputs(self, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        if self.config.normalize:
            obs = (obs - self.stats.obs_mean) / self.stats.obs_std
            act = (act - self.stats.act_mean) / self.stats.act_std
        return np.concatenate([obs, act], axis=1)

    def norm_delta(self, delta: np.ndarray) -> np.ndarray:
        if self.config.normalize:
            return (delta - self.stats.delta_mean) / self.stats.delta_std
        return delta

    def denorm_delta(self, delta_n: np.ndarray) -> np.ndarray:
        if self.config.normalize:
            return delta_n * self.stats.delta_std + self.stats.delta_mean
        return delta_n

    def mean_with_prior(self, x: np.ndarray) -> np.ndarray:
        """Composed raw output: trainable mean head plus the scaled prior's."""
        out = self.net.forward(x)
        if self.config.prior_scale > 0:
            prior_out = self.prior.forward(x)
            d = _mean_width(self.config, self.obs_dim)
            out = out.copy()
            out[:, :d] += self.config.prior_scale * prior_out[:, :d]
        return out


def _mean_width(config: BaseModelConfig, obs_dim: int) -> int:
    if config.kind == "deterministic-ff":
        return obs_dim + 1
    if config.kind == "gaussian-ff":
        return obs_dim + 1
    return 1


@dataclass(frozen=True)
class Ensemble:
    """M independently trained members sharing a termination rule."""

    members: tuple[EnsembleMember, ...]
    termination_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    env_id: str = ""

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("ensemble needs at least one member")

    def __len__(self) -> int:
        return len(self.members)

    def prefix(self, k: int) -> "Ensemble":
        """First k members (used by the ensemble-size ablation)."""
        if not 1 <= k <= len(self.members):
            raise ValueError(f"prefix size {k} outside [1, {len(self.members)}]")
        return Ensemble(self.members[:k], self.termination_fn, self.env_id)


# ---------------------------------------------------------------------------
# training

def _ff_design(member: EnsembleMember, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    x = member.norm_inputs(dataset.obs, dataset.act)
    delta_n = member.norm_delta(dataset.next_obs - dataset.obs)
    t = np.concatenate([delta_n, dataset.rew[:, None]], axis=1)
    return x, t


def _ar_design(member: EnsembleMember, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced rows: one per (transition, feature)."""
    d_s = member.obs_dim
    base = member.norm_inputs(dataset.obs, dataset.act)
    delta_n = member.norm_delta(dataset.next_obs - dataset.obs)
    n = len(dataset)
    n_feat = d_s + 1
    rows = np.zeros((n * n_feat, base.shape[1] + d_s + n_feat))
    targets = np.zeros((n * n_feat, 1))
    for i in range(n_feat):
        block = slice(i * n, (i + 1) * n)
        rows[block, :base.shape[1]] = base
        if i > 0:
            rows[block, base.shape[1]:base.shape[1] + i] = delta_n[:, :i]
        rows[block, base.shape[1] + d_s + i] = 1.0
        targets[block, 0] = delta_n[:, i] if i < d_s else dataset.rew
    return rows, targets


def _batch_loss_grad(member: EnsembleMember, x: np.ndarray, t: np.ndarray):
    out, cache = member.net.forward(x, want_cache=True)
    if member.config.prior_scale > 0:
        prior_out = member.prior.forward(x)
        d = _mean_width(member.config, member.obs_dim)
        out = out.copy()
        out[:, :d] += member.config.prior_scale * prior_out[:, :d]
    if member.config.kind == "deterministic-ff":
        loss, d_out = mse_loss(out, t)
    else:
        loss, d_out = gaussian_nll_loss(out, t, member.config.logvar_clamp)
    return loss, d_out, cache


def _dataset_loss(member: EnsembleMember, x: np.ndarray, t: np.ndarray) -> float:
    loss, _, _ = _batch_loss_grad(member, x, t)
    return loss


def member_loss(member: EnsembleMember, dataset: Dataset) -> float:
    """The member's training objective evaluated on ``dataset``."""
    design = _ar_design if member.config.kind == "autoregressive" else _ff_design
    x, t = design(member, dataset)
    return _dataset_loss(member, x, t)


def train_member(dataset: Dataset, config: BaseModelConfig) -> EnsembleMember:
    """Fit one base model on a bootstrap resample of ``dataset``.

    The resample, weight initialization (trainable and prior), batch order,
    and 10% validation holdout all derive from ``config.seed``, so training
    is bitwise reproducible. Training runs minibatch Adam for ``epochs``
    passes with early stopping on the holdout loss (patience in epochs); the
    parameters with the best holdout loss are kept. ``epochs=0`` returns the
    untouched initialization.
    """
    stats = compute_stats(dataset)
    rng = np.random.default_rng(config.seed)
    sizes = _layer_sizes(config, dataset.obs_dim, dataset.act_dim)
    net = MLP(sizes, rng)
    prior = MLP(sizes, rng)
    member = EnsembleMember(net, prior, stats, config, dataset.obs_dim, dataset.act_dim)
    if config.epochs == 0:
        return member

    boot = bootstrap_resample(dataset, config.seed)
    n = len(boot)
    n_val = int(round(config.holdout_frac * n))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        train_idx, val_idx = perm, perm[:0]

    design = _ar_design if config.kind == "autoregressive" else _ff_design
    x_all, t_all = design(member, boot)
    if config.kind == "autoregressive":
        # Rows are grouped per feature; expand the transition split to rows.
        n_feat = dataset.obs_dim + 1
        expand = lambda idx: np.concatenate([idx + k * n for k in range(n_feat)])
        train_rows, val_rows = expand(train_idx), expand(val_idx)
    else:
        train_rows, val_rows = train_idx, val_idx
    x_train, t_train = x_all[train_rows], t_all[train_rows]
    x_val, t_val = x_all[val_rows], t_all[val_rows]

    opt = Adam(net, lr=config.learning_rate)
    best_val = math.inf
    best_params = None
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            rows = order[start:start + config.batch_size]
            loss, d_out, cache = _batch_loss_grad(member, x_train[rows], t_train[rows])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss in epoch {epoch}")
            grads_w, grads_b = net.backward(cache, d_out)
            opt.step(grads_w, grads_b)
            epoch_loss += loss * len(rows)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(f"non-finite loss in epoch {epoch}")
        if len(x_val):
            val_loss = _dataset_loss(member, x_val, t_val)
            if not math.isfinite(val_loss):
                raise TrainingDivergedError(f"non-finite holdout loss in epoch {epoch}")
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_params = net.copy_params()
                stale = 0
            else:
                stale += 1
                if stale > config.patience:
                    break
    if best_params is not None:
        net.set_params(best_params)
    return member


def train_ensemble(dataset: Dataset, config: BaseModelConfig, m: int,
                   termination_fn: Optional[Callable] = None,
                   env_id: str | None = None) -> Ensemble:
    """Train M members; member i uses seed ``config.seed + i``.

    Distinct seeds give each member its own bootstrap resample, weight
    initialization, and frozen prior.
    """
    if m < 1:
        raise ValueError("ensemble size must be >= 1")
    members = []
    for i in range(m):
        member_config = dataclasses.replace(config, seed=config.seed + i)
        try:
            members.append(train_member(dataset, member_config))
        except Exception as exc:
            raise TrainingDivergedError(f"member {i} failed to train: {exc}") from exc
    return Ensemble(tuple(members), termination_fn,
                    env_id if env_id is not None else dataset.env_id)


# ---------------------------------------------------------------------------
# prediction and rollouts

def predict_next_batch(member: EnsembleMember, obs: np.ndarray, act: np.ndarray,
                       mode: str, rng: Optional[np.random.Generator]) -> tuple[np.ndarray, np.ndarray]:
    """One model step for a [B, obs_dim] block; returns (next_obs, rewards).

    ``mode`` is "sample" or "mean"; deterministic models ignore it. The
    predicted delta is added to the current observation and the result - and
    the reward - are clipped componentwise to the dataset bounds.
    """
    if mode not in ("sample", "mean"):
        raise ValueError(f"mode must be 'sample' or 'mean', got {mode!r}")
    obs = np.asarray(obs, dtype=float)
    act = np.asarray(act, dtype=float)
    if obs.shape[1] != member.obs_dim or act.shape[1] != member.act_dim:
        raise ValueError(f"expected dims ({member.obs_dim}, {member.act_dim}), "
                         f"got ({obs.shape[1]}, {act.shape[1]})")
    x = member.norm_inputs(obs, act)
    d_s = member.obs_dim
    kind = member.config.kind

    if kind == "deterministic-ff":
        out = member.mean_with_prior(x)
        delta_n, rew = out[:, :d_s], out[:, d_s]
    elif kind == "gaussian-ff":
        out = member.mean_with_prior(x)
        d = d_s + 1
        mean, logvar = out[:, :d], soft_clamp(out[:, d:], *member.config.logvar_clamp)
        if mode == "sample":
            feat = mean + np.exp(0.5 * logvar) * rng.standard_normal(mean.shape)
        else:
            feat = mean
        delta_n, rew = feat[:, :d_s], feat[:, d_s]
    else:  # autoregressive
        n_feat = d_s + 1
        b = len(x)
        prefix = np.zeros((b, d_s))
        onehot = np.zeros((b, n_feat))
        rew = None
        for i in range(n_feat):
            onehot[:] = 0.0
            onehot[:, i] = 1.0
            out = member.mean_with_prior(np.concatenate([x, prefix, onehot], axis=1))
            mean = out[:, 0]
            logvar = soft_clamp(out[:, 1], *member.config.logvar_clamp)
            if mode == "sample":
                feat = mean + np.exp(0.5 * logvar) * rng.standard_normal(b)
            else:
                feat = mean
            if i < d_s:
                prefix[:, i] = feat
            else:
                rew = feat
        delta_n = prefix

    next_obs = obs + member.denorm_delta(np.atleast_2d(delta_n))
    next_obs = np.clip(next_obs, member.stats.obs_min, member.stats.obs_max)
    rewards = np.clip(rew, member.stats.rew_min, member.stats.rew_max)
    return next_obs, rewards


def predict_next(member: EnsembleMember, s: np.ndarray, a: np.ndarray, mode: str,
                 rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, float]:
    """Single-transition convenience wrapper around :func:`predict_next_batch`."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    next_obs, rewards = predict_next_batch(member, s[None, :], a[None, :], mode, rng)
    return next_obs[0], float(rewards[0])


def rollout_value(member: EnsembleMember, policy: Policy, s0: np.ndarray, h: int,
                  gamma: float, mode: str, rng: Optional[np.random.Generator],
                  termination_fn: Optional[Callable] = None) -> float:
    """Discounted return of one h-step rollout through the learned model.

    Accumulation stops once ``termination_fn`` fires on the predicted state
    (the arrival step's reward still counts).
    """
    if h < 1:
        raise ValueError("horizon must be >= 1")
    s = np.asarray(s0, dtype=float)
    total = 0.0
    discount = 1.0
    for t in range(h):
        a = policy.decide(s, t, rng)
        s, r = predict_next(member, s, np.asarray(a, dtype=float), mode, rng)
        total += discount * r
        if termination_fn is not None and bool(termination_fn(s[None, :])[0]):
            break
        discount *= gamma
    return total


def rollout_values_batch(member: EnsembleMember, policy: Policy, s0: np.ndarray,
                         h: int, gamma: float, mode: str, rng: np.random.Generator,
                         n_rollouts: int,
                         termination_fn: Optional[Callable] = None) -> np.ndarray:
    """``n_rollouts`` model rollouts advanced in lockstep; returns their returns."""
    if h < 1 or n_rollouts < 1:
        raise ValueError("horizon and n_rollouts must be >= 1")
    states = np.repeat(np.asarray(s0, dtype=float)[None, :], n_rollouts, axis=0)
    returns = np.zeros(n_rollouts)
    alive = np.ones(n_rollouts, dtype=bool)
    discount = 1.0
    for t in range(h):
        if policy.decide_batch is not None:
            actions = policy.decide_batch(states, t, rng)
        else:
            actions = np.stack([policy.decide(states[i], t, rng) for i in range(n_rollouts)])
        states, rewards = predict_next_batch(member, states, np.asarray(actions, dtype=float), mode, rng)
        returns += discount * rewards * alive
        if termination_fn is not None:
            alive &= ~np.asarray(termination_fn(states), dtype=bool)
            if not alive.any():
                break
        discount *= gamma
    return returns


# ---------------------------------------------------------------------------
# persistence

def _write_array(name: str, arr) -> str:
    flat = np.asarray(arr, dtype=float).ravel()
    return name + " " + " ".join(repr(float(v)) for v in flat)


def save_ensemble(ensemble: Ensemble, path) -> None:
    """Checkpoint: JSON header, shared statistics, then flat member parameters."""
    member = ensemble.members[0]
    config = member.config
    header = {
        "format": "opcc-ensemble", "version": 1,
        "env_id": ensemble.env_id,
        "obs_dim": member.obs_dim, "act_dim": member.act_dim,
        "members": len(ensemble),
        "config": dataclasses.asdict(config),
    }
    stats = member.stats
    lines = [json.dumps(header)]
    for name in ("obs_min", "obs_max", "obs_mean", "obs_std", "act_mean",
                 "act_std", "delta_mean", "delta_std"):
        lines.append(_write_array(name, getattr(stats, name)))
    lines.append(_write_array("rew_bounds", [stats.rew_min, stats.rew_max]))
    for i, m in enumerate(ensemble.members):
        lines.append(_write_array(f"member {i} seed {m.config.seed} net", m.net.get_flat()))
        lines.append(_write_array(f"member {i} seed {m.config.seed} prior", m.prior.get_flat()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_ensemble(path, termination_fn: Optional[Callable] = None) -> Ensemble:
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "opcc-ensemble":
            raise ValueError(f"{path} is not an ensemble checkpoint")
        cfg = dict(header["config"])
        cfg["hidden_sizes"] = tuple(cfg["hidden_sizes"])
        cfg["logvar_clamp"] = tuple(cfg["logvar_clamp"])
        base_config = BaseModelConfig(**cfg)
        obs_dim, act_dim = header["obs_dim"], header["act_dim"]

        arrays = {}
        for _ in range(9):
            parts = fh.readline().split()
            arrays[parts[0]] = np.array([float(v) for v in parts[1:]])
        stats = DatasetStats(
            obs_min=arrays["obs_min"], obs_max=arrays["obs_max"],
            rew_min=float(arrays["rew_bounds"][0]), rew_max=float(arrays["rew_bounds"][1]),
            obs_mean=arrays["obs_mean"], obs_std=arrays["obs_std"],
            act_mean=arrays["act_mean"], act_std=arrays["act_std"],
            delta_mean=arrays["delta_mean"], delta_std=arrays["delta_std"],
        )

        members = []
        rng = np.random.default_rng(0)
        for i in range(header["members"]):
            net_parts = fh.readline().split()
            prior_parts = fh.readline().split()
            if net_parts[:2] != ["member", str(i)] or net_parts[4] != "net":
                raise ValueError(f"{path}: malformed member record {i}")
            config = dataclasses.replace(base_config, seed=int(net_parts[3]))
            sizes = _layer_sizes(config, obs_dim, act_dim)
            net, prior = MLP(sizes, rng), MLP(sizes, rng)
            net.set_flat(np.array([float(v) for v in net_parts[5:]]))
            prior.set_flat(np.array([float(v) for v in prior_parts[5:]]))
            members.append(EnsembleMember(net, prior, stats, config, obs_dim, act_dim))
    return Ensemble(tuple(members), termination_fn, header["env_id"])
