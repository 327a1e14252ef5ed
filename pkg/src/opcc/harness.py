"""Experiment orchestration: configs, the end-to-end pipeline, ablation
sweeps, seed aggregation, and report generation.

A sweep varies one factor at a time around a base configuration (ensemble
size, prior scale, model kind, deterministic vs stochastic, normalization,
query horizon) and repeats everything over a list of seeds. Ensemble-size
cells reuse nested member prefixes of one ensemble trained at the largest
requested size instead of retraining. Per-seed metric rows land in a CSV;
cells are aggregated across seeds as mean and t-based 95% confidence
intervals.

Seed hygiene: each pipeline stage offsets the run seed by a fixed stride
(data +10000, initial states +20000, queries +30000, models +40000,
evaluation +60000) so no two stages share a random stream.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .confidence import METHODS, ValuePairs, answer_from_pairs
from .data import Dataset, collect_dataset
from .dynamics import BaseModelConfig, Ensemble, rollout_values_batch, train_ensemble
from .envs import make_env, random_policy, sample_initial_states, termination_for
from .mdp import Policy
from .metrics import aurcc, build_rcc, coverage_resolution, evaluate_answers, rpp
from .queries import (QuerySet, generate_candidates, label_filter_select,
                      make_policy_family)
from .tdist import t_ppf

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "build_behavior_dataset",
    "build_query_set",
    "estimate_all_pairs",
    "metric_row",
    "run_sweep",
    "aggregate_rows",
    "write_csv",
    "read_csv",
    "render_report",
    "METRIC_COLUMNS",
]

DATA_STRIDE, STATES_STRIDE, QUERY_STRIDE, MODEL_STRIDE, EVAL_STRIDE = (
    10_000, 20_000, 30_000, 40_000, 60_000)

METRIC_COLUMNS = ("env", "dataset_name", "horizon", "method", "ensemble_count",
                  "prior_scale", "dynamics_kind", "deterministic", "normalize",
                  "seed", "aurcc", "rpp", "cr_k", "loss_full_coverage")
_KEY_COLUMNS = METRIC_COLUMNS[:9]
_VALUE_COLUMNS = METRIC_COLUMNS[10:]

BEHAVIORS = ("random", "medium", "expert", "mixed", "replay")


@dataclass(frozen=True)
class ExperimentConfig:
    env_id: str = "chain-default"
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    gamma: float = 0.99
    # dataset
    behavior: str = "mixed"
    data_size: int = 4000
    # queries
    horizons: tuple[int, ...] = (10, 20)
    per_horizon: int = 200
    select: int = 150
    gap_frac: float = 0.1
    gap_abs: Optional[float] = None
    n_rollouts: int = 2000
    initial_states: int = 300
    n_policies: int = 4
    # model
    kind: str = "deterministic-ff"
    hidden: tuple[int, ...] = (64, 64)
    normalize: bool = True
    prior_scale: float = 0.0
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    members: int = 20
    # evaluation
    methods: tuple[str, ...] = ("ev", "pci", "u-pci")
    rollouts_per_member: int = 10
    mode: str = "sample"
    cr_k: int = 10
    # sweep axes (empty tuple = axis not swept)
    sweep_ensemble_count: tuple[int, ...] = ()
    sweep_prior_scale: tuple[float, ...] = ()
    sweep_kind: tuple[str, ...] = ()
    sweep_deterministic: tuple[bool, ...] = ()
    sweep_normalize: tuple[bool, ...] = ()
    sweep_horizon: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"behavior must be one of {BEHAVIORS}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown confidence method {m!r}")
        bad = [h for h in self.sweep_horizon if h not in self.horizons]
        if bad:
            raise ValueError(f"sweep horizons {bad} not generated by query spec {self.horizons}")

    def base_model_config(self, seed: int) -> BaseModelConfig:
        return BaseModelConfig(kind=self.kind, hidden_sizes=self.hidden,
                               normalize=self.normalize, prior_scale=self.prior_scale,
                               epochs=self.epochs, batch_size=self.batch_size,
                               learning_rate=self.learning_rate, seed=seed)


# ---------------------------------------------------------------------------
# config file: "key = value" lines, '#' comments, lists comma-separated

_INT_TUPLES = {"seeds", "horizons", "hidden", "sweep_ensemble_count", "sweep_horizon"}
_BOOL_TUPLES = {"sweep_deterministic", "sweep_normalize"}
_FLOAT_TUPLES = {"sweep_prior_scale"}
_STR_TUPLES = {"methods", "sweep_kind"}
_KEY_ALIASES = {
    "env": "env_id",
    "data.behavior": "behavior", "data.size": "data_size",
    "query.horizons": "horizons", "query.per_horizon": "per_horizon",
    "query.select": "select", "query.gap_frac": "gap_frac", "query.gap_abs": "gap_abs",
    "query.n_rollouts": "n_rollouts", "query.initial_states": "initial_states",
    "query.n_policies": "n_policies",
    "model.kind": "kind", "model.hidden": "hidden", "model.normalize": "normalize",
    "model.prior_scale": "prior_scale", "model.epochs": "epochs",
    "model.batch_size": "batch_size", "model.learning_rate": "learning_rate",
    "model.members": "members",
    "eval.methods": "methods", "eval.rollouts_per_member": "rollouts_per_member",
    "eval.mode": "mode", "eval.cr_k": "cr_k",
    "sweep.ensemble_count": "sweep_ensemble_count", "sweep.prior_scale": "sweep_prior_scale",
    "sweep.kind": "sweep_kind", "sweep.deterministic": "sweep_deterministic",
    "sweep.normalize": "sweep_normalize", "sweep.horizon": "sweep_horizon",
}


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse the documented key = value experiment-config format."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    version = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "version":
            version = int(val)
            continue
        name = _KEY_ALIASES.get(key, key)
        if name not in fields:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if name in _INT_TUPLES:
            values[name] = tuple(int(v) for v in val.split(",") if v.strip()) if val else ()
        elif name in _FLOAT_TUPLES:
            values[name] = tuple(float(v) for v in val.split(",") if v.strip()) if val else ()
        elif name in _BOOL_TUPLES:
            values[name] = tuple(_parse_bool(v.strip()) for v in val.split(",") if v.strip()) if val else ()
        elif name in _STR_TUPLES:
            values[name] = tuple(v.strip() for v in val.split(",") if v.strip()) if val else ()
        else:
            kind = fields[name].type
            if kind == "int" or name in ("data_size", "per_horizon", "select"):
                values[name] = int(val)
            elif kind == "float":
                values[name] = float(val)
            elif kind == "bool":
                values[name] = _parse_bool(val)
            elif name == "gap_abs":
                values[name] = None if val.lower() in ("none", "") else float(val)
            else:
                values[name] = val
    if version is None:
        raise ValueError("config must carry a 'version = 1' line")
    if version != 1:
        raise ValueError(f"unsupported config version {version}")
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# pipeline stages

def behavior_policies(env, family: Sequence[Policy], behavior: str) -> list[Policy]:
    rand = random_policy(env)
    if behavior == "random":
        return [rand]
    if behavior == "expert":
        return [family[0]]
    if behavior == "medium":
        return [family[len(family) // 2]]
    if behavior == "mixed":
        return [rand, *family]
    if behavior == "replay":
        return list(reversed(family))  # worst to best, used in blocks
    raise ValueError(f"unknown behavior {behavior!r}")


def build_behavior_dataset(env, family: Sequence[Policy], behavior: str,
                           size: int, seed: int) -> Dataset:
    """Offline dataset under the named behavior mix.

    ``replay`` emulates a replay buffer of an improving agent: equal blocks
    of transitions from the worst to the best controller, concatenated in
    that order. Other behaviors rotate episodes round-robin.
    """
    policies = behavior_policies(env, family, behavior)
    if behavior != "replay":
        return collect_dataset(env, policies, size, seed, name=behavior)
    per = [size // len(policies)] * len(policies)
    per[-1] += size - sum(per)
    parts = [collect_dataset(env, [p], n, seed + 1000 * j, name=behavior)
             for j, (p, n) in enumerate(zip(policies, per))]
    return Dataset(np.concatenate([d.obs for d in parts]),
                   np.concatenate([d.act for d in parts]),
                   np.concatenate([d.next_obs for d in parts]),
                   np.concatenate([d.rew for d in parts]),
                   np.concatenate([d.term for d in parts]),
                   name=behavior, env_id=getattr(env, "id", ""), seed=seed)


def build_query_set(env, family: Sequence[Policy], config: ExperimentConfig,
                    seed: int) -> QuerySet:
    generators = [random_policy(env), *family]
    states = sample_initial_states(env, generators, config.initial_states,
                                   seed + STATES_STRIDE)
    candidates = generate_candidates(env, family, states, config.horizons,
                                     config.per_horizon, seed + QUERY_STRIDE)
    policies = {p.id: p for p in family}
    return label_filter_select(env, candidates, policies, config.gamma,
                               config.n_rollouts, config.gap_abs, config.select,
                               seed + QUERY_STRIDE, gap_frac=config.gap_frac)


def estimate_all_pairs(ensemble: Ensemble, query_set: QuerySet,
                       policies: Mapping[str, Policy], gamma: float,
                       n_rollouts_per_member: int, mode: str, seed: int) -> np.ndarray:
    """Value pairs for every query: array [n_queries, M, 2].

    Query j draws member i's rollouts from seed ``seed + j * (M + 1) + i``,
    so queries are independently reproducible (and parallelizable).
    """
    m = len(ensemble)
    out = np.empty((len(query_set), m, 2))
    for j, q in enumerate(query_set.queries):
        base = seed + j * (m + 1)
        pol_a, pol_b = policies[q.policy_a_id], policies[q.policy_b_id]
        for i, member in enumerate(ensemble.members):
            rng = np.random.default_rng(base + i)
            out[j, i, 0] = rollout_values_batch(
                member, pol_a, q.s, q.horizon, gamma, mode, rng,
                n_rollouts_per_member, ensemble.termination_fn).mean()
            out[j, i, 1] = rollout_values_batch(
                member, pol_b, q.s_hat, q.horizon, gamma, mode, rng,
                n_rollouts_per_member, ensemble.termination_fn).mean()
    return out


def metric_row(queries, pairs: np.ndarray, method: str, cr_k: int) -> tuple[dict, object]:
    """Metrics of one cell; returns (column dict, the risk-coverage curve)."""
    answers = [answer_from_pairs(ValuePairs(pairs[j, :, 0], pairs[j, :, 1]), method)
               for j in range(len(queries))]
    answered = evaluate_answers(list(queries), answers)
    curve = build_rcc(answered)
    return {
        "aurcc": aurcc(curve),
        "rpp": rpp(answered),
        "cr_k": coverage_resolution(answered, cr_k),
        "loss_full_coverage": float(curve.risks[-1]),
    }, curve


# ---------------------------------------------------------------------------
# CSV plumbing (decimal text, bitwise reproducible)

def _format_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Sequence[Mapping]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_cell(row[c]) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> list[dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    columns = lines[0].split(",")
    return [dict(zip(columns, line.split(","))) for line in lines[1:] if line]


def write_rcc_csv(path, curve) -> None:
    rows = [{"threshold": float(t), "coverage": float(c), "risk": float(r)}
            for t, (c, r) in zip(curve.thresholds, curve.points)]
    write_csv(path, ("threshold", "coverage", "risk"), rows)


# ---------------------------------------------------------------------------
# the sweep

def _cell_rows(config: ExperimentConfig, query_set: QuerySet, pairs: np.ndarray,
               model_config: BaseModelConfig, m_used: int, horizon, seed: int,
               queries_subset=None, pair_rows=None):
    queries = query_set.queries if queries_subset is None else queries_subset
    sub_pairs = pairs if pair_rows is None else pairs[pair_rows]
    rows = []
    curves = {}
    for method in config.methods:
        metrics, curve = metric_row(queries, sub_pairs[:, :m_used, :], method, config.cr_k)
        row = {
            "env": config.env_id, "dataset_name": config.behavior,
            "horizon": horizon, "method": method, "ensemble_count": m_used,
            "prior_scale": float(model_config.prior_scale),
            "dynamics_kind": model_config.kind,
            "deterministic": model_config.kind == "deterministic-ff",
            "normalize": model_config.normalize, "seed": seed,
        }
        row.update(metrics)
        rows.append(row)
        curves[method] = curve
    return rows, curves


def run_sweep(config: ExperimentConfig, out_dir, progress=None) -> list[dict]:
    """Run the full pipeline and all configured ablation axes for every seed.

    Writes ``metrics.csv`` (per-seed rows), ``aggregate.csv`` (mean and 95%
    CI per cell), ``report.md``, and per-cell RCC point files under ``rcc/``.
    Returns the raw rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rcc_dir = out_dir / "rcc"
    rcc_dir.mkdir(exist_ok=True)
    say = progress if progress is not None else (lambda msg: None)

    rows: list[dict] = []
    for seed in config.seeds:
        env = make_env(config.env_id)
        family = make_policy_family(env, config.n_policies, seed=seed)
        policies = {p.id: p for p in family}
        say(f"seed {seed}: collecting {config.data_size} transitions ({config.behavior})")
        dataset = build_behavior_dataset(env, family, config.behavior,
                                         config.data_size, seed + DATA_STRIDE)
        say(f"seed {seed}: building query set")
        query_set = build_query_set(env, family, config, seed)
        term_fn = termination_for(env)

        # Every distinct model configuration to train, and the ensemble size
        # it must cover. The base configuration also serves the horizon and
        # ensemble-size axes (the latter via nested member prefixes).
        model_seed = seed + MODEL_STRIDE
        base_cfg = config.base_model_config(model_seed)
        base_m = max(config.members, max(config.sweep_ensemble_count, default=0))
        wanted: dict[BaseModelConfig, int] = {base_cfg: base_m}

        def variant(**kw):
            cfg = dataclasses.replace(base_cfg, **kw)
            wanted[cfg] = max(wanted.get(cfg, 0), config.members)

        for kind in config.sweep_kind:
            variant(kind=kind)
        for det in config.sweep_deterministic:
            variant(kind="deterministic-ff" if det else "gaussian-ff")
        for scale in config.sweep_prior_scale:
            variant(prior_scale=scale)
        for norm in config.sweep_normalize:
            variant(normalize=norm)

        ensembles: dict[BaseModelConfig, Ensemble] = {}
        all_pairs: dict[BaseModelConfig, np.ndarray] = {}
        for cfg, m in wanted.items():
            say(f"seed {seed}: training {m} x {cfg.kind} "
                f"(prior {cfg.prior_scale}, normalize {cfg.normalize})")
            ensembles[cfg] = train_ensemble(dataset, cfg, m, term_fn, config.env_id)
            say(f"seed {seed}: estimating value pairs for {len(query_set)} queries")
            all_pairs[cfg] = estimate_all_pairs(ensembles[cfg], query_set, policies,
                                                config.gamma, config.rollouts_per_member,
                                                config.mode, seed + EVAL_STRIDE)

        def emit(model_config, m_used, horizon="all", queries_subset=None, pair_rows=None):
            cell_rows, curves = _cell_rows(config, query_set, all_pairs[model_config],
                                           model_config, m_used, horizon, seed,
                                           queries_subset, pair_rows)
            rows.extend(cell_rows)
            for method, curve in curves.items():
                name = (f"seed{seed}_h{horizon}_{method}_{model_config.kind}"
                        f"_M{m_used}_prior{model_config.prior_scale:g}"
                        f"_norm{int(model_config.normalize)}.csv")
                write_rcc_csv(rcc_dir / name, curve)

        emitted = set()

        def emit_once(model_config, m_used, horizon="all", **kw):
            key = (model_config, m_used, horizon)
            if key in emitted:
                return
            emitted.add(key)
            emit(model_config, m_used, horizon, **kw)

        emit_once(base_cfg, config.members)
        for m in config.sweep_ensemble_count:
            emit_once(base_cfg, m)
        for h in config.sweep_horizon:
            idx = [j for j, q in enumerate(query_set.queries) if q.horizon == h]
            emit_once(base_cfg, config.members, horizon=h,
                      queries_subset=[query_set.queries[j] for j in idx], pair_rows=idx)
        for cfg in wanted:
            if cfg != base_cfg:
                emit_once(cfg, config.members)

    write_csv(out_dir / "metrics.csv", METRIC_COLUMNS, rows)
    agg_columns, agg_rows = aggregate_rows(rows)
    write_csv(out_dir / "aggregate.csv", agg_columns, agg_rows)
    (out_dir / "report.md").write_text(render_report(agg_columns, agg_rows))
    return rows


# ---------------------------------------------------------------------------
# aggregation and report

def aggregate_rows(rows: Sequence[Mapping]) -> tuple[list[str], list[dict]]:
    """Collapse per-seed rows into per-cell mean and 95% CI half-width.

    Cells are the distinct combinations of the non-seed key columns. With a
    single seed the half-width column holds the marker ``na``.
    """
    groups: dict[tuple, list[Mapping]] = {}
    for row in rows:
        key = tuple(row[c] for c in _KEY_COLUMNS)
        groups.setdefault(key, []).append(row)

    columns = list(_KEY_COLUMNS) + ["n_seeds"]
    for metric in _VALUE_COLUMNS:
        columns += [f"{metric}_mean", f"{metric}_ci"]
    out = []
    for key, group in groups.items():
        row = dict(zip(_KEY_COLUMNS, key))
        n = len(group)
        row["n_seeds"] = n
        for metric in _VALUE_COLUMNS:
            vals = np.array([float(g[metric]) for g in group])
            row[f"{metric}_mean"] = float(vals.mean())
            if n < 2:
                row[f"{metric}_ci"] = "na"
            else:
                half = t_ppf(0.975, n - 1) * float(vals.std(ddof=1)) / math.sqrt(n)
                row[f"{metric}_ci"] = float(half)
        out.append(row)
    return columns, out


def render_report(columns: Sequence[str], agg_rows: Sequence[Mapping]) -> str:
    """Markdown table of aggregated metrics (mean +/- 95% CI per cell)."""
    def fmt(mean, ci):
        mean = float(mean)
        if isinstance(ci, str) and ci == "na":
            return f"{mean:.3f}"
        return f"{mean:.3f} +/- {float(ci):.3f}"

    header = ["env", "dataset", "horizon", "method", "M", "prior", "kind",
              "det", "norm", "seeds", "AURCC", "RPP", "CR_K", "loss"]
    lines = ["# Risk-coverage evaluation", "",
             "| " + " | ".join(header) + " |",
             "|" + "---|" * len(header)]
    for row in agg_rows:
        cells = [str(row["env"]), str(row["dataset_name"]), str(row["horizon"]),
                 str(row["method"]), str(row["ensemble_count"]),
                 f"{float(row['prior_scale']):g}", str(row["dynamics_kind"]),
                 _format_cell(row["deterministic"]), _format_cell(row["normalize"]),
                 str(row["n_seeds"]),
                 fmt(row["aurcc_mean"], row["aurcc_ci"]),
                 fmt(row["rpp_mean"], row["rpp_ci"]),
                 fmt(row["cr_k_mean"], row["cr_k_ci"]),
                 fmt(row["loss_full_coverage_mean"], row["loss_full_coverage_ci"])]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines)
