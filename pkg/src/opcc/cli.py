"""Command-line front end.

Subcommands: gen-data, gen-queries, train, evaluate, sweep, report. Relative
output paths are resolved against the OPCC_OUT_DIR environment variable when
it is set. Exit status: 0 on success, 1 on runtime failure, 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .confidence import ValuePairs, answer_from_pairs
from .data import load_dataset, save_dataset
from .dynamics import BaseModelConfig, load_ensemble, save_ensemble, train_ensemble
from .envs import ENV_IDS, make_env, termination_for
from .harness import (ExperimentConfig, aggregate_rows, build_behavior_dataset,
                      estimate_all_pairs, load_config, metric_row, read_csv,
                      render_report, run_sweep, write_csv, write_rcc_csv)
from .queries import load_query_set, make_policy_family, save_query_set


def _out_path(value: str) -> Path:
    path = Path(value)
    root = os.environ.get("OPCC_OUT_DIR")
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="run seed")
    parser.add_argument("--out", required=True, help="output path (file or directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opcc",
                                     description="offline policy comparison with confidence")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="collect an offline transition dataset")
    p.add_argument("--env", required=True, choices=ENV_IDS + ("chain",))
    p.add_argument("--behavior", default="mixed", choices=harness.BEHAVIORS)
    p.add_argument("--n", type=int, required=True, help="number of transitions")
    p.add_argument("--n-policies", type=int, default=4)
    _add_common(p)

    p = sub.add_parser("gen-queries", help="generate labeled comparison queries")
    p.add_argument("--env", required=True, choices=ENV_IDS + ("chain",))
    p.add_argument("--horizons", type=_int_list, default=(10, 20))
    p.add_argument("--per-horizon", type=int, default=200)
    p.add_argument("--select", type=int, default=150)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--gap-frac", type=float, default=0.1,
                   help="gap threshold as a fraction of the max achievable return")
    p.add_argument("--gap-abs", type=float, default=None,
                   help="absolute gap threshold (overrides --gap-frac)")
    p.add_argument("--n-rollouts", type=int, default=2000,
                   help="ground-truth rollouts per side (tabular envs use exact DP)")
    p.add_argument("--initial-states", type=int, default=300)
    p.add_argument("--n-policies", type=int, default=4)
    _add_common(p)

    p = sub.add_parser("train", help="train a bootstrap ensemble of dynamics models")
    p.add_argument("--dataset", required=True)
    p.add_argument("--kind", default="deterministic-ff",
                   choices=("deterministic-ff", "gaussian-ff", "autoregressive"))
    p.add_argument("--members", type=int, default=20)
    p.add_argument("--hidden", type=_int_list, default=(64, 64))
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--prior-scale", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    _add_common(p)

    p = sub.add_parser("evaluate", help="answer queries and score risk-coverage metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--methods", type=_str_list, default=("ev", "pci", "u-pci"))
    p.add_argument("--rollouts-per-member", type=int, default=10)
    p.add_argument("--mode", default="sample", choices=("sample", "mean"))
    p.add_argument("--cr-k", type=int, default=10)
    p.add_argument("--answers-out", default=None, help="also write per-query answers here")
    p.add_argument("--dump-pairs", action="store_true",
                   help="include per-member value pairs in the answers file")
    p.add_argument("--rcc-dir", default=None, help="also write RCC point files here")
    _add_common(p)

    p = sub.add_parser("sweep", help="run the configured pipeline and ablation axes")
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("report", help="aggregate a metrics CSV into a markdown table")
    p.add_argument("--metrics", required=True, help="per-seed metrics CSV")
    p.add_argument("--out", required=True, help="output markdown path")
    return parser


def _cmd_gen_data(args) -> None:
    env = make_env(args.env)
    family = make_policy_family(env, args.n_policies, seed=args.seed)
    dataset = build_behavior_dataset(env, family, args.behavior, args.n, args.seed)
    out = _out_path(args.out)
    save_dataset(dataset, out)
    print(f"wrote {len(dataset)} transitions to {out}")


def _cmd_gen_queries(args) -> None:
    env = make_env(args.env)
    config = ExperimentConfig(env_id=env.id, horizons=args.horizons,
                              per_horizon=args.per_horizon, select=args.select,
                              gamma=args.gamma, gap_frac=args.gap_frac,
                              gap_abs=args.gap_abs, n_rollouts=args.n_rollouts,
                              initial_states=args.initial_states,
                              n_policies=args.n_policies)
    family = make_policy_family(env, args.n_policies, seed=args.seed)
    query_set = harness.build_query_set(env, family, config, args.seed)
    out = _out_path(args.out)
    save_query_set(query_set, out)
    print(f"wrote {len(query_set)} queries ({len(query_set.horizons)} horizons) to {out}")


def _cmd_train(args) -> None:
    dataset = load_dataset(_out_path(args.dataset))
    config = BaseModelConfig(kind=args.kind, hidden_sizes=args.hidden,
                             normalize=not args.no_normalize,
                             prior_scale=args.prior_scale, epochs=args.epochs,
                             batch_size=args.batch_size,
                             learning_rate=args.learning_rate, seed=args.seed)
    term_fn = termination_for(make_env(dataset.env_id)) if dataset.env_id else None
    ensemble = train_ensemble(dataset, config, args.members, term_fn, dataset.env_id)
    out = _out_path(args.out)
    save_ensemble(ensemble, out)
    print(f"wrote {len(ensemble)}-member {args.kind} ensemble to {out}")


def _cmd_evaluate(args) -> None:
    query_set = load_query_set(_out_path(args.queries))
    env = make_env(query_set.env_id)
    ensemble = load_ensemble(_out_path(args.model), termination_for(env))
    family = make_policy_family(env, query_set.n_policies, verify=False)
    policies = {p.id: p for p in family}
    pairs = estimate_all_pairs(ensemble, query_set, policies, query_set.gamma,
                               args.rollouts_per_member, args.mode, args.seed)

    rows = []
    for method in args.methods:
        metrics, curve = metric_row(query_set.queries, pairs, method, args.cr_k)
        row = {"env": query_set.env_id, "dataset_name": "", "horizon": "all",
               "method": method, "ensemble_count": len(ensemble),
               "prior_scale": ensemble.members[0].config.prior_scale,
               "dynamics_kind": ensemble.members[0].config.kind,
               "deterministic": ensemble.members[0].config.kind == "deterministic-ff",
               "normalize": ensemble.members[0].config.normalize, "seed": args.seed}
        row.update(metrics)
        rows.append(row)
        if args.rcc_dir:
            rcc_dir = _out_path(args.rcc_dir)
            rcc_dir.mkdir(parents=True, exist_ok=True)
            write_rcc_csv(rcc_dir / f"rcc_{method}.csv", curve)
    out = _out_path(args.out)
    write_csv(out, harness.METRIC_COLUMNS, rows)
    print(f"wrote metrics for {len(args.methods)} methods to {out}")

    if args.answers_out:
        answer_rows = []
        m = pairs.shape[1]
        columns = ["query_index", "method", "prediction", "confidence"]
        if args.dump_pairs:
            columns += [f"v_{i}" for i in range(m)] + [f"v_hat_{i}" for i in range(m)]
        for method in args.methods:
            for j in range(len(query_set)):
                vp = ValuePairs(pairs[j, :, 0], pairs[j, :, 1])
                ans = answer_from_pairs(vp, method)
                row = {"query_index": j, "method": method,
                       "prediction": ans.prediction, "confidence": ans.confidence}
                if args.dump_pairs:
                    row.update({f"v_{i}": float(pairs[j, i, 0]) for i in range(m)})
                    row.update({f"v_hat_{i}": float(pairs[j, i, 1]) for i in range(m)})
                answer_rows.append(row)
        answers_out = _out_path(args.answers_out)
        write_csv(answers_out, columns, answer_rows)
        print(f"wrote {len(answer_rows)} answers to {answers_out}")


def _cmd_sweep(args) -> None:
    config = load_config(args.config)
    out = _out_path(args.out)
    progress = None if args.quiet else (lambda msg: print(msg, flush=True))
    rows = run_sweep(config, out, progress=progress)
    print(f"wrote {len(rows)} metric rows under {out}")


def _cmd_report(args) -> None:
    rows = read_csv(_out_path(args.metrics))
    columns, agg = aggregate_rows(rows)
    out = _out_path(args.out)
    out.write_text(render_report(columns, agg))
    print(f"wrote report for {len(agg)} cells to {out}")


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "gen-queries": _cmd_gen_queries,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
