"""Command-line surface: train, export, simulate, compare, inspect.

Commands
--------
collect-behavior   materialize a scenario split: dataset, embeddings, behavior
train-offline      train the offline router from dataset + behavior files
export-prior       pull the ranking-head matrix out of a trained model
run-sim            replay a scenario through one or more routing strategies
compare            paired per-seed comparison of run-sim summaries
inspect            human-readable report on a saved router state or model

Every command is deterministic given --seed and embeds the invoking
configuration in its output files.  Exit codes: 0 success, 1 invariant
failure, 2 usage or configuration error.  Set RMROUTER_LOG=debug|info|...
for logging verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import InputError, InvariantError, RouterError
from .features import load_dataset, load_embeddings, save_dataset, save_embeddings
from .offline import (
    TrainConfig,
    collect_behavior,
    export_prior,
    load_behavior,
    load_model,
    model_from_dict,
    routing_accuracy,
    save_behavior,
    save_model,
    train_offline,
)
from .online import save_state, state_from_dict
from .serialize import read_json, write_json, write_jsonl
from .sim import (
    ReplayConfig,
    RunMetrics,
    compare_runs,
    generate_scenario,
    parse_router,
    run_replay,
    scenario_from_dict,
)

logger = logging.getLogger(__name__)

PRIOR_FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_USAGE = 2


def _setup_logging() -> None:
    level = os.environ.get("RMROUTER_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(message)s")


def _load_prior(path: str) -> np.ndarray:
    doc = read_json(path)
    version = doc.get("version")
    if version != PRIOR_FORMAT_VERSION:
        raise InputError(
            f"unsupported prior file version {version!r}; supported: {PRIOR_FORMAT_VERSION}"
        )
    prior = np.asarray(doc["bt_embeddings"], dtype=np.float64)
    if prior.shape != (int(doc["n_arms"]), int(doc["d"])):
        raise InputError("prior matrix shape does not match its declared n_arms/d")
    return prior


def _write_csv(path: str, header: list[str], rows: list[list], meta: str) -> None:
    buf = io.StringIO()
    buf.write(f"# {meta}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# commands


def cmd_collect_behavior(args: argparse.Namespace) -> int:
    scenario = scenario_from_dict(read_json(args.scenario))
    dataset = generate_scenario(scenario, args.seed)
    split = dataset.offline if args.split == "offline" else dataset.stream
    if split.n == 0:
        raise InputError(f"scenario produces no pairs for split {args.split!r}")
    os.makedirs(args.out_dir, exist_ok=True)
    records = collect_behavior(split.pairs, split.pool())
    meta = {"command": "collect-behavior", "scenario": args.scenario, "seed": args.seed,
            "split": args.split}
    save_dataset(os.path.join(args.out_dir, "dataset.jsonl"), split.pairs)
    save_embeddings(os.path.join(args.out_dir, "embeddings.jsonl"), split.embeddings)
    save_behavior(os.path.join(args.out_dir, "behavior.jsonl"), records, meta=meta)
    write_json(os.path.join(args.out_dir, "manifest.json"), {"config": meta, "n_pairs": split.n})
    print(f"wrote {split.n} pairs ({len(records)} behavior records) to {args.out_dir}")
    return EXIT_OK


def cmd_train_offline(args: argparse.Namespace) -> int:
    pairs = load_dataset(args.dataset)
    records = load_behavior(args.behavior)
    embeddings = load_embeddings(args.embeddings) if args.embeddings else None
    config = TrainConfig(
        lam=args.lam,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        momentum=args.momentum,
        seed=args.seed,
        embed_dim=args.embed_dim,
        encoder_dim=args.encoder_dim,
    )
    if not 0.0 <= args.holdout < 1.0:
        raise InputError(f"--holdout must be in [0, 1), got {args.holdout}")

    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(len(pairs))
    n_holdout = int(round(args.holdout * len(pairs)))
    holdout_ids = {pairs[i].pair_id for i in perm[:n_holdout]}
    train_pairs = [p for p in pairs if p.pair_id not in holdout_ids]
    train_records = [r for r in records if r.pair_id not in holdout_ids]
    if not train_pairs:
        raise InputError("holdout split leaves no training pairs")

    result = train_offline(train_pairs, train_records, config, embeddings=embeddings)
    model = result.model

    if n_holdout:
        if embeddings is not None:
            holdout_embs = {pid: embeddings[pid] for pid in holdout_ids}
        else:
            holdout_embs = {
                p.pair_id: model.embed(p) for p in pairs if p.pair_id in holdout_ids
            }
        holdout_records = [r for r in records if r.pair_id in holdout_ids]
        acc = routing_accuracy(model, holdout_embs, holdout_records)
        print(f"held-out routing accuracy: {acc:.4f}")
    else:
        print("held-out routing accuracy: n/a (no holdout)")

    save_model(args.out, model)
    if args.loss_csv:
        _write_csv(
            args.loss_csv,
            ["epoch", "total_loss", "bt_loss", "cls_loss"],
            [
                [h["epoch"], repr(h["total_loss"]), repr(h["bt_loss"]), repr(h["cls_loss"])]
                for h in result.history
            ],
            meta=f"train-offline seed={args.seed} lambda={args.lam} lr={args.lr} "
            f"epochs={args.epochs} batch_size={args.batch_size}",
        )
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_export_prior(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    prior = export_prior(model)
    write_json(
        args.out,
        {
            "version": PRIOR_FORMAT_VERSION,
            "n_arms": model.n_arms,
            "d": model.d,
            "bt_embeddings": [[float(x) for x in row] for row in prior],
            "source_train_meta": model.train_meta,
        },
    )
    print(f"prior ({model.n_arms} x {model.d}) written to {args.out}")
    return EXIT_OK


def _expand_routers(args: argparse.Namespace, n_arms: int, have_prior: bool) -> list[tuple[str, str]]:
    """Return (run_name, router_spec) entries; run_name distinguishes prior modes."""
    if args.router != "all":
        for spec in args.router.split(","):
            parse_router(spec)  # validates, raises ConfigError on bad names
        routers = []
        for spec in args.router.split(","):
            if spec == "thompson" and args.prior == "injected":
                routers.append(("thompson-injected", spec))
            else:
                routers.append((spec, spec))
        return routers
    routers = [(f"single:{n}", f"single:{n}") for n in range(n_arms)]
    routers += [("random", "random"), ("majority", "majority"), ("uwo", "uwo"),
                ("linucb", "linucb"), ("thompson", "thompson")]
    if have_prior:
        routers += [
            ("offline", "offline"),
            (f"weighted:{args.weighted_alpha}", f"weighted:{args.weighted_alpha}"),
            ("thompson-injected", "thompson"),
        ]
    return routers


def _run_one_seed(payload: tuple) -> list[dict]:
    """Worker: run every requested router for one seed; returns summary rows."""
    (scenario_doc, seed, routers, base_config, out_dir, scenario_path) = payload
    scenario = scenario_from_dict(scenario_doc)
    dataset = generate_scenario(scenario, seed)
    rows = []
    for run_name, spec in routers:
        config = ReplayConfig(**{**base_config, "seed": seed})
        if run_name == "thompson-injected":
            config.prior_mode = "injected"
        elif spec == "thompson":
            config.prior_mode = "zero"
        kind, _ = parse_router(spec)
        if not (kind in ("offline", "weighted") or (kind == "thompson" and config.prior_mode == "injected")):
            config.offline_prior = None
        decision_log: list = []
        reward_log: list = []
        state_out: list = []
        metrics = run_replay(
            spec,
            dataset,
            config,
            decision_log=decision_log,
            reward_log=reward_log,
            final_state_out=state_out,
        )
        metrics.router = run_name
        base = os.path.join(out_dir, f"{run_name.replace(':', '_')}_{seed}")
        meta = {
            "command": "run-sim",
            "scenario": scenario_path,
            "router": run_name,
            "seed": seed,
            "sigma_sq": config.sigma_sq,
            "prior_mode": config.prior_mode,
            "reward_variant": config.reward_variant,
        }
        write_jsonl(
            base + ".metrics.jsonl",
            (
                {
                    "step": t,
                    "routing_accuracy": metrics.routing_accuracy_per_step[t],
                    "cumulative_regret": metrics.cumulative_regret[t],
                    "rm_calls": metrics.rm_calls_per_step[t],
                }
                for t in range(scenario.n_steps)
            ),
            meta=meta,
        )
        if decision_log:
            write_jsonl(base + ".decisions.jsonl", decision_log, meta=meta)
        if reward_log:
            write_jsonl(base + ".rewards.jsonl", reward_log, meta=meta)
        if kind == "thompson" and state_out:
            save_state(base + ".state.json", state_out[0])
        rows.append(
            {
                "router": run_name,
                "seed": seed,
                "final_annotation_accuracy": metrics.final_annotation_accuracy,
                "total_rm_calls": int(sum(metrics.rm_calls_per_step)),
                "mean_uwo_weight": metrics.mean_uwo_weight,
            }
        )
    return rows


def cmd_run_sim(args: argparse.Namespace) -> int:
    scenario_doc = read_json(args.scenario)
    scenario = scenario_from_dict(scenario_doc)
    seeds = (
        [int(s) for s in args.seeds.split(",")] if args.seeds else list(scenario.seeds)
    )
    prior = _load_prior(args.prior_file) if args.prior_file else None
    if args.prior == "injected" and prior is None:
        raise InputError("--prior injected requires --prior-file")
    needs_prior = [
        spec
        for spec in (args.router.split(",") if args.router != "all" else [])
        if parse_router(spec)[0] in ("offline", "weighted")
    ]
    if needs_prior and prior is None:
        raise InputError(f"router(s) {needs_prior} require --prior-file")

    routers = _expand_routers(args, scenario.n_arms, prior is not None)
    os.makedirs(args.out_dir, exist_ok=True)
    base_config = {
        "sigma_sq": args.sigma_sq,
        "prior_variance": args.prior_variance,
        "offline_prior": prior,
        "linucb_alpha": args.linucb_alpha,
        "linucb_per_pair": args.linucb_per_pair,
        "reward_variant": args.reward_variant,
        "light_c": args.light_c,
    }
    payloads = [
        (scenario_doc, seed, routers, base_config, args.out_dir, args.scenario)
        for seed in seeds
    ]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            per_seed = list(pool.map(_run_one_seed, payloads))
    else:
        per_seed = [_run_one_seed(p) for p in payloads]

    rows = [row for rows_ in per_seed for row in rows_]
    rows.sort(key=lambda r: (routers_index(routers, r["router"]), r["seed"]))
    _write_csv(
        os.path.join(args.out_dir, "summary.csv"),
        ["router", "seed", "final_annotation_accuracy", "total_rm_calls", "mean_uwo_weight"],
        [
            [
                r["router"],
                r["seed"],
                repr(r["final_annotation_accuracy"]),
                r["total_rm_calls"],
                "" if r["mean_uwo_weight"] is None else repr(r["mean_uwo_weight"]),
            ]
            for r in rows
        ],
        meta=f"run-sim scenario={args.scenario} seeds={','.join(map(str, seeds))} "
        f"reward_variant={args.reward_variant}",
    )
    print(f"{len(rows)} runs written to {args.out_dir}")
    return EXIT_OK


def routers_index(routers: list[tuple[str, str]], name: str) -> int:
    for i, (run_name, _) in enumerate(routers):
        if run_name == name:
            return i
    return len(routers)


def cmd_compare(args: argparse.Namespace) -> int:
    rows = []
    with open(args.summary, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            rows.append(
                RunMetrics(
                    router=row["router"],
                    seed=int(row["seed"]),
                    routing_accuracy_per_step=[],
                    cumulative_regret=[],
                    arm_selection_counts=np.zeros(1, dtype=np.int64),
                    final_annotation_accuracy=float(row["final_annotation_accuracy"]),
                    rm_calls_per_step=[],
                )
            )
    if not rows:
        raise InputError(f"no runs found in {args.summary}")
    methods: list[str] = []
    for row in rows:
        if row.router not in methods:
            methods.append(row.router)
    if args.baseline.isdigit():
        baseline_index = int(args.baseline)
    else:
        if args.baseline not in methods:
            raise InputError(f"baseline {args.baseline!r} not among routers {methods}")
        baseline_index = methods.index(args.baseline)
    report = compare_runs(rows, baseline_index, n_boot=args.n_boot, seed=args.seed)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_csv())
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    doc = read_json(args.path)
    if "arms" in doc:
        state = state_from_dict(doc)
        print(f"router state: {state.n_arms} arms, d={state.d}, step={state.step}")
        cfg = state.config
        print(
            f"config: sigma_sq={cfg.sigma_sq} prior_variance={cfg.prior_variance} "
            f"prior_mode={cfg.prior_mode}"
        )
        for n, arm in enumerate(state.arms):
            print(
                f"arm {n}: |mean|={np.linalg.norm(arm.mean):.6f} "
                f"trace(cov)={np.trace(arm.covariance):.6f} "
                f"updates={arm.update_count} selections={int(state.selection_counts[n])}"
            )
    elif "bt_embeddings" in doc and "arms" not in doc:
        model = model_from_dict(doc)
        print(f"offline model: {model.n_arms} arms, d={model.d}, lambda={model.lam}")
        print(f"fusion: {'none (identity contexts)' if model.fusion is None else 'single-layer MLP'}")
        for n in range(model.n_arms):
            print(
                f"arm {n}: |bt|={np.linalg.norm(model.bt_embeddings[n]):.6f} "
                f"|cls|={np.linalg.norm(model.cls_embeddings[n]):.6f}"
            )
        if model.train_meta:
            meta = model.train_meta
            print(
                f"trained: seed={meta.get('seed')} epochs={meta.get('epochs')} "
                f"final_loss={meta.get('final_loss')}"
            )
    else:
        raise InputError(f"{args.path} is neither a router state nor an offline model")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmrouter", description="reward-model routing toolkit"
    )
    parser.add_argument("--version", action="version", version=f"rmrouter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect-behavior", help="materialize a scenario split to files")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("offline", "stream"), default="offline")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_collect_behavior)

    p = sub.add_parser("train-offline", help="train the offline router")
    p.add_argument("--dataset", required=True)
    p.add_argument("--behavior", required=True)
    p.add_argument("--embeddings", default=None, help="precomputed pair vectors (JSONL)")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--encoder-dim", type=int, default=256)
    p.add_argument("--holdout", type=float, default=0.2)
    p.set_defaults(func=cmd_train_offline)

    p = sub.add_parser("export-prior", help="extract the ranking-head matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_prior)

    p = sub.add_parser("run-sim", help="replay a scenario through routing strategies")
    p.add_argument("--scenario", required=True)
    p.add_argument("--router", required=True, help="name, comma list, or 'all'")
    p.add_argument("--seeds", default=None, help="comma list; default: scenario seeds")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prior", choices=("zero", "injected"), default="zero")
    p.add_argument("--prior-file", default=None)
    p.add_argument("--prior-variance", type=float, default=None)
    p.add_argument("--sigma-sq", type=float, default=1.0)
    p.add_argument("--linucb-alpha", type=float, default=1.0)
    p.add_argument("--linucb-per-pair", action="store_true",
                   help="score each pair separately instead of one arm per batch")
    p.add_argument("--weighted-alpha", type=float, default=0.5)
    p.add_argument(
        "--reward-variant",
        choices=("batch_quantile", "neg_loss", "full_advantage", "light_advantage"),
        default="batch_quantile",
    )
    p.add_argument("--light-c", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run_sim)

    p = sub.add_parser("compare", help="paired per-seed comparison of a run-sim summary")
    p.add_argument("--summary", required=True)
    p.add_argument("--baseline", required=True, help="router name or method index")
    p.add_argument("--out", default=None)
    p.add_argument("--n-boot", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="report on a saved router state or model")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except RouterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
