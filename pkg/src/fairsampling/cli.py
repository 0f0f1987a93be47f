"""Command-line pipeline: prepare | synth -> train -> evaluate -> compare,
plus the synthetic experiment runner and checkpoint inspection.

Every command writes into its own output directory, which receives exactly
one ``manifest.json``. Option values resolve as: explicit flag, then the
``--config`` JSON file, then built-in defaults.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 divergence or sampler exhaustion, 5 failed experiment verdict.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
import time


from . import __version__
from .dataset import (build_matrix, filter_and_core, parse_interactions, read_split,
                      unbiased_split, write_split)
from .errors import (CheckpointError, ConfigError, DataError, DivergenceError,
                     SamplerExhaustedError)
from .evaluation import EvalConfig, EvalReport, compare_reports, evaluate
from .experiment import ExperimentConfig, grid_search, run_experiment
from .model import ModelConfig, load_checkpoint, read_header
from .sampling import SamplerConfig
from .seeding import derive_seed
from .synthworld import (SyntheticConfig, generate_world, holdout_positives, read_synth,
                         relevance_holdout, write_world)
from .training import OBJECTIVES, TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_VERDICT = 5

_log = logging.getLogger("fairsampling")

DEFAULTS = {
    "prepare": {"format": "tsv", "header": False, "min_rating": 4.0, "k_core": 20,
                "ratios": "0.7,0.1,0.2", "seed": 0, "drop_empty_train_users": False},
    "synth": {"n_users": 200, "n_items": 300, "latent_dim": 4, "alpha": 1.0,
              "user_skew": 0.0, "item_skew": 1.0, "ceiling": 1.0, "latent_scale": 3.0,
              "seed": 0, "holdout_per_user": 50},
    "train": {"objective": "pair_fs", "learning_rate": 1.0, "l2": 1e-5, "epochs": 20,
              "batch_positives": 256, "neg_per_pos": 1, "fs_mix_ratio": 1.0, "retry_cap": 64,
              "on_failure": "skip", "d": 16, "init_scale": 0.1, "use_biases": False,
              "bias_only": False, "seed": 0, "grid": [], "grid_k": 20},
    "evaluate": {"split": "test", "k": [20], "include_train": False, "users": "with_holdout_only"},
    "compare": {"k": None, "names": None},
    "experiment": {"n_users": 200, "n_items": 300, "latent_dim": 4, "alpha": 1.0,
                   "user_skew": 0.0, "item_skew": 1.0, "ceiling": 1.0, "latent_scale": 3.0,
                   "world_seed": 0, "seeds": 5, "d": 16, "learning_rate": 1.0, "l2": 1e-5,
                   "epochs": 200, "batch_positives": 32, "holdout_per_user": 50, "k": 20,
                   "arp_ratio_max": 0.8},
}


class CLIError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _resolve(command: str, args: argparse.Namespace) -> dict:
    merged = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"cannot read config {args.config}: {exc}", EXIT_CONFIG) from None
        unknown = set(from_file) - set(merged)
        if unknown:
            raise CLIError(f"unknown config keys for {command}: {sorted(unknown)}", EXIT_CONFIG)
        merged.update(from_file)
    for key in merged:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _prepare_out(path: str, overwrite: bool) -> None:
    if os.path.exists(path) and (not os.path.isdir(path) or os.listdir(path)):
        if not overwrite:
            raise CLIError(f"output {path} exists; pass --overwrite to replace it", EXIT_CONFIG)
    os.makedirs(path, exist_ok=True)


def _write_manifest(out: str, command: str, config: dict, inputs: dict, outputs: list[str],
                    t0: float, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "tool_version": __version__,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "wall_time": time.perf_counter() - t0,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _parse_ratios(text) -> tuple[float, float, float]:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    try:
        return tuple(float(x) for x in str(text).split(","))
    except ValueError:
        raise CLIError(f"bad ratios {text!r}", EXIT_CONFIG) from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    t0 = time.perf_counter()
    c = _resolve("prepare", args)
    ratios = _parse_ratios(c["ratios"])
    with open(args.input, "rb") as fh:
        records = parse_interactions(fh, c["format"], header=c["header"])
    kept = filter_and_core(records, c["min_rating"], c["k_core"])
    if not kept:
        raise CLIError("no interactions survive the rating filter and k-core", EXIT_DATA)
    matrix = build_matrix(kept)
    bundle = unbiased_split(matrix, ratios, c["seed"], c["drop_empty_train_users"])
    _prepare_out(args.out, args.overwrite)
    write_split(bundle, args.out)
    _write_manifest(args.out, "prepare", c, {"input": os.path.abspath(args.input)},
                    ["train.tsv", "val.tsv", "test.tsv", "user_keys.tsv", "item_keys.tsv",
                     "split.json"], t0,
                    {"seeds": {"split": c["seed"]}, "n_records": len(records),
                     "n_after_filter": len(kept), "n_interactions": matrix.n_interactions})
    print(f"prepared {matrix.n_users} users x {matrix.n_items} items, "
          f"{matrix.n_interactions} interactions -> {args.out}")
    return EXIT_OK


def _synth_config(c, seed_key="seed") -> SyntheticConfig:
    return SyntheticConfig(n_users=c["n_users"], n_items=c["n_items"], latent_dim=c["latent_dim"],
                           alpha=c["alpha"], user_propensity_skew=c["user_skew"],
                           item_propensity_skew=c["item_skew"], propensity_ceiling=c["ceiling"],
                           latent_scale=c["latent_scale"], seed=c[seed_key])


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    c = _resolve("synth", args)
    wcfg = _synth_config(c)
    world = generate_world(wcfg)
    hseed = derive_seed(c["seed"], "synth.holdout")
    holdout = relevance_holdout(world, c["holdout_per_user"], hseed)
    _prepare_out(args.out, args.overwrite)
    write_world(world, holdout, args.out)
    _write_manifest(args.out, "synth", c, {},
                    ["train.tsv", "ideal_test.tsv", "theta_user.tsv", "theta_item.tsv",
                     "synth.json"], t0,
                    {"seeds": {"world": c["seed"], "holdout": hseed},
                     "theta_rescale": float(world.theta_user.max() * world.theta_item.max())})
    print(f"synthesized {world.y.n_interactions} interactions -> {args.out}")
    return EXIT_OK


def _load_data(directory):
    """Train matrix plus (validation, test) holdouts and popularity for either
    a split directory or a synth directory."""
    if os.path.exists(os.path.join(directory, "split.json")):
        b = read_split(directory)
        return b.train, {"validation": b.validation, "test": b.test}, b.popularity
    if os.path.exists(os.path.join(directory, "synth.json")):
        train_m, holdout, _ = read_synth(directory)
        pos = holdout_positives(holdout)
        return train_m, {"validation": pos, "test": pos}, train_m.item_degree().copy()
    raise CLIError(f"{directory} is neither a split nor a synth directory", EXIT_DATA)


def _train_config(c) -> TrainConfig:
    return TrainConfig(
        objective=c["objective"], learning_rate=c["learning_rate"], l2=c["l2"],
        epochs=c["epochs"], batch_positives=c["batch_positives"], neg_per_pos=c["neg_per_pos"],
        fs_mix_ratio=c["fs_mix_ratio"],
        sampler=SamplerConfig(retry_cap=c["retry_cap"], neg_per_pos=c["neg_per_pos"],
                              on_failure=c["on_failure"], seed=c["seed"]),
        model=ModelConfig(d=c["d"], init_scale=c["init_scale"], use_biases=c["use_biases"] or c["bias_only"],
                          bias_only=c["bias_only"], seed=c["seed"]),
        seed=c["seed"])


def _parse_grid(items) -> dict[str, list]:
    grid = {}
    for item in items or []:
        key, _, values = item.partition("=")
        if not values:
            raise CLIError(f"bad grid entry {item!r}; expected key=v1,v2", EXIT_CONFIG)
        try:
            grid[key.strip().replace("-", "_")] = [json.loads(v) for v in values.split(",")]
        except json.JSONDecodeError:
            raise CLIError(f"bad grid values in {item!r}", EXIT_CONFIG) from None
    return grid


def _write_train_report(out, report) -> float:
    """Write the report minus its wall time, which goes to the manifest so
    that re-runs stay byte-identical. Returns the wall time."""
    d = report.to_dict()
    wall = d.pop("wall_time")
    with open(os.path.join(out, "train_report.json"), "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return wall


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    c = _resolve("train", args)
    matrix, holdouts, pop = _load_data(args.data)
    cfg = _train_config(c)
    _prepare_out(args.out, args.overwrite)
    outputs = ["model.ckpt", "train_report.json"]
    grid = _parse_grid(c["grid"])
    extra = {"seeds": {"master": c["seed"], "init": derive_seed(c["seed"], "train.init"),
                       "sampler": derive_seed(c["seed"], "train.sampler")}}
    if grid:
        cfg, results = grid_search(matrix, holdouts["validation"], pop, cfg, grid, c["grid_k"])
        with open(os.path.join(args.out, "grid.json"), "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
        outputs.append("grid.json")
        extra["selected"] = cfg.to_dict()
    ckpt = os.path.join(args.out, "model.ckpt")
    try:
        _, report = train(matrix, cfg, checkpoint_path=ckpt)
    except (DivergenceError, SamplerExhaustedError) as exc:
        rep = getattr(exc, "report", None)
        if rep is not None:
            _write_train_report(args.out, rep)
        raise
    report.final_params_ref = "model.ckpt"
    extra["train_wall_time"] = _write_train_report(args.out, report)
    _write_manifest(args.out, "train", cfg.to_dict(), {"data": os.path.abspath(args.data)},
                    outputs, t0, extra)
    print(f"{cfg.objective}: final loss {report.loss_curve[-1]:.5f}, "
          f"skip rate {report.skip_rate:.3f} -> {ckpt}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    c = _resolve("evaluate", args)
    matrix, holdouts, pop = _load_data(args.data)
    params = load_checkpoint(args.checkpoint, expect_shape=(matrix.n_users, matrix.n_items))
    ecfg = EvalConfig(k_values=tuple(c["k"]), exclude_train=not c["include_train"], users=c["users"])
    meta = {"checkpoint": os.path.abspath(args.checkpoint), "split": c["split"]}
    run_manifest = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "manifest.json")
    if os.path.exists(run_manifest):
        with open(run_manifest, encoding="utf-8") as fh:
            cfg = json.load(fh).get("config", {})
        meta.update({"objective": cfg.get("objective"), "seed": cfg.get("seed")})
    if args.name:
        meta["name"] = args.name
    report = evaluate(params, matrix, holdouts[c["split"]], pop, ecfg, meta)
    _prepare_out(args.out, args.overwrite)
    report.save(os.path.join(args.out, "report.json"))
    _write_manifest(args.out, "evaluate", c, {"checkpoint": os.path.abspath(args.checkpoint),
                                             "data": os.path.abspath(args.data)},
                    ["report.json"], t0)
    print(compare_reports([report])[0].render())
    return EXIT_OK


def cmd_compare(args) -> int:
    t0 = time.perf_counter()
    c = _resolve("compare", args)
    reports = []
    for path in args.reports:
        if os.path.isdir(path):
            path = os.path.join(path, "report.json")
        reports.append(EvalReport.load(path))
    names = c["names"].split(",") if c["names"] else None
    if names is not None and len(names) != len(reports):
        raise CLIError("--names must list one name per report", EXIT_CONFIG)
    tables = compare_reports(reports, names)
    if c["k"] is not None:
        tables = [t for t in tables if t.k == c["k"]]
        if not tables:
            raise CLIError(f"K={c['k']} not present in the reports", EXIT_CONFIG)
    text = "\n\n".join(t.render() for t in tables)
    print(text)
    if args.out:
        _prepare_out(args.out, args.overwrite)
        with open(os.path.join(args.out, "table.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        with open(os.path.join(args.out, "table.json"), "w", encoding="utf-8") as fh:
            json.dump([t.to_dict() for t in tables], fh, indent=2, sort_keys=True)
        _write_manifest(args.out, "compare", c, {"reports": [os.path.abspath(p) for p in args.reports]},
                        ["table.txt", "table.json"], t0)
    return EXIT_OK


def cmd_experiment(args) -> int:
    t0 = time.perf_counter()
    c = _resolve("experiment", args)
    ecfg = ExperimentConfig(world=_synth_config(c, "world_seed"), seeds=tuple(range(c["seeds"])),
                            d=c["d"], learning_rate=c["learning_rate"], l2=c["l2"],
                            epochs=c["epochs"], batch_positives=c["batch_positives"],
                            holdout_per_user=c["holdout_per_user"], k=c["k"],
                            arp_ratio_max=c["arp_ratio_max"])
    result = run_experiment(ecfg)
    text = result.table.render() if result.table is not None else "(no completed runs)"
    verdict = json.dumps(result.verdict, indent=2, sort_keys=True)
    print(text)
    print(verdict)
    if args.out:
        _prepare_out(args.out, args.overwrite)
        with open(os.path.join(args.out, "table.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        with open(os.path.join(args.out, "experiment.json"), "w", encoding="utf-8") as fh:
            json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(args.out, "experiment", c, {}, ["table.txt", "experiment.json"], t0,
                        {"seeds": {"world": c["world_seed"], "train": list(ecfg.seeds)}})
    return EXIT_OK if result.passed else EXIT_VERDICT


def cmd_model_inspect(args) -> int:
    hdr = read_header(args.checkpoint)
    for key, value in hdr.items():
        print(f"{key}: {value}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_out(p, required=True):
    p.add_argument("--out", required=required, help="output directory")
    p.add_argument("--overwrite", action="store_true", help="replace a non-empty output directory")
    p.add_argument("--config", help="JSON file with option defaults")


def _add_world(p, seed_name="--seed"):
    p.add_argument("--n-users", type=int)
    p.add_argument("--n-items", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--user-skew", type=float)
    p.add_argument("--item-skew", type=float)
    p.add_argument("--ceiling", type=float)
    p.add_argument("--latent-scale", type=float)
    p.add_argument(seed_name, type=int)
    p.add_argument("--holdout-per-user", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fairsampling", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter a rating log and write an item-uniform split")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["tsv", "csv"])
    p.add_argument("--header", action="store_true", default=None)
    p.add_argument("--min-rating", type=float)
    p.add_argument("--k-core", type=int)
    p.add_argument("--ratios", help="train,val,test fractions, e.g. 0.7,0.1,0.2")
    p.add_argument("--seed", type=int)
    p.add_argument("--drop-empty-train-users", action="store_true", default=None)
    _add_out(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="simulate an exposure-biased world")
    _add_world(p)
    _add_out(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a matrix-factorization model")
    p.add_argument("--data", required=True, help="split or synth directory")
    p.add_argument("--objective", choices=OBJECTIVES)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-positives", type=int)
    p.add_argument("--neg-per-pos", type=int)
    p.add_argument("--fs-mix-ratio", type=float)
    p.add_argument("--retry-cap", type=int)
    p.add_argument("--on-failure", choices=["skip", "resample_base"])
    p.add_argument("--d", type=int)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--use-biases", action="store_true", default=None)
    p.add_argument("--bias-only", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                   help="grid-search a field on the validation holdout (repeatable)")
    p.add_argument("--grid-k", type=int)
    _add_out(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a holdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["test", "validation"])
    p.add_argument("--k", type=int, nargs="+")
    p.add_argument("--include-train", action="store_true", default=None)
    p.add_argument("--users", choices=["all", "with_holdout_only"])
    p.add_argument("--name", help="row label used by compare")
    _add_out(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="tabulate evaluation reports")
    p.add_argument("reports", nargs="+", help="report.json files or evaluate output directories")
    p.add_argument("--k", type=int)
    p.add_argument("--names", help="comma-separated row names")
    _add_out(p, required=False)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("experiment", help="synthetic FS vs classic comparison with a verdict")
    _add_world(p, "--world-seed")
    p.add_argument("--seeds", type=int, help="number of training seeds")
    p.add_argument("--d", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-positives", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--arp-ratio-max", type=float)
    _add_out(p, required=False)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("model-inspect", help="print checkpoint header metadata")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_model_inspect)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, SamplerExhaustedError) as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
