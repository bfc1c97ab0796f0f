"""Command line runner: ``fairal run <config>`` and ``fairal summarize <results>``.

The config is a JSON document with the sections ``dataset``, ``model``,
``strategies``, ``engine``, ``fairness`` and ``output``; see the README for
the full schema. ``run`` writes ``<name>.csv`` (one row per strategy, model
and iteration, averaged over simulations) and ``<name>.meta.json`` (config
hash, seeds, timestamps) into the output directory.

Exit codes: 0 success, 2 bad config or arguments, 3 data could not be
loaded, 4 failure while running.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import errors
from .engine import (
    DatasetSpec,
    ExperimentConfig,
    FairnessConfig,
    StoppingRule,
    aggregate_runs,
    run_simulations,
)
from .models import ModelConfig
from .sampling import STRATEGY_KINDS, QueryStrategy

log = logging.getLogger("fairal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

CSV_COLUMNS = (
    "strategy", "model", "iteration", "n_labeled", "accuracy", "f1",
    "unfairness_dp", "unfairness_rate", "accuracy_std", "f1_std", "unfairness_dp_std",
)

STRATEGY_ALIASES = {
    "lc": "least_confident",
    "qbag": "qbag_vote_entropy",
    "qboost": "qboost_vote_entropy",
    "id": "information_density",
    "density": "information_density",
}

SECTIONS = ("dataset", "model", "strategies", "engine", "fairness", "output")
ENGINE_KEYS = ("batch_size", "max_iterations", "n_simulations", "seed", "stopping")
FAIRNESS_EXTRA = ("enabled",)
OUTPUT_KEYS = ("dir", "name")

# errors that mean the input data itself is unusable
DATA_ERRORS = (
    errors.MissingColumn, errors.MissingValue, errors.EmptyFile, errors.UnmappableSensitive,
    errors.InfeasibleSplit, errors.InvalidVariance, errors.InvalidProbability,
    OSError, UnicodeDecodeError,
)


# -- config ---------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class StrategyRun:
    name: str
    strategy: QueryStrategy
    fair: bool


@dataclasses.dataclass(frozen=True)
class RunConfig:
    base: ExperimentConfig
    runs: tuple
    output_dir: str
    output_name: str
    config_dir: Path


def _build(cls, section, values, skip=()):
    if not isinstance(values, dict):
        raise errors.ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names - set(skip)
    if unknown:
        raise errors.ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kwargs = {k: v for k, v in values.items() if k in names}
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise errors.ConfigError(f"invalid {section!r}: {exc}") from exc


def _strategy_runs(entries, fair_enabled):
    if not isinstance(entries, list) or not entries:
        raise errors.ConfigError("'strategies' must be a non-empty list")
    runs = []
    for entry in entries:
        if isinstance(entry, str):
            entry = {"kind": entry}
        if not isinstance(entry, dict) or "kind" not in entry:
            raise errors.ConfigError(f"bad strategy entry {entry!r}")
        entry = dict(entry)
        kind = entry.pop("kind")
        fair = kind.startswith("fair_")
        if fair:
            kind = kind[len("fair_"):]
        kind = STRATEGY_ALIASES.get(kind, kind)
        if kind not in STRATEGY_KINDS:
            raise errors.ConfigError(f"unknown strategy {kind!r}")
        name = entry.pop("name", kind)
        strategy = _build(QueryStrategy, "strategies", {"kind": kind, **entry})
        runs.append(StrategyRun(("fair_" + name) if fair else name, strategy, fair))
        if fair_enabled and not fair and kind != "random":
            runs.append(StrategyRun("fair_" + name, strategy, True))
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise errors.ConfigError(f"duplicate strategy names in {names}")
    return tuple(runs)


def parse_config(doc: dict, config_dir=Path("."), seed=None) -> RunConfig:
    """Validate a config document and fill in every default."""
    if not isinstance(doc, dict):
        raise errors.ConfigError("config must be a JSON object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise errors.ConfigError(f"unknown sections {sorted(unknown)}")
    if "strategies" not in doc:
        raise errors.ConfigError("config needs a 'strategies' list")
    dataset = _build(DatasetSpec, "dataset", doc.get("dataset", {}))
    model = _build(ModelConfig, "model", doc.get("model", {}))
    fairness_doc = doc.get("fairness", {})
    fairness = _build(FairnessConfig, "fairness", fairness_doc, skip=FAIRNESS_EXTRA)
    engine = doc.get("engine", {})
    if not isinstance(engine, dict) or set(engine) - set(ENGINE_KEYS):
        raise errors.ConfigError(f"'engine' accepts only {ENGINE_KEYS}")
    stopping = _build(StoppingRule, "engine.stopping", engine.get("stopping", {}))
    output = doc.get("output", {})
    if not isinstance(output, dict) or set(output) - set(OUTPUT_KEYS):
        raise errors.ConfigError(f"'output' accepts only {OUTPUT_KEYS}")
    runs = _strategy_runs(doc["strategies"], bool(fairness_doc.get("enabled", False)))
    engine_kwargs = {k: engine[k] for k in ("batch_size", "max_iterations", "n_simulations", "seed")
                     if k in engine}
    if seed is not None:
        engine_kwargs["seed"] = seed
    try:
        base = ExperimentConfig(dataset=dataset, model=model, stopping=stopping,
                                fairness=fairness, **engine_kwargs)
    except (TypeError, ValueError) as exc:
        raise errors.ConfigError(f"invalid 'engine': {exc}") from exc
    return RunConfig(base, runs, str(output.get("dir", "results")),
                     str(output.get("name", "results")), Path(config_dir))


def normalized_config(cfg: RunConfig) -> dict:
    """Every semantically meaningful field, defaults filled in."""
    base = dataclasses.asdict(cfg.base)
    for key in ("strategy", "fair"):
        base.pop(key)
    base["runs"] = [
        {"name": r.name, "fair": r.fair, "strategy": dataclasses.asdict(r.strategy)}
        for r in cfg.runs
    ]
    return json.loads(json.dumps(base, default=list))


def config_hash(cfg: RunConfig) -> str:
    text = json.dumps(normalized_config(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# -- results --------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, int):
        return str(value)
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def result_rows(name, traces, fair):
    rows = []
    for model in ("base", "fair") if fair else ("base",):
        agg = aggregate_runs(traces, model=model, truncate=True)
        for t in agg.iterations:
            rows.append({
                "strategy": name,
                "model": model,
                "iteration": int(t),
                "n_labeled": agg.mean["n_labeled"][t],
                "accuracy": agg.mean["accuracy"][t],
                "f1": agg.mean["f1"][t],
                "unfairness_dp": agg.mean["unfairness_dp"][t],
                "unfairness_rate": agg.mean["unfairness_rate"][t],
                "accuracy_std": agg.std["accuracy"][t],
                "f1_std": agg.std["f1"][t],
                "unfairness_dp_std": agg.std["unfairness_dp"][t],
            })
    return rows


def write_results(path, rows):
    rows = sorted(rows, key=lambda r: (r["strategy"], r["model"], r["iteration"]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([r[c] if c in ("strategy", "model") else _fmt(r[c]) for c in CSV_COLUMNS])


def read_results(path):
    """Rows of a results CSV with numeric fields parsed back."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise errors.ConfigError(f"{path} is not a results file")
        rows = []
        for r in reader:
            for c in CSV_COLUMNS[2:]:
                r[c] = int(r[c]) if c == "iteration" else float(r[c])
            rows.append(r)
    return rows


# -- commands -------------------------------------------------------------

def _resolve_dataset(cfg: RunConfig) -> RunConfig:
    ds = cfg.base.dataset
    if ds.kind == "csv" and not Path(ds.path).is_absolute():
        ds = dataclasses.replace(ds, path=str(cfg.config_dir / ds.path))
        cfg = dataclasses.replace(cfg, base=dataclasses.replace(cfg.base, dataset=ds))
    return cfg


def cmd_run(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cfg = parse_config(doc, Path(args.config).resolve().parent, seed=args.seed)
    except (OSError, json.JSONDecodeError, errors.ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = _resolve_dataset(cfg)
    if cfg.base.dataset.kind == "csv":
        try:
            cfg.base.dataset.load()
        except DATA_ERRORS + (ValueError,) as exc:
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA

    started = datetime.now(timezone.utc).isoformat()
    rows = []
    try:
        for run in cfg.runs:
            config = dataclasses.replace(cfg.base, strategy=run.strategy, fair=run.fair)
            t0 = time.perf_counter()
            traces = run_simulations(config, jobs=args.jobs)
            log.info("%s: %d simulations in %.1fs", run.name, len(traces), time.perf_counter() - t0)
            rows.extend(result_rows(run.name, traces, run.fair))
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (errors.FairALError, ValueError, FloatingPointError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    out_dir = Path(args.output_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{cfg.output_name}.csv"
    write_results(csv_path, rows)
    meta = {
        "config_hash": config_hash(cfg),
        "config": normalized_config(cfg),
        "seeds": {"seed": cfg.base.seed, "simulations": list(range(cfg.base.n_simulations))},
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "results": csv_path.name,
    }
    (out_dir / f"{cfg.output_name}.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(csv_path)
    return EXIT_OK


def summary_table(rows, iteration) -> str:
    picked = [r for r in rows if r["iteration"] == iteration]
    if not picked:
        raise errors.MissingIteration(f"iteration {iteration} is not in the results")
    by_strategy = {}
    for r in picked:
        by_strategy.setdefault(r["strategy"], {})[r["model"]] = r
    has_fair = any("fair" in m for m in by_strategy.values())
    # base models are judged by the correct-rate gap, fair models by the DP gap
    header = f"{'strategy':<28}{'accuracy':>10}{'unf_rate':>12}"
    if has_fair:
        header += f"{'fair_acc':>10}{'fair_dp':>10}"
    lines = [f"iteration {iteration}", header]
    for name in sorted(by_strategy):
        models = by_strategy[name]
        base = models["base"]
        line = f"{name:<28}{base['accuracy']:>10.3f}{base['unfairness_rate']:>12.3f}"
        if "fair" in models:
            line += f"{models['fair']['accuracy']:>10.3f}{models['fair']['unfairness_dp']:>10.3f}"
        lines.append(line)
    return "\n".join(lines)


def cmd_summarize(args) -> int:
    try:
        rows = read_results(args.results)
    except (OSError, errors.ConfigError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    iteration = args.iteration
    if iteration is None:
        iteration = max(r["iteration"] for r in rows) if rows else 0
    try:
        print(summary_table(rows, iteration))
    except errors.MissingIteration as exc:
        print(f"missing iteration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


GLOBAL_DEFAULTS = {"seed": None, "jobs": 1, "output_dir": None, "verbose": False}


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override engine.seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="simulations run in parallel (default 1)")
    common.add_argument("--output-dir", default=argparse.SUPPRESS, help="override output.dir")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="fairal", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", parents=[common], help="run the experiments of a config file")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)
    p_sum = sub.add_parser("summarize", parents=[common],
                           help="print a strategy table at one iteration")
    p_sum.add_argument("results")
    p_sum.add_argument("--iteration", type=int, default=None, help="default: last iteration")
    p_sum.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    if args.jobs < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
