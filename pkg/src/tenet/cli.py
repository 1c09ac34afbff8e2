"""Command-line entry point: ``tenet <command> [options]``.

Exit codes: 0 ok, 2 bad input data, 3 bad configuration, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from tenet.casestudy import CASE_U, CASE_V, format_report, report_csv, case_report
from tenet.datasets import (
    DataFormatError,
    InsufficientDataError,
    ParseStats,
    aggregate_days,
    make_samples,
    mobility_day_series,
    parse_hpc_fr,
    parse_meter_csv,
    parse_traces,
    read_days,
    repeat_splits,
    write_days,
)
from tenet.evaluation import EvalReport, evaluate_folds, grid_search
from tenet.model import DEFAULT_GRID, TeNetConfig, TrainingDivergence, export_snippets, grad_check, save_model
from tenet.synthetic import (
    DistortionSpec,
    ablation_days,
    cluster_exemplars,
    gen_ablation_set,
    read_manifest_folds,
    simulate_household_days,
    write_manifest,
)

log = logging.getLogger("tenet")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4

# run-file keys that are not model hyperparameters, with their defaults
RUN_KEYS = {"data": None, "manifest": None, "out": None, "dataset": "data", "repetitions": 5, "min_days": 150}


class ConfigError(ValueError):
    pass


class RunConfigFile:
    """``key = value`` lines; ``#`` starts a comment.  Unknown keys are an error."""

    def __init__(self, items: dict | None = None):
        self.items = dict(items or {})

    @classmethod
    def read(cls, path) -> "RunConfigFile":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.parse(text, str(path))

    @classmethod
    def parse(cls, text: str, name: str = "<config>") -> "RunConfigFile":
        items = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{name}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            cls._check_key(key, f"{name}:{lineno}")
            items[key] = value
        return cls(items)

    @staticmethod
    def _check_key(key, where):
        if key not in TeNetConfig.field_types() and key not in RUN_KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")

    def update(self, pairs: list[str]):
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"--set expects key=value, got {pair!r}")
            key, value = (p.strip() for p in pair.split("=", 1))
            self._check_key(key, "--set")
            self.items[key] = value

    def tenet_config(self) -> TeNetConfig:
        types = TeNetConfig.field_types()
        kwargs = {}
        for key, typ in types.items():
            if key not in self.items:
                log.info("config: %s not given, using default %s", key, getattr(TeNetConfig, key))
                continue
            try:
                kwargs[key] = typ(self.items[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: cannot parse {self.items[key]!r} as {typ.__name__}") from exc
        try:
            return TeNetConfig(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def get(self, key):
        default = RUN_KEYS[key]
        value = self.items.get(key, default)
        if value is None or isinstance(default, str) or default is None:
            return value
        try:
            return type(default)(value)
        except ValueError as exc:
            raise ConfigError(f"config key {key}: bad value {value!r}") from exc


# ------------------------------------------------------------------ commands


def cmd_ingest(args) -> int:
    stats = ParseStats()
    if args.format == "hpc-fr":
        days, dropped = aggregate_days(parse_hpc_fr(args.inp, stats), 1, "power", args.min_completeness)
    elif args.format == "meter-csv":
        days, dropped = aggregate_days(
            parse_meter_csv(args.inp, stats), args.sample_minutes, "energy", args.min_completeness
        )
    else:
        days = mobility_day_series(parse_traces(args.inp, stats), args.mode)
        dropped = 0
        for user in sorted({d.source_id for d in days}):
            if all(not d.values.any() for d in days if d.source_id == user):
                log.warning("user %s never travels: every day is all zero", user)
    n = write_days(days, args.out)
    print(f"rows: {stats.rows}")
    print(f"missing: {stats.missing}  rejected: {stats.rejected}  duplicates: {stats.duplicates}")
    print(f"days kept: {n}  days dropped: {dropped}")
    return EXIT_OK


def _run_config(args) -> RunConfigFile:
    run = RunConfigFile.read(args.config) if args.config else RunConfigFile()
    env_seed = os.environ.get("TENET_SEED")
    if env_seed is not None:
        run.items["seed"] = env_seed
    run.update(args.set or [])
    for key in ("data", "manifest", "out"):
        if getattr(args, key, None):
            run.items[key] = getattr(args, key)
    if args.repetitions is not None:
        run.items["repetitions"] = str(args.repetitions)
    if args.ablation_cnn:
        run.items["te_mode"] = "frozen_identity"
    return run


def _load_splits(run: RunConfigFile, config: TeNetConfig):
    data = run.get("data")
    if not data:
        raise ConfigError("no data file given (--data or 'data = ...')")
    days = read_days(data)
    reps = run.get("repetitions")
    if reps < 1:
        raise ConfigError("repetitions must be at least 1")
    manifest = run.get("manifest")
    if manifest:
        folds = read_manifest_folds(manifest, days, config.d_prime)
        return [folds] * reps
    samples = make_samples(days, config.d_prime, run.get("min_days"))
    return repeat_splits(samples, config.seed, reps)


def _out_dir(run: RunConfigFile) -> Path:
    out = run.get("out")
    if not out:
        raise ConfigError("no output directory given (--out or 'out = ...')")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_artifacts(report: EvalReport, out: Path):
    report.to_csv(out / "report.csv")
    for r, trace in enumerate(report.traces):
        trace.to_csv(out / f"trace_r{r}.csv")
    for r, model in enumerate(report.models):
        save_model(model, out / f"model_r{r}.txt")
        export_snippets(model, out / f"snippets_r{r}.csv")
    print("\n".join(report.header_lines()))
    print(report.to_text())


def cmd_train(args) -> int:
    run = _run_config(args)
    config = run.tenet_config()
    splits = _load_splits(run, config)
    out = _out_dir(run)
    report = evaluate_folds(config, splits, run.get("dataset"), keep_models=args.keep_models)
    _write_artifacts(report, out)
    return EXIT_OK


def _parse_grid(pairs) -> dict | None:
    if not pairs:
        return None
    types = TeNetConfig.field_types()
    grid = {}
    for pair in pairs:
        key, _, values = pair.partition("=")
        if key not in types or not values:
            raise ConfigError(f"--grid expects field=v1,v2,..., got {pair!r}")
        try:
            grid[key] = tuple(types[key](v) for v in values.split(","))
        except ValueError as exc:
            raise ConfigError(f"--grid {key}: {exc}") from exc
    return grid


def cmd_gridsearch(args) -> int:
    run = _run_config(args)
    base = run.tenet_config()
    candidates = _parse_grid(args.grid) or DEFAULT_GRID
    splits = _load_splits(run, base)
    out = _out_dir(run)
    result = grid_search(splits, base, candidates, jobs=args.jobs, dataset=run.get("dataset"), keep_models=True)
    keys = sorted(candidates)
    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ["seed", "val_MRE", "val_HR20"])
        for cfg, s in result.table:
            w.writerow([getattr(cfg, k) for k in keys] + [cfg.seed, repr(s["MRE"]), repr(s["HR20"])])
    with open(out / "best.conf", "w") as fh:
        for k, v in result.best.as_dict().items():
            fh.write(f"{k} = {v}\n")
    _write_artifacts(result.report, out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = grad_check(tolerance=args.tolerance, seeds=range(args.seeds))
    for name, err in sorted(report.max_rel_err.items()):
        print(f"{name:14s} {err:.3e}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict} max relative error {report.worst:.3e} (tolerance {report.tolerance:g}, {report.seeds} seeds)")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def _series_arg(text):
    if text is None:
        return None
    if os.path.exists(text):
        text = Path(text).read_text()
    try:
        return np.array([float(v) for v in text.replace("\n", ",").split(",") if v.strip()])
    except ValueError as exc:
        raise DataFormatError(f"bad series {text!r}") from exc


def cmd_casestudy(args) -> int:
    v = _series_arg(args.v)
    u = _series_arg(args.u)
    v = CASE_V if v is None else v
    u = CASE_U if u is None else u
    if len(v) != len(u):
        raise DataFormatError(f"v has {len(v)} values but u has {len(u)}")
    report = case_report(v, u)
    print(format_report(report))
    if args.out:
        Path(args.out).write_text(report_csv(report))
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.exemplars:
        rows = np.array([d.values for d in read_days(args.exemplars)])
        if len(rows) < args.k:
            raise DataFormatError(f"{args.exemplars}: need {args.k} exemplar days, found {len(rows)}")
        exemplars, source, picked = rows[: args.k], args.exemplars, None
    else:
        pool = (
            np.array([d.values for d in read_days(args.cluster_from)])
            if args.cluster_from
            else simulate_household_days(args.n_days, seed=args.seed)
        )
        picked = cluster_exemplars(pool, k=args.k)
        exemplars = pool[picked]
        source = args.cluster_from or f"simulated:{args.n_days}"
    print(f"exemplars: {len(exemplars)}")
    spec = DistortionSpec(ops=args.ops, seg_len=args.seg_len, s_max=args.s_max, seed=args.seed)
    ab = gen_ablation_set(exemplars, args.per_exemplar, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_days(ablation_days(ab), out / "days.csv")
    write_manifest(ab, out / "manifest.json", args.seed, source, picked)
    print(f"samples: {len(ab.exemplar_of)}  train/val/test: "
          f"{len(ab.folds.train)}/{len(ab.folds.val)}/{len(ab.folds.test)}")
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _add_run_options(p):
    p.add_argument("--config", help="run file with 'key = value' lines")
    p.add_argument("--data", help="day-series CSV (overrides 'data')")
    p.add_argument("--manifest", help="synth manifest fixing folds and targets (overrides 'manifest')")
    p.add_argument("--out", help="output directory (overrides 'out')")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key; repeatable")
    p.add_argument("--repetitions", type=int, help="cross-validation repetitions (default 5)")
    p.add_argument("--ablation-cnn", action="store_true", help="freeze the embedding layer to the identity map")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tenet", description="Day-total prediction from a day's head segment.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert raw data to the day-series CSV")
    p.add_argument("--format", required=True, choices=["hpc-fr", "meter-csv", "traces"])
    p.add_argument("--in", dest="inp", required=True, help="raw input file")
    p.add_argument("--out", required=True, help="day-series CSV to write")
    p.add_argument("--mode", choices=["distance", "time"], default="distance", help="traces: value per interval")
    p.add_argument("--min-completeness", type=float, default=0.95, help="drop days below this share of readings")
    p.add_argument("--sample-minutes", type=int, default=30, help="meter-csv: minutes per reading")
    p.set_defaults(func=cmd_ingest)

    for name, keep, help_ in (("train", True, "cross-validated training; writes models and snippets too"),
                              ("eval", False, "cross-validated test scores and traces")):
        p = sub.add_parser(name, help=help_)
        _add_run_options(p)
        p.set_defaults(func=cmd_train, keep_models=keep)

    p = sub.add_parser("gridsearch", help="select hyperparameters on validation folds, then score test folds")
    _add_run_options(p)
    p.add_argument("--grid", action="append", metavar="FIELD=V1,V2", help="candidate values; default full table")
    p.add_argument("--jobs", type=int, default=1, help="parallel candidate training processes")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("casestudy", help="embedding versus moving average on one day pair")
    p.add_argument("--v", help="reference series: comma-separated values or a file of them")
    p.add_argument("--u", help="distorted series: comma-separated values or a file of them")
    p.add_argument("--out", help="also write the metric rows as CSV")
    p.set_defaults(func=cmd_casestudy)

    p = sub.add_parser("synth", help="build the distortion benchmark")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--exemplars", help="day-series CSV whose first K rows are the exemplars")
    src.add_argument("--cluster", action="store_true", help="pick exemplars by affinity propagation")
    p.add_argument("--cluster-from", help="day-series CSV to cluster (default: simulated household days)")
    p.add_argument("--n-days", type=int, default=300, help="simulated days to cluster")
    p.add_argument("--k", type=int, default=10, help="number of exemplars")
    p.add_argument("--per-exemplar", type=int, default=30)
    p.add_argument("--ops", type=int, default=2, help="distortion operations per sample")
    p.add_argument("--seg-len", type=int, default=4, help="swap segment length")
    p.add_argument("--s-max", type=int, default=2, help="largest shift")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="directory for days.csv and manifest.json")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InsufficientDataError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingDivergence, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
