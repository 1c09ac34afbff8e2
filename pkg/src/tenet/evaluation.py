"""Cross-validation harness, hyperparameter grid search and report output."""

from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from tenet.datasets import Folds, SampleSet, preprocess, repeat_splits
from tenet.metrics import hit_rate, mre, mse, n_excluded
from tenet.model import DEFAULT_GRID, TeNetConfig, TeNetModel, TrainTrace, sgd_train
from tenet.numerics import derive_seed

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["dataset", "n", "HR20", "HR30", "MRE", "MSE"]


def score(preds, ys) -> dict:
    return {
        "HR20": hit_rate(preds, ys, 0.2),
        "HR30": hit_rate(preds, ys, 0.3),
        "MRE": mre(preds, ys),
        "MSE": mse(preds, ys),
        "n": len(ys),
        "excluded": n_excluded(ys),
    }


@dataclass
class EvalReport:
    dataset: str
    config: TeNetConfig
    runs: list = field(default_factory=list)  # per-repetition score dicts
    models: list = field(default_factory=list)
    traces: list = field(default_factory=list)

    def mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.runs]))

    @property
    def n(self) -> int:
        return int(self.runs[0]["n"]) if self.runs else 0

    def row(self) -> dict:
        return {
            "dataset": self.dataset,
            "n": self.n,
            **{k: self.mean(k) for k in ("HR20", "HR30", "MRE", "MSE")},
        }

    def header_lines(self) -> list[str]:
        c = self.config
        return [
            f"# te_mode={c.te_mode}",
            "# config " + " ".join(f"{k}={v}" for k, v in c.as_dict().items()),
        ]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            for line in self.header_lines():
                fh.write(line + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["repetition"] + REPORT_COLUMNS + ["excluded"])
            for i, r in enumerate(self.runs):
                w.writerow([i, self.dataset, r["n"]] + [repr(float(r[k])) for k in REPORT_COLUMNS[2:]] + [r["excluded"]])
            row = self.row()
            w.writerow(["mean"] + [row["dataset"], row["n"]] + [repr(row[k]) for k in REPORT_COLUMNS[2:]] + [""])

    def to_text(self) -> str:
        return format_table([self.row()])


def format_table(rows: list[dict]) -> str:
    """Aligned text table with the ``dataset n HR20 HR30 MRE MSE`` columns."""
    cells = [REPORT_COLUMNS]
    for r in rows:
        cells.append(
            [str(r["dataset"]), str(r["n"]), f"{r['HR20']:.1f}", f"{r['HR30']:.1f}", f"{r['MRE']:.3f}", f"{r['MSE']:.3f}"]
        )
    widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)


def train_on_folds(config: TeNetConfig, folds: Folds) -> tuple[TeNetModel, TrainTrace]:
    train = preprocess(folds.train, config.shift_window, config.denoise, config.clamp_eps, training=True)
    val = preprocess(folds.val, 0, config.denoise, config.clamp_eps)
    model = TeNetModel(config)
    trace = sgd_train(model, train, val)
    return model, trace


def predict_fold(model: TeNetModel, samples: SampleSet) -> np.ndarray:
    c = model.config
    return model.predict(preprocess(samples, 0, c.denoise, c.clamp_eps).x)


def evaluate_folds(config: TeNetConfig, splits: list[Folds], dataset: str = "data", keep_models=False) -> EvalReport:
    """Train on each split's training fold, select on validation, score on test."""
    report = EvalReport(dataset, config)
    for r, folds in enumerate(splits):
        model, trace = train_on_folds(replace(config, seed=config.seed + r), folds)
        report.runs.append(score(predict_fold(model, folds.test), folds.test.y))
        report.traces.append(trace)
        if keep_models:
            report.models.append(model)
    return report


def cross_validate(
    samples: SampleSet, config: TeNetConfig, repetitions: int = 5, dataset: str = "data", keep_models=False
) -> EvalReport:
    """Average test metrics over ``repetitions`` random equal-thirds splits."""
    splits = repeat_splits(samples, config.seed, repetitions)
    return evaluate_folds(config, splits, dataset, keep_models)


def ablation_cnn(samples: SampleSet, config: TeNetConfig, repetitions: int = 5, dataset="data") -> EvalReport:
    """Same protocol with the embedding layer frozen to the identity map."""
    return cross_validate(samples, replace(config, te_mode="frozen_identity"), repetitions, dataset)


# --------------------------------------------------------------- grid search


def candidate_configs(base: TeNetConfig, candidates: dict | None = None) -> list[TeNetConfig]:
    """Every combination of candidate values, in lexicographic order of the values."""
    candidates = DEFAULT_GRID if candidates is None else candidates
    if any(len(v) == 0 for v in candidates.values()):
        raise ValueError("every candidate set must be non-empty")
    keys = sorted(candidates)
    combos = itertools.product(*(sorted(candidates[k]) for k in keys))
    return [replace(base, **dict(zip(keys, combo))) for combo in combos]


def _val_scores(args) -> dict:
    config, splits = args
    hr, err = [], []
    for r, folds in enumerate(splits):
        model, _ = train_on_folds(replace(config, seed=config.seed + r), folds)
        preds = predict_fold(model, folds.val)
        err.append(mre(preds, folds.val.y))
        hr.append(hit_rate(preds, folds.val.y, 0.2))
    return {"MRE": float(np.mean(err)), "HR20": float(np.mean(hr))}


@dataclass
class GridResult:
    best: TeNetConfig
    report: EvalReport
    table: list  # (config, validation scores) per candidate


def _selection_key(item):
    config, s = item
    # lower validation MRE, then higher HR@20, then the lexicographically smallest config
    return (s["MRE"], -s["HR20"], tuple(sorted(config.as_dict().items(), key=lambda kv: kv[0])))


def grid_search(
    samples_or_splits,
    base: TeNetConfig,
    candidates: dict | None = None,
    repetitions: int = 5,
    jobs: int = 1,
    dataset: str = "data",
    keep_models: bool = False,
) -> GridResult:
    """Pick the candidate with the best mean validation MRE, then score its test folds.

    Each candidate gets its own seed derived from ``(base.seed, index)``.
    Test folds are only touched after selection.
    """
    if isinstance(samples_or_splits, SampleSet):
        if len(samples_or_splits) == 0:
            raise ValueError("empty data")
        splits = repeat_splits(samples_or_splits, base.seed, repetitions)
    else:
        splits = list(samples_or_splits)
        if not splits:
            raise ValueError("empty data")
    configs = [
        replace(c, seed=derive_seed(base.seed, i) % (2**31)) for i, c in enumerate(candidate_configs(base, candidates))
    ]
    work = [(c, splits) for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            scores = list(ex.map(_val_scores, work))
    else:
        scores = [_val_scores(w) for w in work]
    table = list(zip(configs, scores))
    best, _ = min(table, key=_selection_key)
    log.info("grid search picked %s", best)
    report = evaluate_folds(best, splits, dataset, keep_models)
    return GridResult(best, report, table)
