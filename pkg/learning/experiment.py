"""
Run, sweep and report engine behind the bench commands.

A sweep is the grid methods x noise ratios x seeds. Every entry trains in its
own run directory

    <output_dir>/<task>/<method>/rho-<ratio>/seed-<seed>/

and yields one row of `results.csv`. Entries are independent: with several
workers they run in a process pool, and only the parent writes results.

"""

import logging
import os
import time
import traceback
from multiprocessing import Pool

import numpy as np
import pandas as pd
from tqdm import tqdm

from .audit import WEIGHTS_FILE, WeightAudit
from .config import ExperimentConfig
from .datagen import make_benchmark
from .enums import Method
from .metrics import headline_metric
from .trainer import train
from .utils import append_rows, ensure_dir

_log = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
RESULT_COLUMNS = [
    "task",
    "method",
    "noise_ratio",
    "seed",
    "metric_name",
    "metric",
    "val_metric",
    "best_epoch",
    "mean_weight_noisy",
    "mean_weight_clean",
    "runtime",
    "status",
    "error",
    "run_dir",
]
RUN_KEY = ["task", "method", "noise_ratio", "seed"]


def plan(config: ExperimentConfig, methods=None) -> list[ExperimentConfig]:
    """
    Expand a config into single-run configs, method-major, then ratio, then seed.

    """
    methods = methods or (config.method,)
    return [
        config.for_run(Method.from_alias(method) if isinstance(method, str) else method, ratio, seed)
        for method in methods
        for ratio in config.noise_ratios
        for seed in config.seeds
    ]


def _blank_row(config: ExperimentConfig) -> dict:
    row = dict.fromkeys(RESULT_COLUMNS)
    row.update(
        task=config.task.value,
        method=config.method.value,
        noise_ratio=config.noise_ratio,
        seed=config.seed,
        metric_name=headline_metric(config.task),
        run_dir=config.run_dir(),
    )
    return row


def run_single(config: ExperimentConfig) -> dict:
    """
    Generate the data of one entry, train, evaluate once on the clean test
    split and return its result row. Exceptions propagate.

    """
    config.validate()
    run_dir = ensure_dir(config.run_dir())
    config.to_json(os.path.join(run_dir, "config.json"))
    for stale in ("epochs.csv", WEIGHTS_FILE):
        if os.path.exists(os.path.join(run_dir, stale)):
            os.remove(os.path.join(run_dir, stale))

    start = time.perf_counter()
    _log.info(f"Starting {config.task.value} {config.method.value} rho={config.noise_ratio} seed={config.seed}")
    splits = make_benchmark(
        config.task,
        config.seed,
        config.noise_ratio,
        config.resolved_noise_mode,
        config.split_fractions,
        **config.dataset_dims(),
    )

    observer = None
    if config.method.uses_svae:
        log_path = os.path.join(run_dir, WEIGHTS_FILE) if config.audit_weights else None
        observer = WeightAudit(flags=splits.train.noise_flags(), path=log_path)
    result = train(config, splits, run_dir=run_dir, observer=observer)

    if observer is not None:
        weights = observer.summary(config.audit_last_k)
    else:
        weights = {
            "mean_weight_noisy": 1.0 if splits.train.is_noisy.any() else None,
            "mean_weight_clean": 1.0,
        }

    row = _blank_row(config)
    row.update(
        metric=result.metric,
        val_metric=result.val_metric,
        best_epoch=result.best_epoch,
        runtime=round(time.perf_counter() - start, 3),
        status="ok",
        error="",
        **weights,
    )
    _log.info(f"Finished {config.run_dir()}: test {result.metric_name}={result.metric:.4f}")
    return row


def _run_entry(config: ExperimentConfig) -> dict:
    """
    `run_single` that turns failures into a row, for use in workers.

    """
    try:
        return run_single(config)
    except Exception as err:  # noqa: BLE001
        _log.error(f"Run {config.run_dir()} failed: {err}\n{traceback.format_exc()}")
        row = _blank_row(config)
        row.update(status="failed", error=f"{type(err).__name__}: {err}")
        return row


def execute(entries: list[ExperimentConfig], workers: int = 1, results_path: str | None = None,
            progress: bool = True) -> pd.DataFrame:
    """
    Run entries, appending each row to `results_path` as it completes.

    Returns:
        DataFrame: One row per entry in entry order; failures included.

    """
    rows = []
    bar = tqdm(total=len(entries), desc="runs", unit="run", disable=not progress)

    def collect(row):
        rows.append(row)
        if results_path:
            append_rows(results_path, [row])
        bar.update(1)

    if workers > 1 and len(entries) > 1:
        with Pool(processes=min(workers, len(entries))) as pool:
            for row in pool.imap(_run_entry, entries):
                collect(row)
    else:
        for entry in entries:
            collect(_run_entry(entry))
    bar.close()

    frame = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    failed = int((frame["status"] != "ok").sum())
    if failed:
        _log.error(f"{failed} of {len(frame)} runs failed")
    return frame


def run(config: ExperimentConfig, methods=None, progress: bool = True) -> pd.DataFrame:
    """
    Run every (method, ratio, seed) of a config and record the rows in
    `<output_dir>/results.csv`.

    Raises:
        ConfigError: If the config is invalid. Nothing runs then.

    """
    config.validate()
    entries = plan(config, methods)
    ensure_dir(config.output_dir)
    return execute(entries, config.workers, os.path.join(config.output_dir, RESULTS_FILE), progress)


def sweep(config: ExperimentConfig, methods=tuple(Method), progress: bool = True) -> pd.DataFrame:
    """
    Run the full grid for several methods at once.

    """
    return run(config, methods, progress)


# Reports


def summarize(rows: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and population std of the test metric over seeds, per (task, method,
    ratio). Within a task and ratio, methods are ordered by descending mean.

    """
    done = rows[rows["status"] == "ok"] if "status" in rows else rows
    done = done.drop_duplicates(subset=RUN_KEY, keep="last")
    grouped = done.groupby(["task", "method", "noise_ratio"], sort=False)
    summary = grouped.agg(
        metric_name=("metric_name", "first"),
        mean=("metric", "mean"),
        std=("metric", lambda values: float(np.std(values.to_numpy(dtype=np.float64)))),
        seeds=("seed", "nunique"),
    ).reset_index()
    summary = summary.sort_values(
        ["task", "noise_ratio", "mean", "method"], ascending=[True, True, False, True], kind="mergesort"
    )
    return summary.reset_index(drop=True)


def series(summary: pd.DataFrame, task: str) -> pd.DataFrame:
    """
    One plot-ready row per noise ratio: noise_prcnt, then <method>_mean and
    <method>_std for every method.

    """
    part = summary[summary["task"] == task]
    wide = part.pivot(index="noise_ratio", columns="method", values=["mean", "std"])
    table = pd.DataFrame({"noise_prcnt": np.rint(wide.index.to_numpy() * 100).astype(int)})
    for method in sorted(part["method"].unique()):
        table[f"{method}_mean"] = wide[("mean", method)].to_numpy()
        table[f"{method}_std"] = wide[("std", method)].to_numpy()
    return table


def report(rows_path: str, out_dir: str) -> pd.DataFrame:
    """
    Write `summary.txt`, `summary.csv` and one `series_<task>.csv` per task.

    """
    rows = pd.read_csv(rows_path)
    summary = summarize(rows)
    ensure_dir(out_dir)
    summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False)

    shown = summary.assign(
        metric=[f"{mean:.4f} +/- {std:.4f}" for mean, std in zip(summary["mean"], summary["std"])]
    )[["task", "noise_ratio", "method", "metric_name", "metric", "seeds"]]
    text = shown.to_string(index=False) if len(shown) else "no completed runs"
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as stream:
        stream.write(text + "\n")

    for task in summary["task"].unique():
        series(summary, task).to_csv(os.path.join(out_dir, f"series_{task}.csv"), index=False)
    _log.info(f"Wrote report for {len(summary)} groups to {out_dir}")
    return summary
