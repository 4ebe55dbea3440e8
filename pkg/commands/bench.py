"""
The bench verbs: run, sweep, audit and report.

"""

import os
from dataclasses import replace

from learning import experiment
from learning.audit import audit
from learning.config import ConfigError, ExperimentConfig
from learning.enums import Method, Task

from .command import Command


def _floats(text: str) -> tuple:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as err:
        raise ConfigError(f"Expected comma-separated numbers, got {text!r}.") from err


def _ints(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as err:
        raise ConfigError(f"Expected comma-separated integers, got {text!r}.") from err


def _methods(text: str) -> tuple:
    try:
        return tuple(Method.from_alias(part) for part in text.split(",") if part.strip())
    except ValueError as err:
        raise ConfigError(f"Unknown method in {text!r}; use cel, focal or svae.") from err


class ConfigCommand(Command):
    """
    Shared options of the commands that train.

    """

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON config file (defaults come from the settings)")
        parser.add_argument("--override", action="append", nargs="+", default=[], metavar="KEY=VALUE",
                            help="override config values, e.g. epochs=20 noise_ratios=0,0.3")
        parser.add_argument("--out", help="output directory")
        parser.add_argument("--workers", type=int, help="parallel worker processes")

    def parse(self):
        """
        Build the validated config from file, overrides and flags, in that order.

        """
        opts = self.opts
        config = ExperimentConfig.from_json(opts.config) if opts.config else ExperimentConfig()
        config = config.with_overrides([pair for group in opts.override for pair in group])
        changes = {}
        if opts.out:
            changes["output_dir"] = opts.out
        if opts.workers:
            changes["workers"] = opts.workers
        if getattr(opts, "seed", None) is not None:
            changes["seeds"] = (opts.seed,)
        changes.update(self.extra_changes())
        self.config = replace(config, **changes).validate()

    def extra_changes(self) -> dict:
        return {}

    def show(self, rows) -> int:
        columns = ["task", "method", "noise_ratio", "seed", "metric_name", "metric", "status"]
        self.msg(rows[columns].to_string(index=False))
        self.msg(f"Results appended to {os.path.join(self.config.output_dir, experiment.RESULTS_FILE)}")
        return 0 if (rows["status"] == "ok").all() else 1


class CmdRun(ConfigCommand):
    """
    Train and evaluate one method over the config's noise ratios and seeds.

    Usage:
      run [--config <file>] [--override key=value ...] [--out <dir>]

    Each (ratio, seed) trains in its own run directory and adds one row to
    <out>/results.csv. A failing run is recorded and the others continue;
    the exit code is 1 if any run failed.

    """

    key = "run"

    def func(self):
        return self.show(experiment.run(self.config))


class CmdSweep(ConfigCommand):
    """
    Sweep methods x noise ratios x seeds.

    Usage:
      sweep [--ratios 0,0.1,...,0.6] [--seeds 1,2,3] [--methods cel,focal,svae]
            [--task multilabel|segmentation] [--config <file>] [--override ...]

    Methods accept the aliases cel, focal and svae.

    """

    key = "sweep"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--ratios", help="comma-separated noise ratios in [0, 0.6]")
        parser.add_argument("--seeds", help="comma-separated seeds")
        parser.add_argument("--methods", default="cel,focal,svae", help="comma-separated methods")
        parser.add_argument("--task", choices=[task.value for task in Task])

    def extra_changes(self):
        opts = self.opts
        changes = {}
        if opts.ratios:
            changes["noise_ratios"] = _floats(opts.ratios)
        if opts.seeds:
            changes["seeds"] = _ints(opts.seeds)
        if opts.task:
            changes["task"] = Task(opts.task)
        return changes

    def parse(self):
        super().parse()
        self.methods = _methods(self.opts.methods)
        if not self.methods:
            raise ConfigError("No methods to sweep.")

    def func(self):
        return self.show(experiment.sweep(self.config, self.methods))


class CmdAudit(Command):
    """
    Rank the training samples of a run by their importance weights.

    Usage:
      audit --run-dir <dir> [--k 10]

    Samples are ordered by mean weight over the last K epochs, lowest first,
    ties by sample id. When the run knew its noise flags, precision at the
    number of flagged samples is printed. The ranking goes to audit.csv.

    """

    key = "audit"

    def add_arguments(self, parser):
        parser.add_argument("--run-dir", required=True, help="run directory holding weights.csv")
        parser.add_argument("--k", type=int, default=10, help="final epochs to average over")
        parser.add_argument("--top", type=int, default=10, help="lowest-weight samples to show")

    def func(self):
        result = audit(self.opts.run_dir, self.opts.k)
        self.msg(result.summary())
        self.msg(result.ranking.head(self.opts.top).to_string(index=False))
        return 0


class CmdReport(Command):
    """
    Summarize result rows as metric-vs-noise-ratio tables.

    Usage:
      report --in <results.csv> --out <dir>

    Writes summary.txt (mean +/- population std over seeds per task, method
    and ratio), summary.csv and one series_<task>.csv per task.

    """

    key = "report"

    def add_arguments(self, parser):
        parser.add_argument("--in", dest="rows", required=True, help="results.csv to summarize")
        parser.add_argument("--out", required=True, help="directory for the report files")

    def func(self):
        experiment.report(self.opts.rows, self.opts.out)
        with open(os.path.join(self.opts.out, "summary.txt"), encoding="utf-8") as summary:
            self.msg(summary.read().rstrip())
        return 0
