"""
Sample-level weight audit.

`WeightAudit` observes training: it receives each batch's weights with sample
ids, owns the hidden noise flags, and appends one row per sample and step to
`weights.csv`:

    epoch, batch, sample_id, main_loss, svae_loss, gap, weight, is_noisy

`audit` reads such a log back and ranks samples by their mean weight over the
last K epochs. Low-weight samples are the label-noise suspects; when flags
were known, precision at the number of flagged samples scores the ranking.

"""

import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .reweight import BatchWeights

_log = logging.getLogger(__name__)

WEIGHTS_FILE = "weights.csv"
AUDIT_FILE = "audit.csv"


class AuditError(ValueError):
    pass


class WeightAudit:
    """
    Args:
        flags (Series, optional): Noise flags indexed by sample id.
        path (str, optional): CSV log to append to; nothing is written without.

    """

    def __init__(self, flags: pd.Series | None = None, path: str | None = None):
        self.flags = flags
        self.path = path
        self._pending = []
        self._epoch_means = {}

    def record(self, epoch: int, step: int, sample_ids, weights: BatchWeights):
        ids = np.asarray(sample_ids, dtype=np.int64)
        frame = pd.DataFrame({
            "epoch": epoch,
            "batch": step,
            "sample_id": ids,
            "main_loss": weights.main_losses,
            "svae_loss": weights.svae_losses,
            "gap": weights.gaps,
            "weight": weights.weights,
        })
        if self.flags is not None:
            frame["is_noisy"] = self.flags.reindex(ids).to_numpy(dtype=bool)
        else:
            frame["is_noisy"] = pd.NA
        self._pending.append(frame)

    def end_epoch(self, epoch: int) -> dict:
        """
        Flush the epoch's rows and summarize its weights.

        Returns:
            dict: mean_weight_noisy (None without noisy samples) and
                mean_weight_clean.

        """
        if not self._pending:
            return {"mean_weight_noisy": None, "mean_weight_clean": None}
        frame = pd.concat(self._pending, ignore_index=True)
        self._pending = []
        if self.path:
            exists = os.path.exists(self.path) and os.path.getsize(self.path) > 0
            frame.to_csv(self.path, mode="a", header=not exists, index=False)
        self._epoch_means[epoch] = frame.groupby("sample_id")["weight"].mean()
        return self._split_means(self._epoch_means[epoch])

    def _split_means(self, per_sample: pd.Series) -> dict:
        if self.flags is None:
            return {"mean_weight_noisy": None, "mean_weight_clean": float(per_sample.mean())}
        noisy = self.flags.reindex(per_sample.index).fillna(False).astype(bool)
        return {
            "mean_weight_noisy": float(per_sample[noisy].mean()) if noisy.any() else None,
            "mean_weight_clean": float(per_sample[~noisy].mean()) if (~noisy).any() else None,
        }

    def summary(self, last_k: int) -> dict:
        """
        Noisy and clean mean weights over the last K recorded epochs.

        """
        if not self._epoch_means:
            return {"mean_weight_noisy": None, "mean_weight_clean": None}
        epochs = sorted(self._epoch_means)[-last_k:]
        per_sample = pd.concat([self._epoch_means[e] for e in epochs]).groupby(level=0).mean()
        return self._split_means(per_sample)


@dataclass
class AuditReport:
    """
    Samples ranked by ascending mean weight, ties broken by sample id.

    """

    ranking: pd.DataFrame
    last_k: int
    n_flagged: int | None
    precision: float | None

    def summary(self) -> str:
        lines = [f"Ranked {len(self.ranking)} samples by mean weight over the last {self.last_k} epochs."]
        if self.precision is None:
            lines.append("No noisy samples are flagged: precision is undefined.")
        else:
            lines.append(f"precision@{self.n_flagged}: {self.precision:.4f}")
        return "\n".join(lines)


def rank_samples(log: pd.DataFrame, last_k: int = 10) -> AuditReport:
    """
    Rank the samples of a weight log.

    Args:
        log (DataFrame): Rows as written by `WeightAudit`.
        last_k (int): Number of final epochs to average over.

    Raises:
        AuditError: If the log is empty or K is not positive.

    """
    if last_k < 1:
        raise AuditError(f"K must be positive, got {last_k}.")
    if log.empty:
        raise AuditError("The weight log is empty.")
    epochs = np.sort(log["epoch"].unique())[-last_k:]
    recent = log[log["epoch"].isin(epochs)]

    ranking = recent.groupby("sample_id").agg(mean_weight=("weight", "mean"), mean_gap=("gap", "mean"))
    flags = recent.groupby("sample_id")["is_noisy"].first() if "is_noisy" in recent else None
    ranking = ranking.reset_index().sort_values(["mean_weight", "sample_id"], kind="mergesort")
    ranking.insert(0, "rank", np.arange(1, len(ranking) + 1))

    n_flagged = precision = None
    if flags is not None and flags.notna().all():
        flagged = flags.astype(str).str.lower().isin(("true", "1")).reindex(ranking["sample_id"])
        ranking["is_noisy"] = flagged.to_numpy()
        n_flagged = int(flagged.sum())
        if n_flagged:
            precision = float(flagged.iloc[:n_flagged].mean())
    return AuditReport(ranking=ranking.reset_index(drop=True), last_k=len(epochs), n_flagged=n_flagged,
                       precision=precision)


def audit(run_dir: str, last_k: int = 10) -> AuditReport:
    """
    Rank the samples of a finished run and write `audit.csv` next to its log.

    Raises:
        AuditError: If the run has no weight log.

    """
    path = os.path.join(run_dir, WEIGHTS_FILE)
    if not os.path.exists(path):
        raise AuditError(f"No weight log at {path}; run svae-reweight with audit_weights enabled.")
    report = rank_samples(pd.read_csv(path), last_k)
    report.ranking.to_csv(os.path.join(run_dir, AUDIT_FILE), index=False)
    _log.info(f"Audited {path}: {report.summary()}")
    return report
