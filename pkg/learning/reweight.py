"""
Importance reweighting.

Each mini-batch yields two per-sample loss vectors: L from the main head and
L_SVAE from the SVAE branch. Both are min-max rescaled within the batch, the
clamped gap d = max(R(L) - R(L_SVAE), 0) marks samples the main head finds
much harder than the SVAE does, and the weight

    w = 1 - alpha * d / max(d)

scales their contribution to both objectives. alpha decays exponentially from
1 towards a floor over the course of training.

Weights are plain arrays: no gradient flows through them.

"""

import math
from dataclasses import dataclass

import numpy as np

from .enums import AlphaGranularity


class ReweightError(ValueError):
    pass


def _as_vector(values, name: str) -> np.ndarray:
    vector = np.asarray(getattr(values, "data", values), dtype=np.float64)
    if vector.ndim != 1:
        raise ReweightError(f"{name} must be a vector, got shape {vector.shape}.")
    if vector.size == 0:
        raise ReweightError(f"{name} is empty.")
    if not np.isfinite(vector).all():
        raise ReweightError(f"{name} holds non-finite values.")
    return vector


def minmax_rescale(values) -> np.ndarray:
    """
    Map a vector affinely onto [0, 1].

    Args:
        values (array or Tensor): B finite scalars, B >= 1.

    Returns:
        ndarray: (v - min) / (max - min), or all zeros when max == min.

    Raises:
        ReweightError: On an empty or non-finite vector.

    """
    vector = _as_vector(values, "minmax_rescale input")
    low, high = vector.min(), vector.max()
    if high == low:
        return np.zeros_like(vector)
    return (vector - low) / (high - low)


def loss_gap(main_losses, svae_losses) -> np.ndarray:
    """
    d = max(R(L) - R(L_SVAE), 0), each rescaled within its own batch vector.

    """
    main = _as_vector(main_losses, "main losses")
    svae = _as_vector(svae_losses, "SVAE losses")
    if main.shape != svae.shape:
        raise ReweightError(f"Loss vectors differ in length: {main.size} vs {svae.size}.")
    return np.maximum(minmax_rescale(main) - minmax_rescale(svae), 0.0)


def importance_weights(gaps, alpha: float) -> np.ndarray:
    """
    w = 1 - alpha * d / max(d); all ones when max(d) == 0.

    Raises:
        ReweightError: If alpha is outside [0, 1] or a gap is negative.

    """
    if not 0.0 <= alpha <= 1.0:
        raise ReweightError(f"alpha must lie in [0, 1], got {alpha}.")
    gaps = _as_vector(gaps, "gaps")
    if (gaps < 0).any():
        raise ReweightError("Loss gaps must be non-negative.")
    d_max = gaps.max()
    if d_max == 0:
        return np.ones_like(gaps)
    return 1.0 - alpha * (gaps / d_max)


@dataclass
class BatchWeights:
    """
    Everything the weighting of one batch was derived from.

    """

    main_losses: np.ndarray
    svae_losses: np.ndarray
    main_rescaled: np.ndarray
    svae_rescaled: np.ndarray
    gaps: np.ndarray
    weights: np.ndarray
    d_max: float
    alpha: float

    def __len__(self):
        return self.weights.size


def compute_batch_weights(main_losses, svae_losses, alpha: float) -> BatchWeights:
    main = _as_vector(main_losses, "main losses")
    svae = _as_vector(svae_losses, "SVAE losses")
    gaps = loss_gap(main, svae)
    return BatchWeights(
        main_losses=main,
        svae_losses=svae,
        main_rescaled=minmax_rescale(main),
        svae_rescaled=minmax_rescale(svae),
        gaps=gaps,
        weights=importance_weights(gaps, alpha),
        d_max=float(gaps.max()),
        alpha=float(alpha),
    )


def uniform_batch_weights(main_losses) -> BatchWeights:
    """
    The record for a step without reweighting: every weight is 1 and alpha 0.

    """
    main = _as_vector(main_losses, "main losses")
    zeros = np.zeros_like(main)
    return BatchWeights(
        main_losses=main,
        svae_losses=zeros,
        main_rescaled=minmax_rescale(main),
        svae_rescaled=zeros,
        gaps=zeros,
        weights=np.ones_like(main),
        d_max=0.0,
        alpha=0.0,
    )


@dataclass(frozen=True)
class AlphaSchedule:
    """
    alpha(e) = exp(-k e) with k = -ln(floor) / E, so alpha(0) = 1 and
    alpha(E) = floor. With step granularity e advances by 1/steps_per_epoch
    per step; with epoch granularity it holds for the whole epoch.

    """

    total_epochs: int
    floor: float = 0.01
    granularity: AlphaGranularity = AlphaGranularity.EPOCH
    steps_per_epoch: int = 1
    override: float | None = None

    def __post_init__(self):
        if self.total_epochs < 0:
            raise ReweightError(f"total_epochs must be >= 0, got {self.total_epochs}.")
        if not 0.0 < self.floor < 1.0:
            raise ReweightError(f"alpha floor must lie in (0, 1), got {self.floor}.")
        if self.steps_per_epoch < 1:
            raise ReweightError("steps_per_epoch must be >= 1.")
        if self.override is not None and not 0.0 <= self.override <= 1.0:
            raise ReweightError(f"alpha override must lie in [0, 1], got {self.override}.")

    @property
    def decay_rate(self) -> float:
        if self.total_epochs == 0:
            return 0.0
        return -math.log(self.floor) / self.total_epochs

    def at(self, epoch: int, step: int = 0) -> float:
        """
        alpha for a (0-based) epoch and a step within it.

        """
        if self.override is not None:
            return float(self.override)
        position = float(epoch)
        if self.granularity is AlphaGranularity.STEP:
            position += step / self.steps_per_epoch
        return math.exp(-self.decay_rate * min(position, self.total_epochs))


def alpha_at(epoch: int, sched: AlphaSchedule) -> float:
    """
    alpha at the start of an epoch.

    Raises:
        ReweightError: If epoch is outside [0, E].

    """
    if not 0 <= epoch <= sched.total_epochs:
        raise ReweightError(f"Epoch {epoch} is outside [0, {sched.total_epochs}].")
    return sched.at(epoch)
