"""
Per-sample losses. Every function returns a Tensor of shape (B,), one scalar
per sample; segmentation losses are pixel means.

The SVAE objective is the sum of a feature reconstruction term, the task loss
of psi_svae and the Gaussian KL penalty:

    L_SVAE = MSE(f_hat, f) + L(y_hat_svae, y) + 1/2 sum_j (mu^2 + sigma^2 - log sigma^2 - 1)

"""

import numpy as np

from autograd.tensor import ShapeError, Tensor, as_tensor

from .enums import KlSign, Task


class LossError(ValueError):
    pass


def _per_sample_mean(values: Tensor) -> Tensor:
    """
    Mean over every axis but the first.

    """
    if values.ndim == 1:
        return values
    return values.reshape(values.shape[0], -1).mean(axis=1)


def _binary_targets(logits: Tensor, targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError(f"Targets of shape {targets.shape} do not match logits {logits.shape}.")
    if not np.isin(targets, (0.0, 1.0)).all():
        raise LossError("Multi-label targets must be 0 or 1.")
    return targets


def _class_targets(logits: Tensor, targets) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"Targets of shape {targets.shape} do not match logits {logits.shape}.")
    num_classes = logits.shape[-1]
    if not np.issubdtype(targets.dtype, np.integer):
        if not np.equal(np.mod(targets, 1), 0).all():
            raise LossError("Class targets must be integers.")
        targets = targets.astype(np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= num_classes):
        raise LossError(f"Class targets must lie in [0, {num_classes}).")
    return np.eye(num_classes)[targets]


def _log_pt(logits: Tensor, targets: np.ndarray) -> Tensor:
    """
    log p_t = y log sigmoid(x) + (1 - y) log sigmoid(-x).

    """
    return targets * logits.log_sigmoid() + (1.0 - targets) * (-logits).log_sigmoid()


def bce_multilabel(logits: Tensor, targets) -> Tensor:
    """
    Binary cross entropy, averaged over classes per sample.

    Raises:
        LossError: If a target is not 0 or 1.

    """
    logits = as_tensor(logits)
    targets = _binary_targets(logits, targets)
    return _per_sample_mean(-_log_pt(logits, targets))


def focal_multilabel(logits: Tensor, targets, gamma: float) -> Tensor:
    """
    Sigmoid focal loss -(1 - p_t)^gamma log p_t, averaged over classes.
    With gamma == 0 this is exactly `bce_multilabel`.

    """
    if gamma < 0:
        raise LossError(f"Focal gamma must be non-negative, got {gamma}.")
    logits = as_tensor(logits)
    targets = _binary_targets(logits, targets)
    probs = logits.sigmoid()
    p_t = probs * targets + (1.0 - probs) * (1.0 - targets)
    modulation = (1.0 - p_t) ** gamma
    return _per_sample_mean(-(modulation * _log_pt(logits, targets)))


def ce_pixelwise(logits: Tensor, targets) -> Tensor:
    """
    Categorical cross entropy per pixel, pixel mean per sample.

    Args:
        logits (Tensor): B x P x C.
        targets (array): B x P class indices.

    """
    logits = as_tensor(logits)
    one_hot = _class_targets(logits, targets)
    log_pt = (logits.log_softmax() * one_hot).sum(axis=-1)
    return _per_sample_mean(-log_pt)


def focal_pixelwise(logits: Tensor, targets, gamma: float) -> Tensor:
    if gamma < 0:
        raise LossError(f"Focal gamma must be non-negative, got {gamma}.")
    logits = as_tensor(logits)
    one_hot = _class_targets(logits, targets)
    log_pt = (logits.log_softmax() * one_hot).sum(axis=-1)
    modulation = (1.0 - log_pt.exp()) ** gamma
    return _per_sample_mean(-(modulation * log_pt))


def task_loss(task: Task, logits: Tensor, targets, focal_gamma: float | None = None) -> Tensor:
    """
    The task loss L: cross entropy, or focal loss when a gamma is given.

    """
    if task is Task.SEGMENTATION:
        if focal_gamma is None:
            return ce_pixelwise(logits, targets)
        return focal_pixelwise(logits, targets, focal_gamma)
    if focal_gamma is None:
        return bce_multilabel(logits, targets)
    return focal_multilabel(logits, targets, focal_gamma)


def mse_features(reconstruction: Tensor, features) -> Tensor:
    """
    Mean squared reconstruction error per sample. The target features are a
    constant: no gradient flows into them.

    """
    reconstruction = as_tensor(reconstruction)
    target = np.asarray(getattr(features, "data", features), dtype=np.float64)
    if target.shape != reconstruction.shape:
        raise ShapeError(
            f"mse_features: reconstruction {reconstruction.shape} vs features {target.shape}"
        )
    diff = reconstruction - target
    return _per_sample_mean(diff * diff)


def kl_gaussian(mu: Tensor, logvar: Tensor, sign: KlSign = KlSign.STANDARD) -> Tensor:
    """
    KL(N(mu, sigma^2) || N(0, I)) summed over the latent axis, pixel mean per
    sample for per-pixel latents. Always >= 0 under the standard sign.

    Args:
        mu (Tensor): ... x J means.
        logvar (Tensor): ... x J log variances.
        sign (KlSign, optional): LITERAL returns the negated term.

    """
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl_gaussian: mu {mu.shape} vs logvar {logvar.shape}")
    if not (np.isfinite(mu.data).all() and np.isfinite(logvar.data).all()):
        raise LossError("kl_gaussian needs finite inputs.")
    if sign is KlSign.LITERAL:
        term = 1.0 + logvar - mu * mu - logvar.exp()
    else:
        term = mu * mu + logvar.exp() - logvar - 1.0
    return _per_sample_mean(0.5 * term.sum(axis=-1))


def svae_loss(mse: Tensor, task: Tensor, kl: Tensor, weights: tuple = (1.0, 1.0, 1.0)) -> Tensor:
    """
    Sum the three per-sample parts of L_SVAE.

    Args:
        weights (tuple, optional): Coefficients for (mse, task, kl).

    Raises:
        LossError: If the parts disagree in length.

    """
    parts = [as_tensor(mse), as_tensor(task), as_tensor(kl)]
    lengths = {part.shape for part in parts}
    if len(lengths) != 1 or parts[0].ndim != 1:
        raise LossError(f"SVAE loss parts must be equal-length vectors, got {sorted(lengths)}.")
    total = parts[0] if weights[0] == 1.0 else weights[0] * parts[0]
    for coefficient, part in zip(weights[1:], parts[1:]):
        total = total + (part if coefficient == 1.0 else coefficient * part)
    return total
