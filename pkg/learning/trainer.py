"""
The dual-objective training loop.

Each step runs one shared forward pass:

    1. forward_main: x -> f -> y_hat
    2. forward_svae on the (stop-gradient) features
    3. per-sample L and L_SVAE
    4. loss gap d and weights w at the current alpha
    5. objectives mean(w * L) and mean(w * L_SVAE)
    6. backward each into its own parameter set
    7. one Adam step per set

Baselines take the same path with w = 1 and no branch. The trainer never sees
noise flags; an optional observer (see `learning.audit.WeightAudit`) receives
every batch's weights with the sample ids and reports per-epoch summaries.

"""

import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from autograd.optim import AdamState, adam_step
from autograd.tensor import DomainError, Tensor, backward
from models.checkpoint import save_checkpoint
from models.svae import ArchitectureError, DivergenceError, Network, init_params

from .config import ExperimentConfig
from .datagen import Dataset, DatasetError, Splits, TrainingView
from .enums import Stream, Task
from .losses import kl_gaussian, mse_features, svae_loss, task_loss
from .metrics import binarize, headline_metric, score
from .reweight import AlphaSchedule, BatchWeights, compute_batch_weights, uniform_batch_weights
from .utils import append_rows, derive_rng

_log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """
    A step produced non-finite values. `dump_path` names the diagnostic file.

    """

    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path


class RoutingError(AssertionError):
    pass


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray

    def __len__(self):
        return len(self.features)


@dataclass
class TrainState:
    """
    Mutable state of one run. The two optimizers cover disjoint parameter sets.

    """

    main_optimizer: AdamState
    svae_optimizer: AdamState | None
    schedule: AlphaSchedule
    rng: np.random.Generator
    shuffle_rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    best_epoch: int = -1
    best_metric: float = -math.inf
    best_state: dict | None = None
    checkpoint: str | None = None


@dataclass
class StepResult:
    weights: BatchWeights
    sample_ids: np.ndarray
    main_loss: float
    weighted_main_loss: float
    svae_loss: float | None = None
    weighted_svae_loss: float | None = None


@dataclass
class EpochReport:
    epoch: int
    alpha: float
    main_loss: float
    weighted_main_loss: float
    svae_loss: float | None
    weighted_svae_loss: float | None
    val_metric: float
    mean_weight_noisy: float | None = None
    mean_weight_clean: float | None = None

    def as_row(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    network: Network
    metric_name: str
    best_epoch: int
    val_metric: float
    test_metrics: dict
    reports: list = field(default_factory=list)

    @property
    def metric(self) -> float:
        return self.test_metrics[self.metric_name]


def evaluate(network: Network, data: Dataset | TrainingView, task: Task) -> dict:
    """
    Score a network on a split: micro and macro F1 at threshold 0.5, or overall
    pixel accuracy.

    Raises:
        ArchitectureError: If the network was built for another task.

    """
    if network.task is not task or data.task is not task:
        raise ArchitectureError(f"Cannot evaluate a {network.task.value} network on {task.value} data.")
    predictions = network.predict(data.features)
    if task is Task.MULTILABEL:
        predictions = binarize(predictions)
    return score(task, data.labels, predictions)


class Trainer:
    """
    Owns the network and the training state of one run.

    Args:
        config (ExperimentConfig): Single-run config (one ratio, one seed).
        network (Network): Built by `init_params` for the same config.
        observer (WeightAudit, optional): Receives every step's weights.
        run_dir (str, optional): Where epoch reports, checkpoints and abort
            dumps are written. Nothing is written without it.

    """

    def __init__(self, config: ExperimentConfig, network: Network, observer=None, run_dir: str | None = None):
        self.config = config
        self.network = network
        self.observer = observer
        self.run_dir = run_dir
        self.uses_svae = network.branch is not None
        seed = config.seed
        self.state = TrainState(
            main_optimizer=self._optimizer(),
            svae_optimizer=self._optimizer() if self.uses_svae else None,
            schedule=AlphaSchedule(
                total_epochs=config.epochs,
                floor=config.alpha_floor,
                granularity=config.alpha_granularity,
                override=config.alpha_override,
            ),
            rng=derive_rng(seed, Stream.EPSILON),
            shuffle_rng=derive_rng(seed, Stream.SHUFFLE),
        )

    def _optimizer(self) -> AdamState:
        config = self.config
        return AdamState(lr=config.learning_rate, beta1=config.adam_beta1,
                         beta2=config.adam_beta2, eps=config.adam_eps)

    @property
    def task(self) -> Task:
        return self.network.task

    def alpha(self, step_in_epoch: int = 0) -> float:
        if not self.uses_svae:
            return 0.0
        return self.state.schedule.at(self.state.epoch, step_in_epoch)

    # losses

    def _main_losses(self, batch: Batch):
        features, logits = self.network.forward_main(batch.features)
        losses = task_loss(self.task, logits, batch.labels, self.config.focal_gamma_or_none)
        return features, logits, losses

    def _svae_losses(self, batch: Batch, features: Tensor, logits: Tensor, rng: np.random.Generator) -> Tensor:
        branch = self.network.forward_svae(features, rng, logits=logits)
        return svae_loss(
            mse_features(branch.reconstruction, branch.features),
            task_loss(self.task, branch.svae_logits, batch.labels),
            kl_gaussian(branch.mu, branch.logvar, self.config.kl_sign),
            self.config.svae_loss_weights,
        )

    # steps

    def train_step(self, batch: Batch, step_in_epoch: int = 0) -> StepResult:
        """
        One reweighted update of both parameter sets.

        Raises:
            DatasetError: On an empty batch.
            TrainingAborted: If any value stops being finite. A dump file is
                written first.

        """
        if len(batch) == 0:
            raise DatasetError("Cannot train on an empty batch.")
        alpha = self.alpha(step_in_epoch)
        if self.config.probe_routing and self.uses_svae:
            self.probe_routing(batch)

        try:
            features, logits, main_losses = self._main_losses(batch)
            svae_losses = None
            if self.uses_svae:
                svae_losses = self._svae_losses(batch, features, logits, self.state.rng)
                weights = compute_batch_weights(main_losses, svae_losses, alpha)
            else:
                weights = uniform_batch_weights(main_losses)

            main_objective = (main_losses * weights.weights).mean()
            svae_objective = None
            if svae_losses is None:
                backward(main_objective)
            else:
                svae_objective = (svae_losses * weights.weights).mean()
                if self.network.branch.isolate:
                    backward(main_objective)
                    backward(svae_objective)
                else:
                    # the branch shares the encoder's graph: one pass over both
                    backward(main_objective + svae_objective)

            adam_step(self.network.main_parameters().values(), self.state.main_optimizer)
            if self.uses_svae:
                adam_step(self.network.svae_parameters().values(), self.state.svae_optimizer)
        except (DomainError, DivergenceError) as err:
            path = self._write_abort_dump(batch, alpha, step_in_epoch, err)
            _log.error(f"Training diverged at epoch {self.state.epoch} step {step_in_epoch}: {err}")
            raise TrainingAborted(f"Training diverged: {err}", dump_path=path) from err

        self.state.step += 1
        result = StepResult(
            weights=weights,
            sample_ids=batch.sample_ids,
            main_loss=float(weights.main_losses.mean()),
            weighted_main_loss=main_objective.item(),
        )
        if svae_objective is not None:
            result.svae_loss = float(weights.svae_losses.mean())
            result.weighted_svae_loss = svae_objective.item()
        if self.observer is not None:
            self.observer.record(self.state.epoch + 1, step_in_epoch, batch.sample_ids, weights)
        return result

    def probe_routing(self, batch: Batch):
        """
        Check that L reaches no SVAE parameter and L_SVAE no encoder or task
        head parameter. Draws epsilon from a throwaway generator and leaves
        every gradient at zero.

        Raises:
            RoutingError: On any non-zero crossing gradient.

        """
        main_params = self.network.main_parameters()
        svae_params = self.network.svae_parameters()
        probe_rng = np.random.default_rng((self.config.seed, self.state.step))

        def crossing(params: dict) -> list:
            return [name for name, param in params.items() if np.any(param.grad != 0)]

        def clear():
            for param in self.network.parameters().values():
                param.zero_grad()

        _, _, main_losses = self._main_losses(batch)
        backward(main_losses.mean())
        leaked = crossing(svae_params)
        clear()
        if leaked:
            raise RoutingError(f"L produced gradients on SVAE parameters: {leaked}")

        features, logits, _ = self._main_losses(batch)
        backward(self._svae_losses(batch, features, logits, probe_rng).mean())
        leaked = crossing(main_params)
        clear()
        if leaked:
            raise RoutingError(f"L_SVAE produced gradients on main parameters: {leaked}")

    def _write_abort_dump(self, batch: Batch, alpha: float, step_in_epoch: int, err: Exception) -> str:
        directory = self.run_dir or tempfile.gettempdir()
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, f"abort_epoch{self.state.epoch}_step{step_in_epoch}.txt")
        lines = [
            f"error: {err}",
            f"epoch: {self.state.epoch}",
            f"step: {step_in_epoch}",
            f"global_step: {self.state.step}",
            f"alpha: {alpha!r}",
            f"batch_ids: {' '.join(str(i) for i in batch.sample_ids)}",
            "parameter norms:",
        ]
        with np.errstate(all="ignore"):
            for name, param in self.network.parameters().items():
                lines.append(f"  {name}\t{np.linalg.norm(param.data)!r}\t{np.linalg.norm(param.grad)!r}")
        with open(path, "w", encoding="utf-8") as dump:
            dump.write("\n".join(lines) + "\n")
        return path

    # epochs

    def batches(self, data: TrainingView):
        order = self.state.shuffle_rng.permutation(len(data))
        for start in range(0, len(order), self.config.batch_size):
            index = order[start:start + self.config.batch_size]
            yield Batch(data.features[index], data.labels[index], data.sample_ids[index])

    def run_epoch(self, data: TrainingView) -> EpochReport:
        """
        One pass over the training view in a fresh random order. The report's
        validation metric is filled in by `fit`.

        """
        totals = dict(main_loss=0.0, weighted_main_loss=0.0, svae_loss=0.0, weighted_svae_loss=0.0)
        alpha = self.alpha(0)
        for step_in_epoch, batch in enumerate(self.batches(data)):
            result = self.train_step(batch, step_in_epoch)
            for key in totals:
                value = getattr(result, key)
                if value is not None:
                    totals[key] += value * len(batch)

        means = {key: value / len(data) for key, value in totals.items()}
        if not self.uses_svae:
            means["svae_loss"] = means["weighted_svae_loss"] = None
        self.state.epoch += 1
        report = EpochReport(epoch=self.state.epoch, alpha=alpha, val_metric=math.nan, **means)
        if self.observer is not None:
            summary = self.observer.end_epoch(self.state.epoch)
            report.mean_weight_noisy = summary.get("mean_weight_noisy")
            report.mean_weight_clean = summary.get("mean_weight_clean")
        return report

    def _consider(self, epoch: int, val_metric: float):
        if val_metric > self.state.best_metric:
            self.state.best_metric = val_metric
            self.state.best_epoch = epoch
            self.state.best_state = self.network.snapshot()

    def fit(self, train_data: TrainingView, validation: Dataset) -> list[EpochReport]:
        """
        Train for the configured epochs, keeping the parameters with the best
        validation metric. With zero epochs the initial network is the best.

        """
        metric_name = headline_metric(self.task)
        reports = []
        steps = max(1, math.ceil(len(train_data) / self.config.batch_size))
        self.state.schedule = replace(self.state.schedule, steps_per_epoch=steps)
        if self.config.epochs == 0:
            self._consider(0, evaluate(self.network, validation, self.task)[metric_name])

        for _ in range(self.config.epochs):
            report = self.run_epoch(train_data)
            report.val_metric = evaluate(self.network, validation, self.task)[metric_name]
            self._consider(report.epoch, report.val_metric)
            reports.append(report)
            _log.debug(
                f"epoch {report.epoch}: alpha={report.alpha:.4f} L={report.main_loss:.4f} "
                f"val {metric_name}={report.val_metric:.4f}"
            )
            if self.run_dir:
                append_rows(os.path.join(self.run_dir, "epochs.csv"), [report.as_row()])

        self.network.load_state(self.state.best_state)
        if self.run_dir and self.config.save_checkpoints:
            self.state.checkpoint = os.path.join(self.run_dir, "best")
            save_checkpoint(self.state.checkpoint, self.state.best_state)
        _log.info(f"Selected epoch {self.state.best_epoch} with validation "
                  f"{metric_name}={self.state.best_metric:.4f}")
        return reports


def train_step(batch: Batch, trainer: Trainer, step_in_epoch: int = 0) -> StepResult:
    return trainer.train_step(batch, step_in_epoch)


def train(config: ExperimentConfig, data: Splits, run_dir: str | None = None, observer=None) -> TrainResult:
    """
    Train one run and evaluate the selected parameters once on the test split.

    Args:
        config (ExperimentConfig): Single-run config.
        data (Splits): Train split (possibly noisy), clean validation and test
            splits. Only the flag-free view of the train split is used.
        run_dir (str, optional): Artifact directory.
        observer (optional): Weight observer, see `Trainer`.

    Raises:
        DatasetError: If any split is empty.
        TrainingAborted: If training diverged.

    """
    for name in ("train", "validation", "test"):
        if len(getattr(data, name)) == 0:
            raise DatasetError(f"The {name} split is empty.")
    train_view = data.train.training_view()
    architecture = config.architecture(input_dim=train_view.num_features, num_classes=train_view.num_classes)
    network = init_params(architecture, config.seed)

    trainer = Trainer(config, network, observer=observer, run_dir=run_dir)
    reports = trainer.fit(train_view, data.validation)
    metric_name = headline_metric(config.task)
    return TrainResult(
        network=network,
        metric_name=metric_name,
        best_epoch=trainer.state.best_epoch,
        val_metric=trainer.state.best_metric,
        test_metrics=evaluate(network, data.test, config.task),
        reports=reports,
    )
