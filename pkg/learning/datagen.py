"""
Synthetic benchmark data, label-noise injection and splits.

Multi-label samples are Gaussian blobs around C class centers; a sample is
positive for every center within a shared radius, and always for its nearest
one. Segmentation images are Voronoi region maps over a few random seeds, each
region painted with its class's channel signature plus Gaussian noise.

Noise flags travel with a dataset but never reach training: the trainer only
sees a `TrainingView`.

"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import ClassVar

import numpy as np
import pandas as pd

from .enums import NoiseMode, Stream, Task
from .utils import derive_rng

_log = logging.getLogger(__name__)

MAX_NOISE_RATIO = 0.6
CENTER_SCALE = 2.0
# expected positives per sample before the nearest-center rule
MEAN_CARDINALITY = 1.6
SIGNATURE_SCALE = 1.5
MAX_REGION_SEEDS = 5

_MANIFEST_HEADER = "# svae-bench dataset v1"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    ratio: float
    mode: NoiseMode
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.ratio <= MAX_NOISE_RATIO:
            raise DatasetError(f"Noise ratio must lie in [0, {MAX_NOISE_RATIO}], got {self.ratio}.")


@dataclass(frozen=True)
class TrainingView:
    """
    What the trainer may read: inputs, (possibly corrupted) labels and ids.

    """

    task: Task
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    sample_ids: np.ndarray

    def __len__(self):
        return len(self.features)

    @property
    def num_features(self) -> int:
        return self.features.shape[-1]


@dataclass
class Dataset:
    """
    Features and labels of one task, with sample ids and hidden noise flags.

    """

    task: ClassVar[Task]

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    seed: int = 0
    sample_ids: np.ndarray | None = None
    is_noisy: np.ndarray | None = None
    noise: NoiseSpec | None = None

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise DatasetError(
                f"{len(self.features)} feature rows but {len(self.labels)} label rows."
            )
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.features), dtype=np.int64)
        if self.is_noisy is None:
            self.is_noisy = np.zeros(len(self.features), dtype=bool)
        self._check_labels()

    def _check_labels(self):
        pass

    def __len__(self):
        return len(self.features)

    @property
    def num_features(self) -> int:
        return self.features.shape[-1]

    @property
    def noise_fraction(self) -> float:
        return float(self.is_noisy.mean()) if len(self) else 0.0

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            features=self.features[indices],
            labels=self.labels[indices],
            sample_ids=self.sample_ids[indices],
            is_noisy=self.is_noisy[indices],
        )

    def training_view(self) -> TrainingView:
        return TrainingView(
            task=self.task,
            features=self.features,
            labels=self.labels,
            num_classes=self.num_classes,
            sample_ids=self.sample_ids,
        )

    def noise_flags(self) -> pd.Series:
        """
        The hidden flags, indexed by sample id.

        """
        return pd.Series(self.is_noisy, index=pd.Index(self.sample_ids, name="sample_id"), name="is_noisy")


@dataclass
class MultiLabelDataset(Dataset):
    task: ClassVar[Task] = Task.MULTILABEL

    def _check_labels(self):
        if self.labels.ndim != 2 or self.labels.shape[1] != self.num_classes:
            raise DatasetError(f"Multi-label labels must be N x {self.num_classes}, got {self.labels.shape}.")
        if not np.isin(self.labels, (0, 1)).all():
            raise DatasetError("Multi-label labels must be 0 or 1.")

    def label_cardinality(self) -> dict:
        """
        How many samples carry k positive labels, for every k seen.

        """
        counts = np.bincount(self.labels.sum(axis=1).astype(np.int64))
        return {k: int(n) for k, n in enumerate(counts) if n}


@dataclass
class SegmentationDataset(Dataset):
    task: ClassVar[Task] = Task.SEGMENTATION

    height: int = 1
    width: int = 1

    def _check_labels(self):
        pixels = self.height * self.width
        if self.labels.ndim != 2 or self.labels.shape[1] != pixels:
            raise DatasetError(f"Segmentation labels must be N x {pixels}, got {self.labels.shape}.")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"Pixel classes must lie in [0, {self.num_classes}).")

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels.reshape(-1), minlength=self.num_classes)


@dataclass(frozen=True)
class Splits:
    train: Dataset
    validation: Dataset
    test: Dataset


def _check_dims(**dims):
    for name, value in dims.items():
        if int(value) != value or value <= 0:
            raise DatasetError(f"{name} must be a positive integer, got {value}.")


def gen_multilabel(num_samples: int, num_features: int, num_classes: int, seed: int) -> MultiLabelDataset:
    """
    Generate the multi-label benchmark.

    Args:
        num_samples (int): N.
        num_features (int): F, width of each feature vector.
        num_classes (int): C.
        seed (int): Run seed; only the data stream is consumed.

    Returns:
        MultiLabelDataset: Every sample has at least one positive label.

    """
    _check_dims(num_samples=num_samples, num_features=num_features, num_classes=num_classes)
    rng = derive_rng(seed, Stream.DATA)
    centers = rng.standard_normal((num_classes, num_features)) * CENTER_SCALE
    assignment = rng.integers(num_classes, size=num_samples)
    features = centers[assignment] + rng.standard_normal((num_samples, num_features))

    distances = np.linalg.norm(features[:, None, :] - centers[None, :, :], axis=-1)
    radius = np.quantile(distances, min(MEAN_CARDINALITY / num_classes, 1.0))
    labels = (distances <= radius).astype(np.int64)
    labels[np.arange(num_samples), distances.argmin(axis=1)] = 1

    data = MultiLabelDataset(features=features, labels=labels, num_classes=num_classes, seed=seed)
    _log.info(f"Generated multi-label data N={num_samples} F={num_features} C={num_classes}, "
              f"label cardinality {data.label_cardinality()}")
    return data


def gen_segmentation(num_samples: int, height: int, width: int, num_channels: int,
                     num_classes: int, seed: int) -> SegmentationDataset:
    """
    Generate the segmentation benchmark. Features are N x (H*W) x F, labels
    N x (H*W).

    """
    _check_dims(num_samples=num_samples, height=height, width=width,
                num_channels=num_channels, num_classes=num_classes)
    if num_classes < 2:
        raise DatasetError("Segmentation needs at least two classes.")
    pixels = height * width
    if num_samples * pixels < num_classes:
        raise DatasetError(f"{num_samples * pixels} pixels cannot hold all {num_classes} classes.")

    rng = derive_rng(seed, Stream.DATA)
    signatures = rng.standard_normal((num_classes, num_channels)) * SIGNATURE_SCALE
    rows, cols = np.mgrid[0:height, 0:width]
    coords = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)

    labels = np.empty((num_samples, pixels), dtype=np.int64)
    for index in range(num_samples):
        num_seeds = min(pixels, int(rng.integers(2, MAX_REGION_SEEDS + 1)))
        seeds = rng.uniform((0.0, 0.0), (height, width), size=(num_seeds, 2))
        classes = rng.integers(num_classes, size=num_seeds)
        nearest = np.linalg.norm(coords[:, None, :] - seeds[None, :, :], axis=-1).argmin(axis=1)
        labels[index] = classes[nearest]

    # every class must occur somewhere: take pixels from the most common class
    flat = labels.reshape(-1)
    for missing in np.setdiff1d(np.arange(num_classes), flat):
        common = np.bincount(flat, minlength=num_classes).argmax()
        flat[np.flatnonzero(flat == common)[0]] = missing

    features = signatures[labels] + rng.standard_normal((num_samples, pixels, num_channels))
    data = SegmentationDataset(
        features=features, labels=labels, num_classes=num_classes, seed=seed,
        height=height, width=width,
    )
    _log.info(f"Generated segmentation data N={num_samples} {height}x{width}x{num_channels} "
              f"C={num_classes}, pixels per class {data.class_counts().tolist()}")
    return data


def _derangement(num_classes: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        perm = rng.permutation(num_classes)
        if (perm != np.arange(num_classes)).all():
            return perm


def inject_noise(data: Dataset, spec: NoiseSpec) -> Dataset:
    """
    Corrupt the labels of floor(ratio * N) uniformly chosen samples.

    multilabel-flip flips each label bit with probability 0.5, forcing one
    flip if none happened. segmentation-region remaps every pixel of an image
    through a random class permutation without fixed points.

    Returns:
        Dataset: A copy; features are shared, labels and flags are new.

    Raises:
        DatasetError: If the mode does not fit the data.

    """
    expected = NoiseMode.for_task(data.task)
    if spec.mode is not expected:
        raise DatasetError(f"Noise mode {spec.mode.value} does not apply to {data.task.value} data.")

    rng = derive_rng(spec.seed, Stream.NOISE)
    count = int(np.floor(spec.ratio * len(data) + 1e-9))
    chosen = np.sort(rng.choice(len(data), size=count, replace=False))
    labels = data.labels.copy()

    for index in chosen:
        if spec.mode is NoiseMode.MULTILABEL_FLIP:
            flips = rng.random(data.num_classes) < 0.5
            if not flips.any():
                flips[rng.integers(data.num_classes)] = True
            labels[index] = np.where(flips, 1 - labels[index], labels[index])
        else:
            labels[index] = _derangement(data.num_classes, rng)[labels[index]]

    flags = data.is_noisy.copy()
    flags[chosen] = True
    _log.debug(f"Injected {spec.mode.value} noise into {count} of {len(data)} samples")
    return replace(data, labels=labels, is_noisy=flags, noise=spec)


def split(data: Dataset, fractions=(0.52, 0.24, 0.24), seed: int = 0) -> Splits:
    """
    Shuffle once and cut into train / validation / test.

    Raises:
        DatasetError: If fractions are not three non-negative numbers summing to 1.

    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or (fractions < 0).any() or not np.isclose(fractions.sum(), 1.0):
        raise DatasetError(f"Split fractions must be three values summing to 1, got {fractions.tolist()}.")
    order = derive_rng(seed, Stream.SPLIT).permutation(len(data))
    bounds = np.rint(np.cumsum(fractions)[:-1] * len(data)).astype(np.int64)
    parts = [data.subset(np.sort(part)) for part in np.split(order, bounds)]
    return Splits(*parts)


def make_benchmark(task: Task, seed: int, noise_ratio: float, noise_mode: NoiseMode | None = None,
                   fractions=(0.52, 0.24, 0.24), **dims) -> Splits:
    """
    Generate, split and corrupt the training split only.

    Args:
        dims: `num_samples`, `num_features`, `num_classes` for multilabel;
            `num_samples`, `height`, `width`, `num_channels`, `num_classes`
            for segmentation.

    """
    if task is Task.SEGMENTATION:
        data = gen_segmentation(seed=seed, **dims)
    else:
        data = gen_multilabel(seed=seed, **dims)
    splits = split(data, fractions, seed)
    spec = NoiseSpec(noise_ratio, noise_mode or NoiseMode.for_task(task), seed)
    return replace(splits, train=inject_noise(splits.train, spec))


# Dataset files


def save_dataset(stem: str, data: Dataset):
    """
    Write `<stem>.manifest` plus raw blocks `<stem>.features.bin`
    (float64), `<stem>.labels.bin`, `<stem>.ids.bin` (int64) and
    `<stem>.flags.bin` (uint8), all little-endian.

    """
    meta = {
        "task": data.task.value,
        "num_samples": len(data),
        "num_classes": data.num_classes,
        "seed": data.seed,
        "feature_shape": ",".join(str(extent) for extent in data.features.shape),
        "label_shape": ",".join(str(extent) for extent in data.labels.shape),
        "height": getattr(data, "height", ""),
        "width": getattr(data, "width", ""),
        "noise_ratio": data.noise.ratio if data.noise else "",
        "noise_mode": data.noise.mode.value if data.noise else "",
        "noise_seed": data.noise.seed if data.noise else "",
    }
    directory = os.path.dirname(stem)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(f"{stem}.manifest", "w", encoding="utf-8") as manifest:
        manifest.write(_MANIFEST_HEADER + "\n")
        manifest.writelines(f"{key}\t{value}\n" for key, value in meta.items())
    data.features.astype("<f8").tofile(f"{stem}.features.bin")
    data.labels.astype("<i8").tofile(f"{stem}.labels.bin")
    data.sample_ids.astype("<i8").tofile(f"{stem}.ids.bin")
    data.is_noisy.astype("u1").tofile(f"{stem}.flags.bin")


def _shape(text: str) -> tuple:
    return tuple(int(extent) for extent in text.split(",") if extent)


def load_dataset(stem: str) -> Dataset:
    with open(f"{stem}.manifest", encoding="utf-8") as manifest:
        lines = manifest.read().splitlines()
    if not lines or lines[0] != _MANIFEST_HEADER:
        raise DatasetError(f"{stem}.manifest is not a dataset manifest.")
    meta = dict(line.split("\t", 1) for line in lines[1:] if line)

    try:
        task = Task(meta["task"])
        features = np.fromfile(f"{stem}.features.bin", dtype="<f8").reshape(_shape(meta["feature_shape"]))
        labels = np.fromfile(f"{stem}.labels.bin", dtype="<i8").reshape(_shape(meta["label_shape"]))
        ids = np.fromfile(f"{stem}.ids.bin", dtype="<i8")
        flags = np.fromfile(f"{stem}.flags.bin", dtype="u1").astype(bool)
    except (KeyError, ValueError) as err:
        raise DatasetError(f"Cannot read dataset {stem}: {err}") from err
    if not (len(ids) == len(flags) == len(features) == int(meta["num_samples"])):
        raise DatasetError(f"Blocks of dataset {stem} disagree in length.")

    noise = None
    if meta.get("noise_mode"):
        noise = NoiseSpec(float(meta["noise_ratio"]), NoiseMode(meta["noise_mode"]), int(meta["noise_seed"]))
    common = dict(
        features=features.astype(np.float64),
        labels=labels.astype(np.int64),
        num_classes=int(meta["num_classes"]),
        seed=int(meta["seed"]),
        sample_ids=ids.astype(np.int64),
        is_noisy=flags,
        noise=noise,
    )
    if task is Task.SEGMENTATION:
        return SegmentationDataset(height=int(meta["height"]), width=int(meta["width"]), **common)
    return MultiLabelDataset(**common)


def load_delimited(features_csv: str, labels_csv: str, task: Task, num_classes: int | None = None,
                   height: int | None = None, width: int | None = None) -> Dataset:
    """
    Read external data from delimited text files without headers.

    Multi-label: one row of F features and one row of C binary labels per
    sample. Segmentation: one row of H*W*F features (pixel-major) and one row
    of H*W class indices per image.

    """
    features = pd.read_csv(features_csv, header=None, sep=None, engine="python").to_numpy(np.float64)
    labels = pd.read_csv(labels_csv, header=None, sep=None, engine="python").to_numpy()
    if not np.isfinite(features).all():
        raise DatasetError(f"{features_csv} holds missing or non-finite values.")
    labels = labels.astype(np.int64)

    if task is Task.SEGMENTATION:
        if not (height and width):
            raise DatasetError("Segmentation files need the image height and width.")
        pixels = height * width
        if features.shape[1] % pixels:
            raise DatasetError(f"{features.shape[1]} feature columns do not split into {pixels} pixels.")
        features = features.reshape(len(features), pixels, -1)
        classes = num_classes or int(labels.max()) + 1
        return SegmentationDataset(features=features, labels=labels, num_classes=classes,
                                   height=height, width=width)
    return MultiLabelDataset(features=features, labels=labels, num_classes=num_classes or labels.shape[1])
