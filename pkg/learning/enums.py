from enum import Enum


class Task(Enum):
    MULTILABEL = "multilabel"
    SEGMENTATION = "segmentation"


class Method(Enum):
    """
    Training methods compared in a sweep.

    """

    CEL_BASELINE = "cel-baseline"
    FOCAL_BASELINE = "focal-baseline"
    SVAE_REWEIGHT = "svae-reweight"

    @classmethod
    def from_alias(cls, text: str) -> "Method":
        text = text.strip().lower()
        return _METHOD_ALIASES.get(text) or cls(text)

    @property
    def uses_svae(self) -> bool:
        return self is Method.SVAE_REWEIGHT


_METHOD_ALIASES = {
    "cel": Method.CEL_BASELINE,
    "focal": Method.FOCAL_BASELINE,
    "fl": Method.FOCAL_BASELINE,
    "svae": Method.SVAE_REWEIGHT,
}


class NoiseMode(Enum):
    MULTILABEL_FLIP = "multilabel-flip"
    SEGMENTATION_REGION = "segmentation-region"

    @classmethod
    def for_task(cls, task: Task) -> "NoiseMode":
        if task is Task.SEGMENTATION:
            return cls.SEGMENTATION_REGION
        return cls.MULTILABEL_FLIP


class KlSign(Enum):
    STANDARD = "standard"  # +1/2 sum(mu^2 + sigma^2 - log sigma^2 - 1)
    LITERAL = "literal"  # +1/2 sum(1 + log sigma^2 - mu^2 - sigma^2), the negated KL


class AlphaGranularity(Enum):
    EPOCH = "epoch"
    STEP = "step"


class Stream(Enum):
    """
    Independent random streams derived from one run seed. The value is the
    spawn key, so adding a stream never shifts existing ones.

    """

    DATA = 0
    NOISE = 1
    SPLIT = 2
    INIT_MAIN = 3
    INIT_SVAE = 4
    EPSILON = 5
    SHUFFLE = 6
