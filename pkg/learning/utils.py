"""
Various utilities.

"""

import os

import numpy as np
import pandas as pd

from .enums import Stream


def derive_rng(seed: int, stream: Stream) -> np.random.Generator:
    """
    Get the generator for one named random stream of a run.

    Args:
        seed (int): The run seed.
        stream (Stream): Which consumer the numbers are for.

    Returns:
        Generator: Independent of every other stream of the same seed.

    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream.value,)))


def append_rows(path: str, rows: list[dict]):
    """
    Append rows to a CSV file, writing the header only when the file is new.

    """
    if not rows:
        return
    frame = pd.DataFrame(rows)
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    frame.to_csv(path, mode="a", header=not exists, index=False)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
