"""
Parameter checkpoints: a text manifest next to a raw float64 block.

    <stem>.manifest   header line, then one line per tensor:
                      name <TAB> shape (comma separated) <TAB> offset <TAB> count
    <stem>.bin        all tensors back to back, little-endian float64

"""

import numpy as np

_HEADER = "# svae-bench checkpoint v1"
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def save_checkpoint(stem: str, params: dict):
    """
    Write named arrays (or tensors) to `<stem>.manifest` and `<stem>.bin`.

    """
    lines = [_HEADER]
    blocks = []
    offset = 0
    for name, value in params.items():
        if "\t" in name or "\n" in name:
            raise CheckpointError(f"Parameter name {name!r} cannot be stored.")
        array = np.asarray(getattr(value, "data", value), dtype=_DTYPE)
        shape = ",".join(str(extent) for extent in array.shape)
        lines.append(f"{name}\t{shape}\t{offset}\t{array.size}")
        blocks.append(array.reshape(-1))
        offset += array.size

    with open(f"{stem}.manifest", "w", encoding="utf-8") as manifest:
        manifest.write("\n".join(lines) + "\n")
    flat = np.concatenate(blocks) if blocks else np.zeros(0, dtype=_DTYPE)
    flat.astype(_DTYPE).tofile(f"{stem}.bin")


def load_checkpoint(stem: str) -> dict:
    """
    Read a checkpoint back into a dict of float64 arrays, in stored order.

    Raises:
        CheckpointError: If the manifest and the data block disagree.

    """
    with open(f"{stem}.manifest", encoding="utf-8") as manifest:
        lines = manifest.read().splitlines()
    if not lines or lines[0] != _HEADER:
        raise CheckpointError(f"{stem}.manifest is not a checkpoint manifest.")
    flat = np.fromfile(f"{stem}.bin", dtype=_DTYPE)

    params = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        name, shape_text, offset, count = line.split("\t")
        shape = tuple(int(extent) for extent in shape_text.split(",") if extent)
        offset, count = int(offset), int(count)
        if offset + count > flat.size or int(np.prod(shape, dtype=np.int64)) != count:
            raise CheckpointError(f"Entry {name} does not fit the data in {stem}.bin.")
        params[name] = flat[offset:offset + count].astype(np.float64).reshape(shape)
    return params
