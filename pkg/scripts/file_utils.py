"""
file_utils.py

Whole-file atomic writes: content goes to a temporary file in the target
directory, then os.replace() swaps it in, so readers never see a partial file.
"""

import os
import tempfile
from pathlib import Path
from typing import Union

import pandas as pd

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_csv(df: pd.DataFrame, path: PathLike) -> None:
    """Write a DataFrame as CSV (no index), atomically."""
    atomic_write_text(path, df.to_csv(index=False, lineterminator="\n"))
