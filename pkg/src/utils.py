"""
src/utils.py

Utility functions shared across the solver.

Filesystem helpers, CSV output, content digests and the [INFO]/[WARN]
log lines. No physics lives here.
"""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd


def ensure_directories_exist(directories: Iterable[Path]) -> None:
    """
    Ensure that a collection of directories exists on disk.

    Parameters
    ----------
    directories : Iterable[pathlib.Path]
        Directories to create if they do not already exist.
    """
    for directory in directories:
        Path(directory).mkdir(parents=True, exist_ok=True)


def validate_file_exists(path: Path, description: Optional[str] = None) -> None:
    """
    Validate that a required file exists.

    Parameters
    ----------
    path : pathlib.Path
        Path to the file to check.
    description : str, optional
        Human-readable description of the file (used in error messages).

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    """
    if not Path(path).exists():
        label = description or str(path)
        raise FileNotFoundError(f"Required file not found: {label} ({path})")


def save_dataframe(df: pd.DataFrame, path: Path, *, index: bool = False) -> None:
    """
    Write a table as comma- (.csv) or tab-separated (.tsv) text.

    Floats keep 10 significant digits.

    Raises
    ------
    ValueError
        For any other file extension.
    """
    path = Path(path)
    separators = {".csv": ",", ".tsv": "\t"}
    if path.suffix not in separators:
        raise ValueError(f"Unsupported table format: {path.suffix}")
    df.to_csv(path, sep=separators[path.suffix], index=index, float_format="%.10g")


def array_digest(*arrays: np.ndarray) -> str:
    """
    Return a short SHA-256 digest of one or more arrays.

    The digest covers dtype, shape and raw bytes, so it changes whenever the
    content changes.
    """
    h = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()[:16]


def text_digest(text: str) -> str:
    """Short SHA-256 digest of a string."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def log(message: str) -> None:
    """
    Print a standardized log message to stdout.

    Parameters
    ----------
    message : str
        Message to log.
    """
    print(f"[INFO] {message}", file=sys.stdout)


def warn(message: str) -> None:
    """Print a standardized warning to stderr."""
    print(f"[WARN] {message}", file=sys.stderr)
