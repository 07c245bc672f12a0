import csv
import logging
import os
import zlib
from typing import Iterable, List, Optional, Sequence

import numpy as np

from constants import LOG_FORMAT, LOG_LEVEL


def get_logger(name: str) -> logging.Logger:
    """
    Return the module logger, installing a stream handler the first time.

    Args:
        name (str): Usually the caller's __name__.

    Returns:
        logging.Logger: The configured logger.
    """
    logger = logging.getLogger(name)
    logger.setLevel(LOG_LEVEL)
    if not logger.hasHandlers():
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    return logger


logger = get_logger(__name__)


def purpose_code(purpose: str) -> int:
    # hash() is salted per process, crc32 is not
    return zlib.crc32(purpose.encode("utf-8"))


def substream(seed: int, *key, purpose: str = "") -> np.random.Generator:
    """
    Derive an independent random stream for one (node, generation, purpose) key.

    Streams for different keys never share draws, so adding or removing one
    consumer leaves every other consumer's numbers unchanged.

    Args:
        seed (int): The scenario seed.
        *key: Non-negative integers identifying the consumer (node id, generation, ...).
        purpose (str): What the numbers are for, e.g. "rlnc-local" or "dropout".

    Returns:
        np.random.Generator: A generator seeded from the derived sequence.
    """
    spawn_key = tuple(int(k) for k in key) + (purpose_code(purpose),)
    if any(k < 0 for k in spawn_key):
        raise ValueError(f"Stream keys must be non-negative, got {spawn_key}")
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))


def format_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    """
    Write a header row followed by the given rows; floats use repr so output is byte-stable.

    Returns:
        str: The path written.
    """
    ensure_directory_exists(os.path.dirname(path) or ".")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"Row {row!r} does not match columns {list(columns)}")
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv(path: str) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def ensure_directory_exists(path: str, quiet: Optional[bool] = True) -> None:
    """Ensure the given directory path exists, create if not."""
    if not os.path.exists(path):
        os.makedirs(path, exist_ok=True)
        if not quiet:
            logger.info(f"Created directory: {path}")
