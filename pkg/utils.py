import logging
from typing import Optional, Sequence

import numpy as np

from config import settings

logger = logging.getLogger(__name__)


class GuardExceeded(ValueError):
    """Raised when a computation would exceed one of the configured size guards"""

    def __init__(self, what: str, size: float, limit: float):
        self.what = what
        self.size = size
        self.limit = limit
        super().__init__(
            f"{what} needs {size:.3g} evaluations, above the guard of {limit:.3g} "
            f"(set RACXPT_GUARD_OVERRIDE=1 to lift it, expect long runtimes)"
        )


def check_guard(size: float, limit: float, what: str) -> None:
    """
    Raise GuardExceeded if size is above limit, unless guards are overridden
    """
    if size <= limit:
        return
    if not settings.guards_enabled:
        logger.warning(f"Guard lifted for {what}: {size:.3g} > {limit:.3g}")
        return
    raise GuardExceeded(what, size, limit)


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """
    Philox stream for a seed and a path of non-negative integers.

    Chunk and codebook streams are addressed by path, so results do not
    depend on how work is split across workers.
    """
    entropy = [int(seed)] + [int(p) for p in path]
    if any(e < 0 for e in entropy):
        raise ValueError(f"Seed path must be non-negative, got {entropy}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def validate_stochastic(array: np.ndarray, name: str, tol: Optional[float] = None) -> np.ndarray:
    """
    Validate that the last axis of array holds probability rows.
    Returns the array as float64.
    """
    if tol is None:
        tol = settings.mass_tolerance
    arr = np.asarray(array, dtype=float)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name} has negative or non-finite entries")
    sums = arr.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > tol)
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise ValueError(f"{name} row {idx} sums to {float(sums[idx]):.12g}")
    return arr


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """
    Round non-negative weights (summing to about 1) to integers summing to total.
    Ties in the remainders go to the lower index.
    """
    w = np.asarray(weights, dtype=float)
    if total < 0:
        raise ValueError("total must be non-negative")
    if w.sum() <= 0:
        raise ValueError("weights must have positive mass")
    scaled = w / w.sum() * total
    base = np.floor(scaled).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        remainders = scaled - base
        order = np.lexsort((np.arange(len(w)), -remainders))
        base[order[:short]] += 1
    return base
