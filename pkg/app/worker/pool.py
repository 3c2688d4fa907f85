from __future__ import annotations

import logging
from typing import Callable, Iterable, TypeVar

import numpy as np
from joblib import Parallel, delayed

logger = logging.getLogger(__name__)

Item = TypeVar("Item")
Result = TypeVar("Result")


def parallel_map(function: Callable[[Item], Result], items: Iterable[Item], threads: int = 1) -> list[Result]:
    """Apply `function` to every item; results come back in submission order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [function(item) for item in items]
    return Parallel(n_jobs=min(threads, len(items)), prefer="threads")(delayed(function)(item) for item in items)


def spawn_seeds(seed: int, count: int) -> list[int]:
    """Independent child seeds, stable for a given (seed, count) prefix."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]
