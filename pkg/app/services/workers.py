"""
Deterministic block-parallel reduction and ordered maps for quadrature loops.

The outermost grid axis is cut into fixed-size blocks whose boundaries do not
depend on the worker count. Blocks are evaluated concurrently and their partial
sums are reduced in block order, so results are bit-identical for any number of
workers.
"""

import logging
from typing import Callable, Sequence, TypeVar

import numpy as np
from joblib import Parallel, delayed

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def block_bounds(n_outer: int, block: int) -> list[tuple[int, int]]:
    """Half-open [start, stop) ranges covering range(n_outer) in blocks of `block`."""
    if n_outer < 1 or block < 1:
        raise ValueError(f"Invalid blocking n_outer={n_outer}, block={block}")
    return [(start, min(start + block, n_outer)) for start in range(0, n_outer, block)]


def blockwise_sum(
    evaluate: Callable[[int, int], np.ndarray],
    n_outer: int,
    block: int = 32,
    workers: int = 1,
) -> np.ndarray:
    """
    Sum per-block partial results over the outer axis.

    Args:
        evaluate: Callable (start, stop) -> 1-D array of partial sums for that block
        n_outer: Length of the outer axis
        block: Rows per block
        workers: joblib worker count (-1 uses all cores)

    Returns:
        Elementwise sum of all block results, reduced in block order
    """
    bounds = block_bounds(n_outer, block)
    logger.debug(f"Reducing {len(bounds)} blocks of {block} rows with workers={workers}")

    if workers == 1 or len(bounds) == 1:
        partials = [evaluate(start, stop) for start, stop in bounds]
    else:
        partials = Parallel(n_jobs=workers, prefer="threads")(
            delayed(evaluate)(start, stop) for start, stop in bounds
        )

    stacked = np.stack([np.asarray(p, dtype=float) for p in partials])
    total = stacked[0].copy()
    for partial in stacked[1:]:
        total += partial
    return total


def parallel_map(
    function: Callable[[T], R], items: Sequence[T], workers: int = 1
) -> list[R]:
    """
    Apply a function to every item on joblib threads, keeping input order.

    Args:
        function: Callable applied to each item
        items: Inputs
        workers: joblib worker count (-1 uses all cores)

    Returns:
        Results in the order of items
    """
    if workers == 1 or len(items) < 2:
        return [function(item) for item in items]
    logger.debug(f"Mapping {len(items)} items with workers={workers}")
    return list(
        Parallel(n_jobs=workers, prefer="threads")(delayed(function)(item) for item in items)
    )
