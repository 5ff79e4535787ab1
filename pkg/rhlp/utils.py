"""
Shared helpers: seeded random streams and ordered parallel execution.
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

SEED_MODULUS = 2 ** 64


def derive_seed(seed: int, *parts) -> int:
    """
    Derive a 64-bit seed from a base seed and an arbitrary key.

    The key parts are hashed through their ``repr`` so floats such as a
    noise level contribute exactly. The same (seed, parts) always gives
    the same value, independent of call order or worker count.

    Args:
        seed: Base seed
        *parts: Hashable key parts (ints, floats, strings)

    Returns:
        Unsigned 64-bit integer
    """
    digest = hashlib.blake2b(digest_size=8)
    digest.update(repr((int(seed) % SEED_MODULUS,) + tuple(parts)).encode('utf-8'))
    return int.from_bytes(digest.digest(), 'little')


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Independent PCG64 stream for (seed, *keys).

    Args:
        seed: Base seed
        *keys: Non-negative integer stream identifiers (start index, attempt...)

    Returns:
        numpy Generator
    """
    entropy = [int(seed) % SEED_MODULUS] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def run_ordered(func: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """
    Map ``func`` over ``items`` and return results in input order.

    With ``threads > 1`` the calls run on a thread pool; numpy releases the
    GIL in its kernels so EM runs overlap. Results never depend on the
    worker count because every call owns its random stream.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    workers = min(threads, len(items))
    logger.debug(f"Running {len(items)} tasks on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
