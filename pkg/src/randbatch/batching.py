"""Random batch divisions and with-replacement batch sampling."""

from typing import Iterator, List, Union

import numpy as np

from .rng import RngStream
from .state import BatchDivision

GeneratorLike = Union[np.random.Generator, RngStream]


def _as_generator(rng: GeneratorLike) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def random_division(N: int, p: int, rng: GeneratorLike) -> BatchDivision:
    """Uniformly random partition of {0..N-1} into batches of size p.

    Consecutive chunks of a uniform permutation form the batches, which is
    O(N).  When p does not divide N, the leftover N mod p particles form one
    smaller batch if at least 2 remain, otherwise the single leftover joins
    the last full batch.
    """
    if p < 2:
        raise ValueError("batch size must be >= 2")
    if p > N:
        raise ValueError("batch size cannot exceed the particle count")
    gen = _as_generator(rng)
    perm = gen.permutation(N)
    assignment = np.empty(N, dtype=np.int64)
    n_full = N // p
    remainder = N % p
    batch_ids = np.minimum(np.arange(N) // p, n_full - (1 if remainder == 1 else 0))
    if remainder == 1:
        # lone leftover joins the last full batch
        batch_ids[-1] = n_full - 1
    assignment[perm] = batch_ids
    return BatchDivision(assignment=assignment, batch_size=p)


def sample_batch_with_replacement(N: int, p: int, rng: GeneratorLike) -> np.ndarray:
    """One batch of p distinct indices, uniform over all p-subsets.

    "With replacement" refers to successive calls: the same particle may
    appear in several consecutively drawn batches.
    """
    if p < 2:
        raise ValueError("batch size must be >= 2")
    if p > N:
        raise ValueError("batch size cannot exceed the particle count")
    gen = _as_generator(rng)
    return np.sort(gen.choice(N, size=p, replace=False))


def enumerate_divisions(N: int, p: int) -> Iterator[BatchDivision]:
    """Yield every partition of {0..N-1} into batches of size p, exactly once.

    Exhaustive-enumeration oracle for the batch-estimator statistics; only
    sensible for small N.  Requires p | N.
    """
    if N % p != 0:
        raise ValueError("enumeration requires p to divide N")

    def rec(remaining: List[int]) -> Iterator[List[List[int]]]:
        if not remaining:
            yield []
            return
        first = remaining[0]
        rest = remaining[1:]
        from itertools import combinations

        for others in combinations(rest, p - 1):
            batch = [first, *others]
            leftover = [x for x in rest if x not in others]
            for tail in rec(leftover):
                yield [batch, *tail]

    for batches in rec(list(range(N))):
        assignment = np.empty(N, dtype=np.int64)
        for b, members in enumerate(batches):
            assignment[members] = b
        yield BatchDivision(assignment=assignment, batch_size=p)


def batch_index_matrices(assignment: np.ndarray):
    """Group a division's batches by size into sorted (n_batches, size) matrices.

    For the usual p | N division this is a single reshape; a remainder batch
    adds one extra matrix.  Rows are sorted so batch sums run in ascending
    particle order.
    """
    assignment = np.asarray(assignment)
    order = np.argsort(assignment, kind="stable")
    counts = np.bincount(assignment)
    cum = np.concatenate([[0], np.cumsum(counts)])
    out = []
    for size in np.unique(counts):
        starts = cum[:-1][counts == size]
        idx = order[starts[:, None] + np.arange(size)[None, :]]
        out.append((int(size), np.sort(idx, axis=1)))
    return out


def count_divisions(N: int, p: int) -> int:
    """Number of distinct partitions into N/p batches of size p."""
    from math import comb

    total, remaining = 1, N
    while remaining > 0:
        total *= comb(remaining - 1, p - 1)
        remaining -= p
    return total
