"""Lazy pair/triplet/k-tuple indexes over a trial store.

A tuple entry is ``(reference, same_class, other_class...)`` given as trial
indices.  Entry counts come from closed forms; entries themselves are
generated on the fly (iteration) or unranked directly (random access), so no
storage proportional to the tuple count is ever allocated -- the full
cross-subject triplet index of a 432-trial training partition has
5,987,520 entries and costs a few kilobytes.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left, bisect_right
from typing import Iterator

from .data import TrialStore


class Scope(enum.Enum):
    WITHIN_SUBJECT = "within_subject"
    CROSS_SUBJECT = "cross_subject"


def _unrank_combination(items: list[int], r: int, rank: int) -> list[int]:
    """The ``rank``-th r-combination of ``items`` in lexicographic order
    (matching ``itertools.combinations``)."""
    n = len(items)
    out = []
    start = 0
    for slots in range(r, 0, -1):
        i = start
        while True:
            tail = math.comb(n - 1 - i, slots - 1)
            if rank < tail:
                break
            rank -= tail
            i += 1
        out.append(items[i])
        start = i + 1
    return out


class TupleIndex:
    """Lazy index of tuple entries with per-position subject metadata.

    Position 0 is the reference trial, position 1 a same-class trial, and
    positions >= 2 are distinct different-class trials (in ascending trial
    index order per entry).  ``scope`` restricts companions to the reference
    trial's subject or allows any subject.
    """

    def __init__(self, store: TrialStore, arity: int, scope: Scope,
                 include_identity: bool = False):
        if arity < 2:
            raise ValueError(f"tuple arity must be >= 2, got {arity}")
        if include_identity and arity != 2:
            raise ValueError("identity pairs only make sense for arity 2")
        self.store = store
        self.arity = arity
        self.scope = scope
        self.include_identity = include_identity

        self._class_of = [store.class_index(t.stimulus_id) for t in store]
        self._subject_of = [t.subject_id for t in store]

        # Candidate pools, all in ascending trial-index order.
        self._cells: dict[tuple[int, str], list[int]] = {}
        self._class_groups: dict[int, list[int]] = {}
        self._subject_groups: dict[str, list[int]] = {}
        for i, t in enumerate(store):
            k = self._class_of[i]
            self._cells.setdefault((k, t.subject_id), []).append(i)
            self._class_groups.setdefault(k, []).append(i)
            self._subject_groups.setdefault(t.subject_id, []).append(i)
        self._other_cache: dict = {}

        # Closed-form entry counts, cumulative over reference trials.
        r = arity - 2
        self._cum = [0]
        total = 0
        for i in range(len(store)):
            n_b = len(self._same_pool(i)) - (0 if include_identity else 1)
            total += n_b * math.comb(len(self._other_pool(i)), r)
            self._cum.append(total)

    # -- candidate pools ---------------------------------------------------

    def _same_pool(self, i: int) -> list[int]:
        """Same-class candidates for reference ``i`` (including ``i``)."""
        k = self._class_of[i]
        if self.scope is Scope.WITHIN_SUBJECT:
            return self._cells[(k, self._subject_of[i])]
        return self._class_groups[k]

    def _other_pool(self, i: int) -> list[int]:
        """Different-class candidates for reference ``i``."""
        k = self._class_of[i]
        if self.scope is Scope.WITHIN_SUBJECT:
            key = (k, self._subject_of[i])
            if key not in self._other_cache:
                self._other_cache[key] = [
                    j for j in self._subject_groups[self._subject_of[i]]
                    if self._class_of[j] != k]
            return self._other_cache[key]
        if k not in self._other_cache:
            self._other_cache[k] = [j for j in range(len(self.store))
                                    if self._class_of[j] != k]
        return self._other_cache[k]

    def _partners(self, i: int) -> list[int]:
        pool = self._same_pool(i)
        if self.include_identity:
            return pool
        pos = bisect_left(pool, i)
        return pool[:pos] + pool[pos + 1:]

    # -- container protocol ------------------------------------------------

    def __len__(self) -> int:
        return self._cum[-1]

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        import itertools

        r = self.arity - 2
        for a in range(len(self.store)):
            partners = self._partners(a)
            if not partners:
                continue
            others = self._other_pool(a)
            if r == 0:
                for b in partners:
                    yield (a, b)
            elif r == 1:
                for b in partners:
                    for c in others:
                        yield (a, b, c)
            else:
                for b in partners:
                    for combo in itertools.combinations(others, r):
                        yield (a, b) + combo

    def __getitem__(self, rank: int) -> tuple[int, ...]:
        n = len(self)
        if rank < 0:
            rank += n
        if not 0 <= rank < n:
            raise IndexError(f"rank {rank} out of range for {n} entries")
        a = bisect_right(self._cum, rank) - 1
        local = rank - self._cum[a]
        others = self._other_pool(a)
        n_combo = math.comb(len(others), self.arity - 2)
        b = self._partners(a)[local // n_combo]
        if self.arity == 2:
            return (a, b)
        combo = _unrank_combination(others, self.arity - 2, local % n_combo)
        return (a, b, *combo)

    # -- metadata ----------------------------------------------------------

    def entry_subjects(self, entry: tuple[int, ...]) -> tuple[str, ...]:
        """Selector metadata: the subject id at each tuple position."""
        return tuple(self._subject_of[i] for i in entry)

    def batches(self, batch_size: int) -> Iterator[list[tuple[int, ...]]]:
        """Lazy fixed-order batching of the full index."""
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        batch: list[tuple[int, ...]] = []
        for entry in self:
            batch.append(entry)
            if len(batch) == batch_size:
                yield batch
                batch = []
        if batch:
            yield batch


def make_pairs(store: TrialStore, scope: Scope | str,
               include_identity: bool = False) -> TupleIndex:
    """Directed (input, target) pairs of same-class trials."""
    return TupleIndex(store, 2, Scope(scope), include_identity)


def make_tuples(store: TrialStore, arity: int, scope: Scope | str) -> TupleIndex:
    """Similarity tuples: a same-class pair plus ``arity - 2`` distinct
    different-class trials."""
    if arity < 3:
        raise ValueError(f"similarity tuples need arity >= 3, got {arity}")
    return TupleIndex(store, arity, Scope(scope))
