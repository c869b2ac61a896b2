"""Partially vetted test pools.

An :class:`EvaluationPool` holds score-sorted test items per category and
tracks which items have been vetted. Internally the pool is columnar
(numpy arrays) so that estimators and selection strategies can operate on
whole categories at once; :class:`TestItem` objects are immutable snapshots
materialized on demand.

The vetted/unvetted partition is the V/U split of the pool: an item is in V
once its true label has been revealed, and the noisy label is kept verbatim
across that transition so flip priors can be fit from (noisy, truth) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import VettingError

_NONE = -1  # sentinel for "no value" in int8 label columns


@dataclass(frozen=True)
class LabelState:
    """Label of one item: noisy observation plus truth once vetted."""

    noisy: int
    truth: int | None = None

    def __post_init__(self):
        if self.noisy not in (0, 1):
            raise ValueError("noisy label must be binary")
        if self.truth is not None and self.truth not in (0, 1):
            raise ValueError("true label must be binary")

    @property
    def vetted(self) -> bool:
        return self.truth is not None


@dataclass(frozen=True)
class TestItem:
    """Immutable snapshot of one scored test example."""

    __test__ = False  # domain object, despite the pytest-like name

    item_id: str
    category: str
    score: float
    label: LabelState
    sim_truth: int | None = None
    display: object | None = None

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score for {self.item_id!r} is not finite")
        if self.label.vetted and self.sim_truth is not None:
            if self.label.truth != self.sim_truth:
                raise ValueError(
                    f"vetted truth contradicts sim_truth for {self.item_id!r}"
                )


class EvaluationPool:
    """Score-sorted collection of test items with a mutable V/U partition.

    Mutation is single-writer: only :meth:`vet` changes state, and concurrent
    readers are safe between calls. Ordering within a category is descending
    score with ascending-id tie-break, fixed at construction.
    """

    def __init__(self, items: list[TestItem]):
        n = len(items)
        ids = [it.item_id for it in items]
        if len(set(ids)) != n:
            seen = set()
            for it in items:
                if it.item_id in seen:
                    raise ValueError(f"duplicate id {it.item_id!r}")
                seen.add(it.item_id)
        self.ids: list[str] = ids
        self.categories: list[str] = sorted({it.category for it in items})
        self._cat_code = {c: k for k, c in enumerate(self.categories)}
        self.cat_codes = np.array(
            [self._cat_code[it.category] for it in items], dtype=np.int32
        )
        self.scores = np.array([it.score for it in items], dtype=np.float64)
        if n and not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")
        self.noisy = np.array([it.label.noisy for it in items], dtype=np.int8)
        self.truth = np.array(
            [it.label.truth if it.label.vetted else _NONE for it in items],
            dtype=np.int8,
        )
        self.sim_truth = np.array(
            [it.sim_truth if it.sim_truth is not None else _NONE for it in items],
            dtype=np.int8,
        )
        self.display: dict[int, object] = {
            i: it.display for i, it in enumerate(items) if it.display is not None
        }
        self._index = {item_id: i for i, item_id in enumerate(ids)}
        self._order: dict[str, np.ndarray] = {}
        for cat in self.categories:
            member = np.flatnonzero(self.cat_codes == self._cat_code[cat])
            # descending score, ascending id on ties
            keyed = sorted(member, key=lambda i: (-self.scores[i], self.ids[i]))
            self._order[cat] = np.array(keyed, dtype=np.int64)
        self._check_sim_consistency()

    def _check_sim_consistency(self):
        both = (self.truth != _NONE) & (self.sim_truth != _NONE)
        if np.any(self.truth[both] != self.sim_truth[both]):
            bad = np.flatnonzero(both & (self.truth != self.sim_truth))[0]
            raise ValueError(
                f"vetted truth contradicts sim_truth for {self.ids[bad]!r}"
            )

    # -- introspection -------------------------------------------------

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    def index_of(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise KeyError(f"unknown item id {item_id!r}") from None

    def item(self, item_id: str) -> TestItem:
        return self.item_at(self.index_of(item_id))

    def item_at(self, i: int) -> TestItem:
        truth = int(self.truth[i]) if self.truth[i] != _NONE else None
        sim = int(self.sim_truth[i]) if self.sim_truth[i] != _NONE else None
        return TestItem(
            item_id=self.ids[i],
            category=self.categories[self.cat_codes[i]],
            score=float(self.scores[i]),
            label=LabelState(noisy=int(self.noisy[i]), truth=truth),
            sim_truth=sim,
            display=self.display.get(i),
        )

    def items(self) -> list[TestItem]:
        return [self.item_at(i) for i in range(len(self))]

    def per_category_order(self, category: str) -> np.ndarray:
        """Item indices of ``category`` sorted by descending score, asc id."""
        return self._order[category]

    @property
    def vetted_mask(self) -> np.ndarray:
        return self.truth != _NONE

    @property
    def n_vetted(self) -> int:
        return int(np.count_nonzero(self.truth != _NONE))

    @property
    def n_unvetted(self) -> int:
        return len(self) - self.n_vetted

    def vetted_fraction(self) -> float:
        return self.n_vetted / len(self) if len(self) else 0.0

    def unvetted_ids(self) -> list[str]:
        return [self.ids[i] for i in np.flatnonzero(self.truth == _NONE)]

    def has_full_sim_truth(self) -> bool:
        return bool(np.all((self.sim_truth != _NONE) | (self.truth != _NONE)))

    # -- mutation ------------------------------------------------------

    def vet(self, item_id: str, truth: int | None = None) -> int:
        """Reveal the true label of one unvetted item and return it.

        With ``truth=None`` the hidden ``sim_truth`` answers (simulated
        oracle); otherwise the supplied value is recorded (live oracle).
        Vetting an already-vetted item is an error: it signals a strategy
        bug, not a state to silently absorb.
        """
        i = self.index_of(item_id)
        if self.truth[i] != _NONE:
            raise VettingError(f"item {item_id!r} is already vetted")
        if truth is None:
            if self.sim_truth[i] == _NONE:
                raise VettingError(
                    f"item {item_id!r} has no sim_truth and no truth was supplied"
                )
            truth = int(self.sim_truth[i])
        truth = int(truth)
        if truth not in (0, 1):
            raise VettingError("truth must be binary")
        if self.sim_truth[i] != _NONE and truth != self.sim_truth[i]:
            raise VettingError(
                f"supplied truth contradicts sim_truth for {item_id!r}"
            )
        self.truth[i] = truth
        return truth

    def clone(self) -> "EvaluationPool":
        """Independent deep copy; used to reset simulation trials."""
        new = object.__new__(EvaluationPool)
        new.ids = list(self.ids)
        new.categories = list(self.categories)
        new._cat_code = dict(self._cat_code)
        new.cat_codes = self.cat_codes.copy()
        new.scores = self.scores.copy()
        new.noisy = self.noisy.copy()
        new.truth = self.truth.copy()
        new.sim_truth = self.sim_truth.copy()
        new.display = dict(self.display)
        new._index = dict(self._index)
        new._order = {c: o.copy() for c, o in self._order.items()}
        return new

    def strip_sim_truth(self) -> None:
        """Drop hidden labels; live sessions must not see the answer key."""
        self.sim_truth[:] = _NONE
