"""Vetting strategies: which unvetted items to send to the oracle next.

Three families:

* hierarchical random: sample a category uniformly among categories that
  still have unvetted items, then an item uniformly within it;
* most-confident mistake: noisy negatives with the highest system scores,
  the classic "the label is probably at fault" heuristic;
* maximum expected estimator change: closed-form expected change of the
  metric estimate from vetting one item, (2/K) p(1-p) for Prec@K and
  (1/N_p) r p(1-p) for AP, where r is the proportion of unvetted items in
  the category scoring higher.

Every function is a pure function of (pool snapshot, posterior, rng state):
repeated calls without intervening vetting return the same batch. Selection
works on a *group* of pools sharing one id space (two systems being ranked,
or one benchmark viewed at several IoU thresholds); priorities simply sum
across the group members, which for a single pool is the plain criterion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StrategyError
from .metrics import AveragePrecision, PrecAtK
from .pool import EvaluationPool


@dataclass(frozen=True)
class RandomHierarchical:
    seed: int = 0


@dataclass(frozen=True)
class MostConfidentMistake:
    pass


@dataclass(frozen=True)
class MeecPrec:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")


@dataclass(frozen=True)
class MeecAP:
    pass


VettingStrategyKind = RandomHierarchical | MostConfidentMistake | MeecPrec | MeecAP


@dataclass
class SelectionScore:
    """Per-item selection priority; ``r`` present for the AP criterion."""

    priorities: dict[str, float]
    r: dict[str, float] | None = None


def _as_group(pools) -> list[EvaluationPool]:
    group = [pools] if isinstance(pools, EvaluationPool) else list(pools)
    if not group:
        raise StrategyError("need at least one pool")
    ids = group[0].ids
    for other in group[1:]:
        if other.ids != ids and set(other.ids) != set(ids):
            raise StrategyError("pool group members must share item ids")
    return group


def select_random_hierarchical(pool: EvaluationPool, batch_size: int, rng) -> list[str]:
    """Uniform category, then uniform item; distinct ids, no replacement.

    Returns min(batch_size, |U|) ids; empty when nothing is unvetted.
    """
    if batch_size < 1:
        raise StrategyError("batch_size must be >= 1")
    remaining: dict[str, list[int]] = {}
    for code, cat in enumerate(pool.categories):
        idx = np.flatnonzero((pool.cat_codes == code) & ~pool.vetted_mask)
        if idx.size:
            remaining[cat] = list(idx)
    cats = sorted(remaining)
    batch: list[str] = []
    while cats and len(batch) < batch_size:
        ci = int(rng.integers(0, len(cats)))
        bucket = remaining[cats[ci]]
        pos = int(rng.integers(0, len(bucket)))
        bucket[pos], bucket[-1] = bucket[-1], bucket[pos]
        batch.append(pool.ids[bucket.pop()])
        if not bucket:
            cats.pop(ci)
    return batch


def select_mcm(pools, batch_size: int) -> list[str]:
    """Highest-scoring unvetted noisy negatives first.

    Needs no posterior: ranks unvetted items with y=0 by descending score
    (summed across the pool group), ascending id on ties; once noisy
    negatives run out, remaining unvetted items follow in score order.
    """
    if batch_size < 1:
        raise StrategyError("batch_size must be >= 1")
    group = _as_group(pools)
    head = group[0]
    score_sum = _aligned_score_sum(group)
    unvet = np.flatnonzero(~head.vetted_mask)
    negatives = [i for i in unvet if head.noisy[i] == 0]
    positives = [i for i in unvet if head.noisy[i] != 0]
    key = lambda i: (-score_sum[i], head.ids[i])
    ranked = sorted(negatives, key=key) + sorted(positives, key=key)
    return [head.ids[i] for i in ranked[:batch_size]]


def _aligned_score_sum(group: list[EvaluationPool]) -> np.ndarray:
    head = group[0]
    total = head.scores.copy()
    for other in group[1:]:
        if other.ids == head.ids:
            total += other.scores
        else:
            total += np.array([other.scores[other.index_of(i)] for i in head.ids])
    return total


def meec_score_prec(p: float, k: int) -> float:
    """Expected estimate change from vetting a top-K item: (2/K) p (1-p)."""
    if not (0.0 <= p <= 1.0):
        raise StrategyError(f"posterior {p} outside [0,1]")
    if k < 1:
        raise StrategyError("K must be >= 1")
    return (2.0 / k) * p * (1.0 - p)


def meec_score_ap(p: float, r: float, n_p: float) -> float:
    """Expected AP-estimate change from one vet: (1/N_p) r p (1-p)."""
    if not (0.0 <= p <= 1.0) or not (0.0 <= r <= 1.0):
        raise StrategyError("p and r must lie in [0,1]")
    if n_p <= 0:
        raise StrategyError("N_p must be positive")
    return r * p * (1.0 - p) / n_p


def _pool_meec_arrays(pool, p_full, kind, n_p_by_cat):
    """(priority, candidate) arrays for one pool under one criterion."""
    n = len(pool)
    prio = np.zeros(n)
    candidate = np.zeros(n, dtype=bool)
    unvet = ~pool.vetted_mask
    for cat in pool.categories:
        order = pool.per_category_order(cat)
        if isinstance(kind, MeecPrec):
            top = order[: kind.k]
            sel = top[unvet[top]]
            candidate[sel] = True
            p = p_full[sel]
            prio[sel] += (2.0 / kind.k) * p * (1.0 - p)
        else:
            u_order = order[unvet[order]]
            if u_order.size == 0:
                continue
            candidate[u_order] = True
            n_p = None if n_p_by_cat is None else n_p_by_cat.get(cat)
            if n_p is None:
                q = np.where(pool.truth[order] != -1, pool.truth[order], p_full[order])
                n_p = float(q.sum())
            if n_p <= 0:
                continue
            r = np.arange(u_order.size, dtype=np.float64) / u_order.size
            p = p_full[u_order]
            prio[u_order] += r * p * (1.0 - p) / n_p
    return prio, candidate


def _group_priorities(pools, posteriors, kind, n_p_by_cat):
    group = _as_group(pools)
    post_list = posteriors if isinstance(posteriors, (list, tuple)) else [posteriors]
    if len(post_list) != len(group):
        raise StrategyError("one posterior per pool required")
    np_list = n_p_by_cat if isinstance(n_p_by_cat, (list, tuple)) else [n_p_by_cat] * len(group)
    head = group[0]
    prio = np.zeros(len(head))
    candidate = np.zeros(len(head), dtype=bool)
    for pool, post, npc in zip(group, post_list, np_list):
        p_full = _posterior_array(pool, post)
        pr, cand = _pool_meec_arrays(pool, p_full, kind, npc)
        if pool.ids != head.ids:
            remap = np.array([pool.index_of(i) for i in head.ids])
            pr, cand = pr[remap], cand[remap]
        prio += pr
        candidate |= cand
    return head, prio, candidate


def meec_selection_scores(pools, posteriors, kind, n_p_by_cat=None) -> SelectionScore:
    """Combined per-item priorities; group members contribute additively."""
    head, prio, candidate = _group_priorities(pools, posteriors, kind, n_p_by_cat)
    r_map: dict[str, float] = {}
    if isinstance(kind, MeecAP):
        for cat in head.categories:
            order = head.per_category_order(cat)
            u_order = order[~head.vetted_mask[order]]
            for rank, i in enumerate(u_order):
                r_map[head.ids[i]] = rank / u_order.size
    priorities = {
        head.ids[i]: float(prio[i]) for i in np.flatnonzero(candidate)
    }
    return SelectionScore(priorities=priorities, r=r_map or None)


def _posterior_array(pool, posterior) -> np.ndarray:
    if isinstance(posterior, np.ndarray):
        if posterior.shape[0] != len(pool):
            raise StrategyError("posterior array length mismatch")
        return posterior
    p_full = np.zeros(len(pool))
    for i in np.flatnonzero(~pool.vetted_mask):
        item_id = pool.ids[i]
        if item_id not in posterior:
            raise StrategyError(f"posterior missing unvetted item {item_id!r}")
        p_full[i] = posterior[item_id]
    return p_full


def select_meec(pools, posteriors, spec, batch_size: int, n_p_by_cat=None) -> list[str]:
    """Top-priority unvetted items under the applicable expected-change score.

    ``spec`` may be a metric spec (PrecAtK/AveragePrecision) or a strategy
    kind (MeecPrec/MeecAP). For Prec@K only members of some top-K list are
    candidates: items outside every top-K list cannot change the estimate
    and are never selected, so the batch may come back short or empty.
    Zero-priority candidates rank after positive ones, ascending id.
    """
    if batch_size < 1:
        raise StrategyError("batch_size must be >= 1")
    kind = spec
    if isinstance(spec, PrecAtK):
        kind = MeecPrec(spec.k)
    elif isinstance(spec, AveragePrecision):
        kind = MeecAP()
    if not isinstance(kind, (MeecPrec, MeecAP)):
        raise StrategyError(f"no MEEC criterion for {spec!r}")

    head, prio, candidate = _group_priorities(pools, posteriors, kind, n_p_by_cat)
    cand_idx = np.flatnonzero(candidate)
    if cand_idx.size == 0:
        return []
    id_arr = np.array(head.ids)
    order = np.lexsort((id_arr[cand_idx], -prio[cand_idx]))
    chosen = cand_idx[order[:batch_size]]
    return [head.ids[i] for i in chosen]
