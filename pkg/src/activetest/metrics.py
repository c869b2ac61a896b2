"""Benchmark metrics on fully or partially specified labels.

Two layers live here. The exact layer computes Prec@K and average precision
from known binary labels. The expected layer computes the same metrics under
a per-item posterior over unknown labels: expected Prec@K is the exact mean
of the metric under independent item posteriors, while expected AP is the
closed-form estimator that plugs expected precision prefixes into the AP sum
(it is *not* the exact expectation for interior probabilities; the
enumeration oracle below computes that separately and the two are
deliberately not reconciled).

Also here: IoU between boxes, masks, and mask-vs-box, and greedy one-to-one
matching of detections to ground-truth instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError
from .geometry import Box, Mask
from .pool import LabelState

# -- metric specification ----------------------------------------------


@dataclass(frozen=True)
class PrecAtK:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")


@dataclass(frozen=True)
class AveragePrecision:
    pass


@dataclass(frozen=True)
class MeanAP:
    """AP averaged over several IoU thresholds (instance benchmarks)."""

    iou_thresholds: tuple[float, ...] = field(
        default=tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
    )

    def __post_init__(self):
        ts = self.iou_thresholds
        if not ts:
            raise ValueError("need at least one IoU threshold")
        if any(not (0.0 < t < 1.0) for t in ts):
            raise ValueError("IoU thresholds must lie in (0, 1)")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("IoU thresholds must be strictly increasing")


MetricSpec = PrecAtK | AveragePrecision | MeanAP


@dataclass(frozen=True)
class MatchSpec:
    """One-to-one greedy-by-score matching within a category and image."""

    iou_threshold: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.iou_threshold < 1.0):
            raise ValueError("IoU threshold must lie in (0, 1)")


class PosteriorEstimate:
    """Map item-id -> p(z=1 | observations) for every unvetted item in scope."""

    def __init__(self, probs: dict[str, float]):
        for item_id, p in probs.items():
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"posterior for {item_id!r} outside [0,1]: {p}")
        self.probs = dict(probs)

    def __getitem__(self, item_id: str) -> float:
        return self.probs[item_id]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.probs

    def __len__(self) -> int:
        return len(self.probs)


# -- exact metrics ------------------------------------------------------


def prec_at_k(labels, k: int) -> float:
    """Fraction of positives among the first ``k`` labels.

    ``labels`` must already be sorted by descending score.
    """
    labels = np.asarray(labels)
    if k < 1:
        raise MetricError("K must be >= 1")
    if labels.shape[0] < k:
        raise MetricError(f"need at least {k} labels, got {labels.shape[0]}")
    return float(np.mean(labels[:k]))


def average_precision(labels, n_p: float) -> float:
    """Rank-weighted precision sum over a descending-score label sequence.

    ``n_p`` is the number of positives the ranking is measured against;
    positives that the ranking never retrieves contribute to ``n_p`` but add
    no terms to the sum, so ``sum(labels) <= n_p`` is required.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if n_p <= 0:
        raise MetricError("average precision undefined: no positives")
    if labels.sum() > n_p + 1e-9:
        raise MetricError(
            f"{labels.sum():.0f} retrieved positives exceed n_p={n_p}"
        )
    prefix = np.cumsum(labels)
    ranks = np.arange(1, labels.shape[0] + 1, dtype=np.float64)
    return float(np.sum(labels * prefix / ranks) / n_p)


# -- expected metrics under a posterior ---------------------------------


def _effective_probs(states, posterior) -> np.ndarray:
    """Per-item probability of being positive: truth if vetted, else p_i."""
    q = np.empty(len(states), dtype=np.float64)
    for j, (item_id, st) in enumerate(states):
        if st.vetted:
            q[j] = float(st.truth)
        else:
            if item_id not in posterior:
                raise MetricError(f"posterior missing unvetted item {item_id!r}")
            q[j] = posterior[item_id]
    return q


def expected_prec_at_k(states, posterior, k: int) -> float:
    """Expected Prec@K: vetted truths count exactly, unvetted contribute p_i.

    ``states`` is the top-K slice (or longer) of ``(item_id, LabelState)``
    pairs in descending-score order. Exact expectation by linearity; reduces
    to :func:`prec_at_k` when every top-K item is vetted.
    """
    if len(states) < k:
        raise MetricError(f"need at least {k} items, got {len(states)}")
    q = _effective_probs(states[:k], posterior)
    return float(q.sum() / k)


def expected_ap(states, posterior, n_p: float) -> float:
    """Closed-form expected AP: expected precision prefixes in the AP sum.

    Each rank k contributes (truth or p_k) times the expected Prec@k.
    Reduces exactly to :func:`average_precision` when all items are vetted,
    and to the exact expectation when every p_i is 0 or 1.
    """
    if n_p <= 0:
        raise MetricError("expected AP undefined: no positives in scope")
    q = _effective_probs(states, posterior)
    prefix = np.cumsum(q)
    ranks = np.arange(1, q.shape[0] + 1, dtype=np.float64)
    return float(np.sum(q * prefix / ranks) / n_p)


def expected_ap_arrays(q: np.ndarray, n_p: float) -> float:
    """Array fast path of :func:`expected_ap` on precomputed effective probs."""
    if n_p <= 0:
        raise MetricError("expected AP undefined: no positives in scope")
    prefix = np.cumsum(q)
    ranks = np.arange(1, q.shape[0] + 1, dtype=np.float64)
    return float(np.sum(q * prefix / ranks) / n_p)


def exact_expected_metric_oracle(
    states,
    posterior,
    spec: MetricSpec,
    n_p: float | None = None,
    mc_samples: int | None = None,
    seed: int = 0,
) -> float:
    """Independent oracle for E[Q(z)] under independent item posteriors.

    Enumerates all 2^|U| label assignments (|U| <= 20) weighted by the
    product of item probabilities, or Monte-Carlo samples when the unvetted
    set is larger and ``mc_samples`` is given. For AP the positive count is
    recomputed per assignment unless a fixed ``n_p`` is supplied; assignments
    with no positives contribute 0.
    """
    if isinstance(spec, MeanAP):
        raise MetricError("oracle supports PrecAtK and AveragePrecision only")
    n = len(states)
    fixed = np.full(n, -1.0)
    free_idx, free_p = [], []
    for j, (item_id, st) in enumerate(states):
        if st.vetted:
            fixed[j] = float(st.truth)
        else:
            if item_id not in posterior:
                raise MetricError(f"posterior missing unvetted item {item_id!r}")
            free_idx.append(j)
            free_p.append(posterior[item_id])
    free_idx = np.asarray(free_idx, dtype=np.int64)
    free_p = np.asarray(free_p, dtype=np.float64)
    u = free_idx.shape[0]

    if u > 20:
        if mc_samples is None:
            raise MetricError(
                f"|U|={u} too large for enumeration; supply mc_samples"
            )
        rng = np.random.default_rng(seed)
        draws = rng.random((mc_samples, u)) < free_p
        weights = np.full(mc_samples, 1.0 / mc_samples)
        assign = draws.astype(np.float64)
    else:
        assign = np.array(list(itertools.product((0.0, 1.0), repeat=u)))
        if u == 0:
            assign = assign.reshape(1, 0)
        on = np.where(assign == 1.0, free_p, 1.0 - free_p)
        weights = on.prod(axis=1) if u else np.array([1.0])

    labels = np.tile(fixed, (assign.shape[0], 1))
    if u:
        labels[:, free_idx] = assign

    if isinstance(spec, PrecAtK):
        if n < spec.k:
            raise MetricError(f"need at least {spec.k} items, got {n}")
        vals = labels[:, : spec.k].mean(axis=1)
    else:
        prefix = np.cumsum(labels, axis=1)
        ranks = np.arange(1, n + 1, dtype=np.float64)
        sums = (labels * prefix / ranks).sum(axis=1)
        if n_p is not None:
            if n_p <= 0:
                raise MetricError("fixed n_p must be positive")
            vals = sums / n_p
        else:
            totals = labels.sum(axis=1)
            vals = np.divide(
                sums, totals, out=np.zeros_like(sums), where=totals > 0
            )
    return float(np.dot(weights, vals))


# -- IoU ----------------------------------------------------------------


def box_iou(a: Box, b: Box) -> float:
    """Area intersection-over-union of two boxes."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def mask_iou(a: Mask, b: Mask) -> float:
    """Set IoU of two masks on the same grid."""
    if (a.width, a.height) != (b.width, b.height):
        raise MetricError(
            f"mask grids differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    ga, gb = a.decode(), b.decode()
    inter = np.count_nonzero(ga & gb)
    union = np.count_nonzero(ga | gb)
    return inter / union if union else 0.0


def rasterize_box(box: Box, width: int, height: int) -> np.ndarray:
    """Grid cells whose centers fall inside the box, clipped to the grid."""
    grid = np.zeros((height, width), dtype=bool)
    c0 = max(int(np.ceil(box.x_min - 0.5)), 0)
    c1 = min(int(np.floor(box.x_max - 0.5)), width - 1)
    r0 = max(int(np.ceil(box.y_min - 0.5)), 0)
    r1 = min(int(np.floor(box.y_max - 0.5)), height - 1)
    if c0 <= c1 and r0 <= r1:
        grid[r0 : r1 + 1, c0 : c1 + 1] = True
    return grid


def mask_box_iou(mask: Mask, box: Box) -> float:
    """IoU between a mask and a box rasterized onto the mask's grid."""
    gm = mask.decode()
    gb = rasterize_box(box, mask.width, mask.height)
    inter = np.count_nonzero(gm & gb)
    union = np.count_nonzero(gm | gb)
    return inter / union if union else 0.0


# -- detection matching -------------------------------------------------


@dataclass(frozen=True)
class MatchRecord:
    det_id: str
    matched: bool
    gt_id: str | None
    iou: float


def match_detections(detections, ground_truth, spec: MatchSpec, iou_mode: str):
    """Greedy one-to-one matching of detections to ground truth.

    Detections are taken in descending score order (ascending id on ties)
    within each (image, category) group; each ground-truth instance is
    consumed by at most one detection, so a second detection overlapping an
    already-taken instance scores as a false positive. ``iou_mode`` selects
    the overlap: ``"noisy"`` compares the detection mask against the
    ground-truth box, ``"true"`` against the ground-truth mask (vetted mask
    preferred, simulation mask otherwise).

    Returns one :class:`MatchRecord` per detection, in input order.
    """
    if iou_mode not in ("noisy", "true"):
        raise MetricError(f"unknown iou_mode {iou_mode!r}")

    gt_by_group: dict[tuple, list] = {}
    for gt in sorted(ground_truth, key=lambda g: g.gt_id):
        gt_by_group.setdefault((gt.image_id, gt.category), []).append(gt)

    if iou_mode == "true":
        missing = [
            gt.gt_id
            for gt in ground_truth
            if gt.mask is None and gt.sim_mask is None
        ]
        if missing:
            raise MetricError(
                "true-mode matching needs masks for ground truth: "
                + ", ".join(sorted(missing))
            )

    records: dict[str, MatchRecord] = {}
    order = sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].score, detections[i].det_id),
    )
    taken: set[str] = set()
    for i in order:
        det = detections[i]
        best_iou, best_gt = 0.0, None
        for gt in gt_by_group.get((det.image_id, det.category), []):
            if gt.gt_id in taken:
                continue
            if iou_mode == "noisy":
                iou = mask_box_iou(det.mask, gt.box)
            else:
                iou = mask_iou(det.mask, gt.mask if gt.mask is not None else gt.sim_mask)
            # groups are id-sorted, so ties keep the lowest gt id
            if iou > best_iou:
                best_iou, best_gt = iou, gt
        if best_gt is not None and best_iou >= spec.iou_threshold:
            taken.add(best_gt.gt_id)
            records[det.det_id] = MatchRecord(det.det_id, True, best_gt.gt_id, best_iou)
        else:
            records[det.det_id] = MatchRecord(
                det.det_id, False, best_gt.gt_id if best_gt else None, best_iou
            )
    return [records[d.det_id] for d in detections]


def mean_ap_exact(detections, ground_truth, spec: MeanAP, iou_mode: str = "true"):
    """Exact mean AP over categories and IoU thresholds.

    Per category, AP uses the number of ground-truth instances as the
    positive count; categories with no ground truth are skipped. Returns
    (overall mean, per-category means).
    """
    categories = sorted({gt.category for gt in ground_truth})
    gt_count = {c: sum(1 for g in ground_truth if g.category == c) for c in categories}
    per_cat: dict[str, float] = {}
    for cat in categories:
        dets = sorted(
            (d for d in detections if d.category == cat),
            key=lambda d: (-d.score, d.det_id),
        )
        aps = []
        for thr in spec.iou_thresholds:
            recs = match_detections(
                dets, ground_truth, MatchSpec(iou_threshold=thr), iou_mode
            )
            labels = [1 if r.matched else 0 for r in recs]
            aps.append(average_precision(labels, gt_count[cat]))
        per_cat[cat] = float(np.mean(aps)) if aps else 0.0
    overall = float(np.mean(list(per_cat.values()))) if per_cat else 0.0
    return overall, per_cat


def states_of(items) -> list[tuple[str, LabelState]]:
    """Convenience: (id, label) pairs from TestItem-like objects."""
    return [(it.item_id, it.label) for it in items]
