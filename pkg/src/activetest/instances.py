"""Instance-segmentation data: ground truth, detections, and pool building.

The noise model is box-for-mask: every ground-truth instance carries a
bounding box (the cheap annotation), and only vetted instances carry a
pixel mask. A detection's "noisy" overlap is its mask against the
ground-truth box; its "true" overlap is mask against mask.

Active testing runs on a pool of detections: each detection becomes a test
item whose noisy label says whether it matches under box overlap, whose
hidden truth says whether it matches under mask overlap, and whose
:class:`InstancePair` carries the features the learned match predictor
consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ParseError
from .geometry import Box, Mask
from .metrics import MatchSpec, mask_box_iou, mask_iou, match_detections
from .pool import EvaluationPool, LabelState, TestItem


@dataclass(frozen=True)
class GroundTruthInstance:
    """One annotated object: box always known, mask only once vetted."""

    gt_id: str
    image_id: str
    category: str
    box: Box
    mask: Mask | None = None
    sim_mask: Mask | None = None

    def __post_init__(self):
        if self.mask is not None:
            _check_tight(self.mask, self.box, self.gt_id, tolerance=1.0)

    def effective_mask(self) -> Mask | None:
        return self.mask if self.mask is not None else self.sim_mask


@dataclass(frozen=True)
class DetectionInstance:
    """One predicted instance: mask, its tight box, and a confidence score."""

    det_id: str
    image_id: str
    category: str
    score: float
    mask: Mask
    box: Box

    def __post_init__(self):
        tight = self.mask.tight_box()
        if tight.to_list() != self.box.to_list():
            raise ParseError(
                f"detection {self.det_id!r}: declared box {self.box.to_list()} "
                f"is not the tight box of its mask {tight.to_list()}"
            )


def _check_tight(mask: Mask, box: Box, owner: str, tolerance: float):
    tight = mask.tight_box()
    deltas = [
        abs(tight.x_min - box.x_min),
        abs(tight.y_min - box.y_min),
        abs(tight.x_max - box.x_max),
        abs(tight.y_max - box.y_max),
    ]
    if max(deltas) > tolerance:
        raise ParseError(
            f"instance {owner!r}: mask tight box {tight.to_list()} disagrees "
            f"with declared box {box.to_list()} beyond {tolerance}px"
        )


@dataclass(frozen=True)
class InstancePair:
    """A detection and its best box-overlap ground-truth instance.

    ``noisy_iou`` is always available (detection mask vs gt box).
    ``true_iou`` uses the gt mask and exists only when a mask is known
    (vetted, or simulation-only).
    """

    det: DetectionInstance
    gt: GroundTruthInstance | None
    noisy_iou: float
    true_iou: float | None


@dataclass
class InstanceBenchmark:
    """One IoU threshold's view of a detection benchmark as a test pool.

    ``pool`` items are detections: noisy label = matched under box IoU,
    hidden truth = matched under mask IoU (one-to-one greedy matching in
    both cases). ``gt_count`` per category is the positive count AP is
    measured against.
    """

    pool: EvaluationPool
    pairs: dict[str, InstancePair]
    gt_count: dict[str, float]
    iou_threshold: float


def best_overlap_pairs(detections, ground_truth) -> dict[str, InstancePair]:
    """Pair each detection with its highest box-overlap gt (same image+category)."""
    gt_by_group: dict[tuple, list] = {}
    for gt in sorted(ground_truth, key=lambda g: g.gt_id):
        gt_by_group.setdefault((gt.image_id, gt.category), []).append(gt)
    pairs = {}
    for det in detections:
        best_iou, best_gt = 0.0, None
        for gt in gt_by_group.get((det.image_id, det.category), []):
            iou = mask_box_iou(det.mask, gt.box)
            if iou > best_iou:
                best_iou, best_gt = iou, gt
        true_iou = None
        if best_gt is not None and best_gt.effective_mask() is not None:
            true_iou = mask_iou(det.mask, best_gt.effective_mask())
        pairs[det.det_id] = InstancePair(det, best_gt, best_iou, true_iou)
    return pairs


def build_instance_benchmark(
    detections, ground_truth, iou_threshold: float = 0.5
) -> InstanceBenchmark:
    """Reduce a detection benchmark at one IoU threshold to a test pool.

    Requires every ground-truth instance to have a mask available (vetted or
    simulation) so the hidden truth of each detection is well defined.
    """
    spec = MatchSpec(iou_threshold=iou_threshold)
    noisy = match_detections(detections, ground_truth, spec, "noisy")
    true = match_detections(detections, ground_truth, spec, "true")
    pairs = best_overlap_pairs(detections, ground_truth)

    items = []
    for det, rn, rt in zip(detections, noisy, true):
        items.append(
            TestItem(
                item_id=det.det_id,
                category=det.category,
                score=det.score,
                label=LabelState(noisy=1 if rn.matched else 0),
                sim_truth=1 if rt.matched else 0,
            )
        )
    gt_count: dict[str, float] = {}
    for gt in ground_truth:
        gt_count[gt.category] = gt_count.get(gt.category, 0.0) + 1.0
    return InstanceBenchmark(
        pool=EvaluationPool(items),
        pairs=pairs,
        gt_count=gt_count,
        iou_threshold=iou_threshold,
    )


def build_instance_benchmarks(detections, ground_truth, iou_thresholds):
    """One benchmark per threshold; pools share detection ids."""
    return [
        build_instance_benchmark(detections, ground_truth, t)
        for t in iou_thresholds
    ]
