"""Synthetic benchmark generators with controllable label noise.

Tag pools draw a hidden truth per item, corrupt it through per-category
flip priors p(y|z), and score items from a two-Gaussian model (positives
higher on average). Instance benchmarks rasterize simple shapes, replace
masks by their tight boxes as the noisy annotation, and emit detections as
perturbed copies of the true masks plus unmatched distractors.

Everything is a pure function of its spec: same spec and seed, same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Mask
from .instances import DetectionInstance, GroundTruthInstance
from .pool import EvaluationPool, LabelState, TestItem


@dataclass(frozen=True)
class FlipSpec:
    """Noisy-label corruption rates: p(y=1|z=1) and p(y=1|z=0)."""

    p_y1_given_z1: float = 0.38
    p_y1_given_z0: float = 0.01

    def __post_init__(self):
        for p in (self.p_y1_given_z1, self.p_y1_given_z0):
            if not (0.0 <= p <= 1.0):
                raise ValueError("flip priors must lie in [0, 1]")


@dataclass(frozen=True)
class TagSynthSpec:
    n_categories: int = 10
    items_per_category: int = 500
    positive_rate: float = 0.25
    flip: FlipSpec = field(default_factory=FlipSpec)
    per_category_flip: tuple[FlipSpec, ...] | None = None
    score_mu_pos: float = 1.0
    score_mu_neg: float = -1.0
    score_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_categories < 1 or self.items_per_category < 1:
            raise ValueError("need at least one category and one item")
        if not (0.0 < self.positive_rate < 1.0):
            raise ValueError("positive_rate must lie in (0, 1)")
        if self.score_sigma <= 0:
            raise ValueError("score_sigma must be positive")
        if self.per_category_flip is not None and len(self.per_category_flip) != self.n_categories:
            raise ValueError("per_category_flip length must match n_categories")

    def flip_for(self, cat_idx: int) -> FlipSpec:
        if self.per_category_flip is not None:
            return self.per_category_flip[cat_idx]
        return self.flip


def synthesize_tag_dataset(spec: TagSynthSpec) -> EvaluationPool:
    """Generate a tag pool; deterministic in the spec (seed included)."""
    rng = np.random.default_rng(spec.seed)
    items: list[TestItem] = []
    width = len(str(spec.items_per_category - 1))
    for c in range(spec.n_categories):
        cat = f"c{c:02d}"
        flip = spec.flip_for(c)
        z = (rng.random(spec.items_per_category) < spec.positive_rate).astype(int)
        p_y1 = np.where(z == 1, flip.p_y1_given_z1, flip.p_y1_given_z0)
        y = (rng.random(spec.items_per_category) < p_y1).astype(int)
        mu = np.where(z == 1, spec.score_mu_pos, spec.score_mu_neg)
        s = rng.normal(mu, spec.score_sigma)
        s = np.clip(s, -1e9, 1e9)
        for j in range(spec.items_per_category):
            items.append(
                TestItem(
                    item_id=f"{cat}-{j:0{width}d}",
                    category=cat,
                    score=float(s[j]),
                    label=LabelState(noisy=int(y[j])),
                    sim_truth=int(z[j]),
                )
            )
    return EvaluationPool(items)


@dataclass(frozen=True)
class PairedTagSynthSpec:
    """Two systems scoring the same items; system B slightly weaker.

    System A scores positives at ``score_mu_pos``; system B at
    ``score_mu_pos - mu_pos_gap``. Scores are correlated through a shared
    latent component so the systems rank items similarly but not equally.
    """

    base: TagSynthSpec = field(default_factory=TagSynthSpec)
    mu_pos_gap: float = 0.15
    score_correlation: float = 0.7

    def __post_init__(self):
        if not (0.0 <= self.score_correlation <= 1.0):
            raise ValueError("score_correlation must lie in [0, 1]")


def synthesize_paired_tag_dataset(spec: PairedTagSynthSpec):
    """Return two pools over identical items, differing only in scores."""
    base = spec.base
    rng = np.random.default_rng(base.seed)
    items_a: list[TestItem] = []
    items_b: list[TestItem] = []
    rho = spec.score_correlation
    mix = np.sqrt(max(1.0 - rho * rho, 0.0))
    width = len(str(base.items_per_category - 1))
    for c in range(base.n_categories):
        cat = f"c{c:02d}"
        flip = base.flip_for(c)
        n = base.items_per_category
        z = (rng.random(n) < base.positive_rate).astype(int)
        p_y1 = np.where(z == 1, flip.p_y1_given_z1, flip.p_y1_given_z0)
        y = (rng.random(n) < p_y1).astype(int)
        shared = rng.normal(0.0, 1.0, size=n)
        own_a = rng.normal(0.0, 1.0, size=n)
        own_b = rng.normal(0.0, 1.0, size=n)
        mu_a = np.where(z == 1, base.score_mu_pos, base.score_mu_neg)
        mu_b = np.where(z == 1, base.score_mu_pos - spec.mu_pos_gap, base.score_mu_neg)
        s_a = mu_a + base.score_sigma * (rho * shared + mix * own_a)
        s_b = mu_b + base.score_sigma * (rho * shared + mix * own_b)
        for j in range(n):
            common = dict(
                item_id=f"{cat}-{j:0{width}d}",
                category=cat,
                label=LabelState(noisy=int(y[j])),
                sim_truth=int(z[j]),
            )
            items_a.append(TestItem(score=float(s_a[j]), **common))
            items_b.append(TestItem(score=float(s_b[j]), **common))
    return EvaluationPool(items_a), EvaluationPool(items_b)


# -- instance synthesis --------------------------------------------------

_SHAPES = ("ellipse", "slab", "blob")


@dataclass(frozen=True)
class InstanceSynthSpec:
    n_images: int = 40
    instances_per_image: int = 5
    image_size: int = 64
    min_extent: int = 8
    max_extent: int = 24
    # detector quality
    miss_rate: float = 0.0
    center_jitter: float = 2.0
    extent_jitter: float = 0.15
    score_noise: float = 0.1
    distractor_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1 or self.instances_per_image < 1:
            raise ValueError("need at least one image and one instance")
        if not (4 <= self.min_extent <= self.max_extent <= self.image_size):
            raise ValueError("extents must satisfy 4 <= min <= max <= image_size")
        for rate in (self.miss_rate, self.distractor_rate):
            if rate < 0 or rate > 1:
                raise ValueError("rates must lie in [0, 1]")


def _raster_shape(kind: str, cx: float, cy: float, ax: float, ay: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    # pixel centers at +0.5
    dx = (xx + 0.5 - cx) / max(ax, 1.0)
    dy = (yy + 0.5 - cy) / max(ay, 1.0)
    if kind == "ellipse":
        grid = dx * dx + dy * dy <= 1.0
    elif kind == "slab":
        # wide flat rectangle: box-for-mask is a good surrogate
        grid = (np.abs(dx) <= 1.0) & (np.abs(dy) <= 0.45)
    else:
        # rectangle with a corner notch: box noticeably over-covers
        grid = (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
        grid &= ~((dx > 0.1) & (dy > 0.1))
    return grid


def _shape_mask(rng, spec, kind) -> tuple[np.ndarray, float, float, float, float]:
    size = spec.image_size
    ax = rng.uniform(spec.min_extent, spec.max_extent) / 2.0
    ay = rng.uniform(spec.min_extent, spec.max_extent) / 2.0
    cx = rng.uniform(ax + 1, size - ax - 1)
    cy = rng.uniform(ay + 1, size - ay - 1)
    return _raster_shape(kind, cx, cy, ax, ay, size), cx, cy, ax, ay


def synthesize_instance_dataset(spec: InstanceSynthSpec):
    """Generate (detections, ground_truth); gt masks arrive as sim_mask only.

    Detections are jittered copies of the true shapes with scores that rise
    with the achieved overlap, plus ~``distractor_rate`` distractors per true
    detection that overlap no ground truth at all.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    ground_truth: list[GroundTruthInstance] = []
    detections: list[DetectionInstance] = []
    gt_n = 0
    det_n = 0

    for img in range(spec.n_images):
        image_id = f"img{img:04d}"
        placed: list[tuple[str, float, float, float, float, np.ndarray, str]] = []
        for _ in range(spec.instances_per_image):
            kind = _SHAPES[rng.integers(0, len(_SHAPES))]
            grid, cx, cy, ax, ay = _shape_mask(rng, spec, kind)
            if not grid.any():
                continue
            sim_mask = Mask.encode(grid)
            gt_id = f"gt{gt_n:05d}"
            gt_n += 1
            ground_truth.append(
                GroundTruthInstance(
                    gt_id=gt_id,
                    image_id=image_id,
                    category=kind,
                    box=sim_mask.tight_box(),
                    sim_mask=sim_mask,
                )
            )
            placed.append((gt_id, cx, cy, ax, ay, grid, kind))

        for gt_id, cx, cy, ax, ay, grid, kind in placed:
            if rng.random() < spec.miss_rate:
                continue
            dx, dy = rng.normal(0.0, spec.center_jitter, size=2) if spec.center_jitter > 0 else (0.0, 0.0)
            sx, sy = (
                rng.normal(1.0, spec.extent_jitter, size=2)
                if spec.extent_jitter > 0
                else (1.0, 1.0)
            )
            det_grid = _raster_shape(
                kind,
                float(np.clip(cx + dx, 2, size - 2)),
                float(np.clip(cy + dy, 2, size - 2)),
                max(ax * abs(sx), 2.0),
                max(ay * abs(sy), 2.0),
                size,
            )
            if not det_grid.any():
                continue
            inter = np.count_nonzero(det_grid & grid)
            union = np.count_nonzero(det_grid | grid)
            overlap = inter / union if union else 0.0
            score = float(np.clip(0.3 + 0.6 * overlap + rng.normal(0.0, spec.score_noise), 0.0, 1.0))
            det_mask = Mask.encode(det_grid)
            detections.append(
                DetectionInstance(
                    det_id=f"det{det_n:05d}",
                    image_id=image_id,
                    category=kind,
                    score=score,
                    mask=det_mask,
                    box=det_mask.tight_box(),
                )
            )
            det_n += 1

            if rng.random() < spec.distractor_rate:
                d = _distractor(rng, spec, placed, image_id)
                if d is not None:
                    grid_d, kind_d = d
                    mask_d = Mask.encode(grid_d)
                    detections.append(
                        DetectionInstance(
                            det_id=f"det{det_n:05d}",
                            image_id=image_id,
                            category=kind_d,
                            score=float(np.clip(rng.uniform(0.05, 0.45), 0.0, 1.0)),
                            mask=mask_d,
                            box=mask_d.tight_box(),
                        )
                    )
                    det_n += 1

    detections.sort(key=lambda dd: (dd.category, -dd.score, dd.det_id))
    return detections, ground_truth


def _distractor(rng, spec, placed, image_id, max_tries: int = 50):
    """A detection overlapping no gt box of any category in its image."""
    occupied = np.zeros((spec.image_size, spec.image_size), dtype=bool)
    for _, _, _, _, _, grid, _ in placed:
        rows = np.flatnonzero(grid.any(axis=1))
        cols = np.flatnonzero(grid.any(axis=0))
        occupied[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1] = True
    for _ in range(max_tries):
        kind = _SHAPES[rng.integers(0, len(_SHAPES))]
        tight = replace(spec, max_extent=max(spec.min_extent, spec.max_extent // 2))
        grid, *_ = _shape_mask(rng, tight, kind)
        if grid.any() and not (grid & occupied).any():
            return grid, kind
    return None
