import numpy as np
import pytest

from activetest.instances import best_overlap_pairs
from activetest.io import write_tag_dataset
from activetest.synth import (
    FlipSpec,
    InstanceSynthSpec,
    PairedTagSynthSpec,
    TagSynthSpec,
    synthesize_instance_dataset,
    synthesize_paired_tag_dataset,
    synthesize_tag_dataset,
)


def test_zero_noise_labels_equal_truth():
    spec = TagSynthSpec(
        n_categories=2, items_per_category=200,
        flip=FlipSpec(p_y1_given_z1=1.0, p_y1_given_z0=0.0), seed=3,
    )
    pool = synthesize_tag_dataset(spec)
    np.testing.assert_array_equal(pool.noisy, pool.sim_truth)


def test_default_flip_rate_matches_large_sample():
    spec = TagSynthSpec(n_categories=5, items_per_category=2000, seed=7)
    pool = synthesize_tag_dataset(spec)
    positives = pool.sim_truth == 1
    rate = float(pool.noisy[positives].mean())
    assert abs(rate - 0.38) <= 0.02
    negatives = pool.sim_truth == 0
    assert float(pool.noisy[negatives].mean()) <= 0.03


def test_tag_determinism(tmp_path):
    spec = TagSynthSpec(n_categories=3, items_per_category=50, seed=11)
    a, b = synthesize_tag_dataset(spec), synthesize_tag_dataset(spec)
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_tag_dataset(a, pa)
    write_tag_dataset(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_scores_separate_classes():
    pool = synthesize_tag_dataset(TagSynthSpec(n_categories=2, items_per_category=2000, seed=1))
    pos = pool.scores[pool.sim_truth == 1].mean()
    neg = pool.scores[pool.sim_truth == 0].mean()
    assert pos > neg + 1.0


def test_paired_pools_share_everything_but_scores():
    spec = PairedTagSynthSpec(base=TagSynthSpec(n_categories=2, items_per_category=100, seed=5))
    a, b = synthesize_paired_tag_dataset(spec)
    assert a.ids == b.ids
    np.testing.assert_array_equal(a.sim_truth, b.sim_truth)
    np.testing.assert_array_equal(a.noisy, b.noisy)
    assert not np.allclose(a.scores, b.scores)


def test_perfect_detector_masks_equal_gt():
    spec = InstanceSynthSpec(
        n_images=6, instances_per_image=3,
        center_jitter=0.0, extent_jitter=0.0, score_noise=0.0, distractor_rate=0.0,
        seed=2,
    )
    dets, gts = synthesize_instance_dataset(spec)
    assert len(dets) == len(gts)
    gt_masks = {g.sim_mask for g in gts}
    assert all(d.mask in gt_masks for d in dets)


def test_instance_determinism():
    spec = InstanceSynthSpec(n_images=5, instances_per_image=3, seed=8)
    d1, g1 = synthesize_instance_dataset(spec)
    d2, g2 = synthesize_instance_dataset(spec)
    assert d1 == d2 and g1 == g2


def test_distractor_fraction():
    # 0.5 distractors per true detection -> ~1/3 of detections overlap no gt
    spec = InstanceSynthSpec(
        n_images=700, instances_per_image=5,
        center_jitter=0.0, extent_jitter=0.0, distractor_rate=0.5, seed=12,
    )
    dets, gts = synthesize_instance_dataset(spec)
    assert len(dets) >= 5000
    pairs = best_overlap_pairs(dets, gts)
    orphan = sum(1 for p in pairs.values() if p.gt is None or p.noisy_iou == 0.0)
    frac = orphan / len(dets)
    assert abs(frac - 1 / 3) <= 0.05


def test_gt_box_is_tight_box_of_sim_mask():
    dets, gts = synthesize_instance_dataset(InstanceSynthSpec(n_images=4, seed=3))
    for gt in gts:
        assert gt.box == gt.sim_mask.tight_box()


def test_spec_validation():
    with pytest.raises(ValueError):
        TagSynthSpec(positive_rate=0.0)
    with pytest.raises(ValueError):
        FlipSpec(p_y1_given_z1=1.2)
    with pytest.raises(ValueError):
        InstanceSynthSpec(min_extent=2)
