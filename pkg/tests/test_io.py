import json

import pytest

from activetest.errors import ParseError
from activetest.geometry import Mask
from activetest.io import (
    load_instance_dataset,
    load_tag_dataset,
    write_instance_dataset,
    write_tag_dataset,
)
from activetest.synth import InstanceSynthSpec, TagSynthSpec, synthesize_instance_dataset, synthesize_tag_dataset


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_jsonl_sorting(tmp_path):
    path = tmp_path / "tags.jsonl"
    write_lines(
        path,
        [
            json.dumps({"id": "r1", "category": "c", "score": 0.9, "noisy_label": 1}),
            json.dumps({"id": "r2", "category": "c", "score": 0.5, "noisy_label": 0}),
            json.dumps({"id": "r3", "category": "c", "score": 0.7, "noisy_label": 0}),
        ],
    )
    pool = load_tag_dataset(path)
    assert [pool.ids[i] for i in pool.per_category_order("c")] == ["r1", "r3", "r2"]


def test_load_csv_matches_jsonl(tmp_path):
    csv_path = tmp_path / "tags.csv"
    csv_path.write_text(
        "id,category,score,noisy_label,vetted_label,sim_truth,display\n"
        "a,c,0.9,1,,,\n"
        "b,c,0.5,0,1,1,\n",
        encoding="utf-8",
    )
    pool = load_tag_dataset(csv_path)
    assert pool.item("b").label.truth == 1
    assert not pool.item("a").label.vetted


def test_duplicate_id_names_line(tmp_path):
    path = tmp_path / "tags.jsonl"
    write_lines(
        path,
        [
            json.dumps({"id": "a", "category": "c", "score": 1, "noisy_label": 0}),
            json.dumps({"id": "b", "category": "c", "score": 1, "noisy_label": 0}),
            json.dumps({"id": "c", "category": "c", "score": 1, "noisy_label": 0}),
            json.dumps({"id": "a", "category": "c", "score": 1, "noisy_label": 0}),
        ],
    )
    with pytest.raises(ParseError, match="duplicate id 'a' at line 4"):
        load_tag_dataset(path)


def test_malformed_record_names_line(tmp_path):
    path = tmp_path / "tags.jsonl"
    write_lines(
        path,
        [
            json.dumps({"id": "a", "category": "c", "score": 1, "noisy_label": 0}),
            "{not json",
        ],
    )
    with pytest.raises(ParseError, match="line 2"):
        load_tag_dataset(path)


def test_missing_field_names_line(tmp_path):
    path = tmp_path / "tags.jsonl"
    write_lines(path, [json.dumps({"id": "a", "category": "c", "score": 1})])
    with pytest.raises(ParseError, match="line 1.*noisy_label"):
        load_tag_dataset(path)


def test_vetted_label_builds_vetted_state(tmp_path):
    path = tmp_path / "tags.jsonl"
    write_lines(
        path,
        [json.dumps({"id": "a", "category": "c", "score": 1, "noisy_label": 0, "vetted_label": 1})],
    )
    item = load_tag_dataset(path).item("a")
    assert item.label.vetted and item.label.truth == 1 and item.label.noisy == 0


def test_tag_roundtrip_jsonl(tmp_path):
    pool = synthesize_tag_dataset(TagSynthSpec(n_categories=2, items_per_category=25, seed=9))
    pool.vet(pool.unvetted_ids()[0])
    path = tmp_path / "out.jsonl"
    write_tag_dataset(pool, path)
    again = load_tag_dataset(path)
    assert again.ids == pool.ids
    for item_id in pool.ids:
        a, b = pool.item(item_id), again.item(item_id)
        assert (a.score, a.label, a.sim_truth, a.category) == (b.score, b.label, b.sim_truth, b.category)


def test_tag_roundtrip_csv(tmp_path):
    pool = synthesize_tag_dataset(TagSynthSpec(n_categories=2, items_per_category=10, seed=9))
    path = tmp_path / "out.csv"
    write_tag_dataset(pool, path)
    again = load_tag_dataset(path)
    assert again.ids == pool.ids
    assert [again.item(i).label for i in again.ids] == [pool.item(i).label for i in pool.ids]


def test_instance_roundtrip(tmp_path):
    dets, gts = synthesize_instance_dataset(
        InstanceSynthSpec(n_images=4, instances_per_image=3, seed=4)
    )
    det_path, gt_path = tmp_path / "det.jsonl", tmp_path / "gt.jsonl"
    write_instance_dataset(dets, gts, det_path, gt_path)
    dets2, gts2 = load_instance_dataset(det_path, gt_path)
    assert [d.det_id for d in dets2] == [d.det_id for d in dets]
    assert all(a.mask == b.mask for a, b in zip(dets, dets2))
    assert all(a.box == b.box for a, b in zip(gts, gts2))
    assert all(a.sim_mask == b.sim_mask for a, b in zip(gts, gts2))


def test_instance_detections_sorted_by_category_then_score(tmp_path):
    dets, gts = synthesize_instance_dataset(
        InstanceSynthSpec(n_images=4, instances_per_image=3, seed=4)
    )
    keys = [(d.category, -d.score, d.det_id) for d in dets]
    assert keys == sorted(keys)


def test_gt_without_mask_loads(tmp_path):
    gt_path = tmp_path / "gt.jsonl"
    write_lines(
        gt_path,
        [json.dumps({"id": "g", "image_id": "i", "category": "c", "box": [0, 0, 4, 4]})],
    )
    det_path = tmp_path / "det.jsonl"
    det_path.write_text("", encoding="utf-8")
    dets, gts = load_instance_dataset(det_path, gt_path)
    assert gts[0].mask is None and gts[0].sim_mask is None


def test_mask_rle_mismatch_names_instance(tmp_path):
    gt_path = tmp_path / "gt.jsonl"
    write_lines(
        gt_path,
        [
            json.dumps(
                {
                    "id": "gbad",
                    "image_id": "i",
                    "category": "c",
                    "box": [0, 0, 4, 4],
                    "mask": {"w": 4, "h": 4, "runs": [2, 3]},  # sums to 5, not 16
                }
            )
        ],
    )
    det_path = tmp_path / "det.jsonl"
    det_path.write_text("", encoding="utf-8")
    with pytest.raises(ParseError, match="gbad"):
        load_instance_dataset(det_path, gt_path)


def test_detection_box_must_be_tight(tmp_path):
    grid_mask = Mask.encode(__import__("numpy").ones((4, 4), dtype=bool))
    det_path = tmp_path / "det.jsonl"
    write_lines(
        det_path,
        [
            json.dumps(
                {
                    "id": "d",
                    "image_id": "i",
                    "category": "c",
                    "score": 0.5,
                    "mask": grid_mask.to_json(),
                    "box": [0, 0, 5, 4],  # tight box is [0,0,4,4]
                }
            )
        ],
    )
    gt_path = tmp_path / "gt.jsonl"
    gt_path.write_text("", encoding="utf-8")
    with pytest.raises(ParseError, match="tight box"):
        load_instance_dataset(det_path, gt_path)
