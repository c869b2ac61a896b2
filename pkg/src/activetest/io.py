"""Dataset ingestion and serialization.

Tag datasets are flat records (JSONL, or CSV with the same header names):
``id, category, score, noisy_label, vetted_label?, sim_truth?, display?``.
Instance datasets are two JSONL files, detections
(``id, image_id, category, score, mask, box``) and ground truth
(``id, image_id, category, box, mask?, sim_mask?``), with masks as
``{"w": .., "h": .., "runs": [..]}``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import ParseError
from .geometry import Box, Mask
from .instances import DetectionInstance, GroundTruthInstance
from .pool import EvaluationPool, LabelState, TestItem

_TAG_FIELDS = ("id", "category", "score", "noisy_label", "vetted_label", "sim_truth", "display")


def _binary(value, name, line_no):
    try:
        b = int(value)
    except (TypeError, ValueError):
        raise ParseError(f"line {line_no}: {name} must be 0 or 1, got {value!r}")
    if b not in (0, 1):
        raise ParseError(f"line {line_no}: {name} must be 0 or 1, got {value!r}")
    return b


def _tag_item(record: dict, line_no: int) -> TestItem:
    for key in ("id", "category", "score", "noisy_label"):
        if record.get(key) in (None, ""):
            raise ParseError(f"line {line_no}: missing required field {key!r}")
    unknown = set(record) - set(_TAG_FIELDS)
    if unknown:
        raise ParseError(f"line {line_no}: unknown fields {sorted(unknown)}")
    try:
        score = float(record["score"])
    except (TypeError, ValueError):
        raise ParseError(f"line {line_no}: score {record['score']!r} is not a number")
    noisy = _binary(record["noisy_label"], "noisy_label", line_no)
    vetted = record.get("vetted_label")
    truth = None if vetted in (None, "") else _binary(vetted, "vetted_label", line_no)
    sim = record.get("sim_truth")
    sim_truth = None if sim in (None, "") else _binary(sim, "sim_truth", line_no)
    try:
        return TestItem(
            item_id=str(record["id"]),
            category=str(record["category"]),
            score=score,
            label=LabelState(noisy=noisy, truth=truth),
            sim_truth=sim_truth,
            display=record.get("display") or None,
        )
    except ValueError as exc:
        raise ParseError(f"line {line_no}: {exc}") from exc


def load_tag_dataset(path, fmt: str | None = None) -> EvaluationPool:
    """Load a tag dataset into an evaluation pool.

    ``fmt`` is ``"jsonl"`` or ``"csv"``; inferred from the suffix when
    omitted. Malformed records and duplicate ids are rejected with the
    offending line number.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise ParseError(f"unknown tag dataset format {fmt!r}")

    items: list[TestItem] = []
    seen: dict[str, int] = {}

    def _add(record: dict, line_no: int):
        item = _tag_item(record, line_no)
        if item.item_id in seen:
            raise ParseError(f"duplicate id {item.item_id!r} at line {line_no}")
        seen[item.item_id] = line_no
        items.append(item)

    if fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
                if not isinstance(record, dict):
                    raise ParseError(f"line {line_no}: expected an object")
                _add(record, line_no)
    else:
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ParseError("line 1: empty CSV file")
            unknown = set(reader.fieldnames) - set(_TAG_FIELDS)
            if unknown:
                raise ParseError(f"line 1: unknown columns {sorted(unknown)}")
            for line_no, row in enumerate(reader, start=2):
                _add({k: v for k, v in row.items() if v not in (None, "")}, line_no)

    return EvaluationPool(items)


def write_tag_dataset(pool: EvaluationPool, path, fmt: str | None = None) -> None:
    """Write a pool back out; round-trips with :func:`load_tag_dataset`."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    records = []
    for item in pool.items():
        rec = {
            "id": item.item_id,
            "category": item.category,
            "score": item.score,
            "noisy_label": item.label.noisy,
        }
        if item.label.vetted:
            rec["vetted_label"] = item.label.truth
        if item.sim_truth is not None:
            rec["sim_truth"] = item.sim_truth
        if item.display is not None:
            rec["display"] = item.display
        records.append(rec)

    if fmt == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=False) + "\n")
    else:
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(_TAG_FIELDS))
            writer.writeheader()
            for rec in records:
                writer.writerow(rec)


def _load_jsonl(path) -> list[tuple[int, dict]]:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            rows.append((line_no, obj))
    return rows


def load_instance_dataset(det_path, gt_path):
    """Load detections and ground truth from two JSONL files.

    Detections come back sorted by category, then descending score. Mask
    decode failures name the offending instance id.
    """
    detections = []
    det_ids = set()
    for line_no, obj in _load_jsonl(det_path):
        try:
            det_id = str(obj["id"])
        except KeyError:
            raise ParseError(f"line {line_no}: detection missing id")
        if det_id in det_ids:
            raise ParseError(f"duplicate id {det_id!r} at line {line_no}")
        det_ids.add(det_id)
        try:
            det = DetectionInstance(
                det_id=det_id,
                image_id=str(obj["image_id"]),
                category=str(obj["category"]),
                score=float(obj["score"]),
                mask=Mask.from_json(obj["mask"], owner=det_id),
                box=Box.from_list(obj["box"]),
            )
        except KeyError as exc:
            raise ParseError(f"line {line_no}: detection {det_id!r} missing {exc}")
        detections.append(det)

    ground_truth = []
    gt_ids = set()
    for line_no, obj in _load_jsonl(gt_path):
        try:
            gt_id = str(obj["id"])
        except KeyError:
            raise ParseError(f"line {line_no}: ground truth missing id")
        if gt_id in gt_ids:
            raise ParseError(f"duplicate id {gt_id!r} at line {line_no}")
        gt_ids.add(gt_id)
        try:
            gt = GroundTruthInstance(
                gt_id=gt_id,
                image_id=str(obj["image_id"]),
                category=str(obj["category"]),
                box=Box.from_list(obj["box"]),
                mask=Mask.from_json(obj["mask"], owner=gt_id) if obj.get("mask") else None,
                sim_mask=Mask.from_json(obj["sim_mask"], owner=gt_id) if obj.get("sim_mask") else None,
            )
        except KeyError as exc:
            raise ParseError(f"line {line_no}: ground truth {gt_id!r} missing {exc}")
        ground_truth.append(gt)

    detections.sort(key=lambda d: (d.category, -d.score, d.det_id))
    return detections, ground_truth


def write_instance_dataset(detections, ground_truth, det_path, gt_path) -> None:
    with Path(det_path).open("w", encoding="utf-8") as fh:
        for det in detections:
            fh.write(
                json.dumps(
                    {
                        "id": det.det_id,
                        "image_id": det.image_id,
                        "category": det.category,
                        "score": det.score,
                        "mask": det.mask.to_json(),
                        "box": det.box.to_list(),
                    }
                )
                + "\n"
            )
    with Path(gt_path).open("w", encoding="utf-8") as fh:
        for gt in ground_truth:
            rec = {
                "id": gt.gt_id,
                "image_id": gt.image_id,
                "category": gt.category,
                "box": gt.box.to_list(),
            }
            if gt.mask is not None:
                rec["mask"] = gt.mask.to_json()
            if gt.sim_mask is not None:
                rec["sim_mask"] = gt.sim_mask.to_json()
            fh.write(json.dumps(rec) + "\n")
