"""Write prediction files in the format the evaluation harness reads.

One JSON object per line: a sample_id plus an instance-id list, a run-length
encoded point mask, or both. Runs are [start, length, start, length, ...]
over sorted point indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ClientError


@dataclass(frozen=True)
class PredictionOut:
    """One predicted mask, by instance ids, explicit points, or both."""

    sample_id: str
    instance_ids: tuple[int, ...] | None = None
    point_indices: object = None

    def __post_init__(self):
        if self.instance_ids is None and self.point_indices is None:
            raise ClientError(f"prediction {self.sample_id} carries no mask")


def encode_runs(indices) -> list[int]:
    """Run-length encode point indices (deduplicated and sorted first)."""
    idx = np.unique(np.asarray(list(indices), dtype=np.int64))
    if idx.size == 0:
        return []
    if idx[0] < 0:
        raise ClientError("mask indices must be non-negative")
    runs = []
    start = prev = int(idx[0])
    for value in idx[1:]:
        value = int(value)
        if value == prev + 1:
            prev = value
            continue
        runs.extend((start, prev - start + 1))
        start = prev = value
    runs.extend((start, prev - start + 1))
    return runs


def write_predictions(records, path, known_ids=None) -> int:
    """Write records to a prediction file; returns the number written.

    When known_ids is given, a record naming any other sample_id raises
    before anything is written.
    """
    records = list(records)
    if known_ids is not None:
        for rec in records:
            if rec.sample_id not in known_ids:
                raise ClientError(f"unknown sample_id {rec.sample_id}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            obj: dict = {"sample_id": rec.sample_id}
            if rec.instance_ids is not None:
                obj["instance_ids"] = [int(i) for i in rec.instance_ids]
            if rec.point_indices is not None:
                obj["mask_rle"] = encode_runs(rec.point_indices)
            fh.write(json.dumps(obj) + "\n")
    return len(records)
