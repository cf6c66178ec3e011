"""Consumer-side client for generated spatial-relation datasets.

Loads dataset directories and their scene bundles straight from the files,
re-validates every sample's claims with an independent implementation of the
predicates, and writes prediction files the evaluation harness accepts.
"""

from .checks import ValidationReport, Violation, relation_holds, revalidate
from .errors import ClientError, FormatError, IntegrityError
from .predictions import PredictionOut, encode_runs, write_predictions
from .reader import (
    DatasetHandle,
    InstanceInfo,
    LoadedSample,
    LoadedScene,
    load_scene,
    open_dataset,
    parse_sample,
    sample_identity,
)

__all__ = [
    "ClientError",
    "DatasetHandle",
    "FormatError",
    "InstanceInfo",
    "IntegrityError",
    "LoadedSample",
    "LoadedScene",
    "PredictionOut",
    "ValidationReport",
    "Violation",
    "encode_runs",
    "load_scene",
    "open_dataset",
    "parse_sample",
    "relation_holds",
    "revalidate",
    "sample_identity",
    "write_predictions",
]
