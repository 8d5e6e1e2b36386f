"""Prediction and ground-truth logs (JSON lines with a header line)."""

import json
from pathlib import Path
from typing import Iterable

from pydantic import ValidationError

from mapweave.errors import FormatError
from mapweave.models.records import InstanceRecord

PREDICTIONS_FORMAT = "mapweave-predictions/1"


def write_records(records: Iterable[InstanceRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": PREDICTIONS_FORMAT}) + "\n")
        for rec in records:
            f.write(json.dumps(rec.to_line_dict()) + "\n")
    return path


def read_records(path: str | Path) -> list[InstanceRecord]:
    """Read a log written by :func:`write_records`.

    Raises:
        FormatError: On a missing/unknown header or a malformed line
    """
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise FormatError(f"{path}: empty log")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: bad header line") from e
    if not isinstance(header, dict) or header.get("format") != PREDICTIONS_FORMAT:
        raise FormatError(f"{path}: expected format {PREDICTIONS_FORMAT!r}")

    records = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            records.append(InstanceRecord.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as e:
            raise FormatError(f"{path}:{number}: malformed record") from e
    return records
