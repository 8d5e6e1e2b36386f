"""Run manifests: everything needed to replay a run."""

from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError

from mapweave.errors import FormatError

MANIFEST_FORMAT = "mapweave-manifest/1"


class RunManifest(BaseModel):
    """Inputs and outputs of one ``mapweave run``."""

    format: Literal["mapweave-manifest/1"] = MANIFEST_FORMAT
    mode: Literal["train", "infer"]
    seed: int
    epochs: Optional[int] = None
    config: dict[str, Any] = Field(..., description="Full configuration snapshot")
    scenarios: list[str] = Field(default_factory=list)
    checkpoint: Optional[str] = Field(default=None, description="Checkpoint read (infer)")
    checkpoint_out: Optional[str] = Field(default=None, description="Checkpoint written (train)")
    out_dir: str
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    completed_at: Optional[datetime] = None


def write_manifest(manifest: RunManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest.model_dump(mode="json"), f, sort_keys=False)
    return path


def read_manifest(path: str | Path) -> RunManifest:
    """Load a manifest.

    Raises:
        FormatError: On a bad header or invalid content
    """
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise FormatError(f"{path}: not valid YAML") from e
    if not isinstance(data, dict) or data.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: expected format {MANIFEST_FORMAT!r}")
    try:
        return RunManifest.model_validate(data)
    except ValidationError as e:
        raise FormatError(f"{path}: invalid manifest: {e}") from e
