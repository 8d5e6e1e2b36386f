"""Scenario files: one YAML document per scenario."""

from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from mapweave.config import WorldConfig
from mapweave.core.geometry import BevWindow, Polyline, Se2Pose
from mapweave.core.world import Scenario
from mapweave.errors import FormatError
from mapweave.models.map_instance import MapClass, MapInstance

SCENARIO_FORMAT = "mapweave-scenario/1"


def scenario_to_dict(scenario: Scenario) -> dict:
    w = scenario.window
    return {
        "format": SCENARIO_FORMAT,
        "scenario_id": scenario.scenario_id,
        "seed": scenario.seed,
        "n_points": scenario.n_points,
        "channels": scenario.channels,
        "window": {
            "x_min": float(w.x_min),
            "x_max": float(w.x_max),
            "y_min": float(w.y_min),
            "y_max": float(w.y_max),
            "resolution": float(w.resolution),
        },
        "world": scenario.world.model_dump(mode="json"),
        "ego_poses": [[p.x, p.y, p.theta] for p in scenario.ego_poses],
        "instances": [
            {
                "id": inst.instance_id,
                "class": inst.map_class.value,
                "closed": inst.polyline.closed,
                "points": inst.polyline.points.tolist(),
            }
            for inst in scenario.instances
        ],
    }


def scenario_from_dict(data: dict) -> Scenario:
    """Rebuild a scenario from its document.

    Raises:
        FormatError: If the header is missing or the document is malformed
    """
    if not isinstance(data, dict) or data.get("format") != SCENARIO_FORMAT:
        found = data.get("format") if isinstance(data, dict) else None
        raise FormatError(f"expected format {SCENARIO_FORMAT!r}, found {found!r}")
    try:
        instances = [
            MapInstance(
                int(item["id"]),
                MapClass(item["class"]),
                Polyline(np.array(item["points"], dtype=np.float64), closed=bool(item["closed"])),
            )
            for item in data["instances"]
        ]
        return Scenario(
            scenario_id=str(data["scenario_id"]),
            seed=int(data["seed"]),
            window=BevWindow(**data["window"]),
            instances=instances,
            ego_poses=[Se2Pose(*pose) for pose in data["ego_poses"]],
            world=WorldConfig(**data["world"]),
            n_points=int(data["n_points"]),
            channels=int(data["channels"]),
        )
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise FormatError(f"malformed scenario document: {e}") from e


def write_scenario(scenario: Scenario, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(scenario_to_dict(scenario), f, sort_keys=False, default_flow_style=None)
    return path


def read_scenario(path: str | Path) -> Scenario:
    """Load a scenario file.

    Raises:
        FileNotFoundError: If the file does not exist
        FormatError: If it is not a scenario document
    """
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise FormatError(f"{path}: not valid YAML: {e}") from e
    return scenario_from_dict(data)


INDEX_FORMAT = "mapweave-scenario-index/1"
INDEX_NAME = "index.yaml"


def write_index(names: list[str], out_dir: str | Path) -> Path:
    """Write the index listing scenario files (relative to ``out_dir``)."""
    path = Path(out_dir) / INDEX_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump({"format": INDEX_FORMAT, "scenarios": list(names)}, f, sort_keys=False)
    return path


def read_index(path: str | Path) -> list[Path]:
    """Scenario paths named by an index file.

    Raises:
        FormatError: If the file is not a scenario index
    """
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise FormatError(f"{path}: not valid YAML: {e}") from e
    if not isinstance(data, dict) or data.get("format") != INDEX_FORMAT:
        raise FormatError(f"{path}: expected format {INDEX_FORMAT!r}")
    return [path.parent / name for name in data.get("scenarios") or []]


def expand_scenario_paths(paths: list[str | Path]) -> list[Path]:
    """Resolve files, index files and directories into scenario files.

    A directory is read through its index when it has one, otherwise
    every ``*.yaml`` in it is taken in name order.
    """
    files: list[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            index = path / INDEX_NAME
            if index.exists():
                files.extend(read_index(index))
            else:
                files.extend(p for p in sorted(path.glob("*.yaml")) if p.name != INDEX_NAME)
        elif path.name == INDEX_NAME:
            files.extend(read_index(path))
        else:
            files.append(path)
    return files
