"""Parameter checkpoints.

Text format: the first line is ``mapweave-checkpoint/1``; every further
line is a JSON object ``{"name", "shape", "values"}`` with values flattened
row-major. Lines are sorted by name and floats use the shortest repr that
round-trips, so save/load is lossless.
"""

import json
from pathlib import Path

import numpy as np

from mapweave.core.params import ParameterStore
from mapweave.errors import FormatError

CHECKPOINT_FORMAT = "mapweave-checkpoint/1"


def save_checkpoint(store: ParameterStore, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(CHECKPOINT_FORMAT + "\n")
        for name, values in store.state_dict().items():
            entry = {"name": name, "shape": list(values.shape), "values": values.reshape(-1).tolist()}
            f.write(json.dumps(entry) + "\n")
    return path


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a checkpoint into name -> array.

    Raises:
        FormatError: On a bad header or malformed entry
    """
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: expected header {CHECKPOINT_FORMAT!r}")
    state = {}
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            state[entry["name"]] = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise FormatError(f"{path}:{number}: malformed parameter entry") from e
    return state


def load_checkpoint(store: ParameterStore, path: str | Path) -> ParameterStore:
    """Load values into an existing store (names and shapes must agree)."""
    store.load_state_dict(read_checkpoint(path))
    return store
