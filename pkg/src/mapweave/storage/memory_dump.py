"""Debug dump of the history memory as grayscale images."""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from mapweave.core.memory import HistoryMapMemory


def dump_memory(mem: HistoryMapMemory, out_dir: str | Path, frame_index: int) -> Path:
    """Write one 8-bit PGM per track plus ``index.json`` into ``out_dir``.

    Pixel value is ``round(255 * mask)``; the top image row is the
    window's largest y.

    Returns:
        Path of the index file
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for track_id in mem:
        entry = mem.get(track_id)
        pixels = np.rint(255.0 * np.flipud(entry.mask.grid)).astype(np.uint8)
        name = f"frame{frame_index:04d}_track{track_id:04d}.pgm"
        Image.fromarray(pixels).save(out_dir / name)
        entries.append(
            {
                "track_id": track_id,
                "class": entry.map_class.value,
                "last_update_frame": entry.last_update_frame,
                "file": name,
            }
        )
    index_path = out_dir / "index.json"
    with open(index_path, "w", encoding="utf-8") as f:
        json.dump({"frame_index": frame_index, "entries": entries}, f, indent=2)
    return index_path
