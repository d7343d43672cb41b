"""Self-contained writer for the pipeline's array + sidecar convention:
NPY v1.0 (little-endian float64, C order) next to `<name>.meta.json`."""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_npy(path: Path, arr: np.ndarray) -> None:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype="<f8"), version=(1, 0))
    _atomic_write(Path(path), buf.getvalue())


def write_feature(directory: str | Path, name: str, values: np.ndarray, sampling: dict,
                  story_offsets: list[int]) -> Path:
    """Emit `<name>.npy` + `<name>.meta.json` (+ `<name>.onsets.npy` for
    irregular sampling, whose dict then carries the onsets under "onsets")."""
    directory = Path(directory)
    npy_path = directory / f"{name}.npy"
    write_npy(npy_path, values)
    sampling = dict(sampling)
    if sampling["kind"] == "irregular":
        onsets = np.asarray(sampling.pop("onsets"), dtype=float)
        write_npy(directory / f"{name}.onsets.npy", onsets)
        sampling["onsets_path"] = f"{name}.onsets.npy"
    meta = {
        "name": name,
        "kind": "feature",
        "sampling": sampling,
        "story_offsets": [int(x) for x in story_offsets],
    }
    _atomic_write(directory / f"{name}.meta.json",
                  (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return npy_path


def read_words_tsv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """UTF-8 TSV, columns token<TAB>onset_s<TAB>duration_s."""
    texts: list[str] = []
    onsets: list[float] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns")
            texts.append(parts[0])
            onsets.append(float(parts[1]))
    return texts, np.asarray(onsets, dtype=float)
