"""
On-disk formats for heatmaps and run manifests.

PGM: `P5\\n<width> <height>\\n65535\\n`, then big-endian uint16 samples row by row,
each round(65535 * v / max(v)); an all-zero grid is written as zeros. Convert to PNG
with any netpbm-aware tool, e.g. `pnmtopng heat.pgm > heat.png`.

Heatmap CSV: one line per grid row, comma-separated floats at repr precision.
"""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np

import settings

PGM_MAXVAL = 65535


def write_pgm(path: str | Path, values: np.ndarray) -> Path:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"PGM output needs a 2-D grid, got shape {values.shape}")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("PGM output needs finite nonnegative values")
    peak = float(values.max()) if values.size else 0.0
    scaled = np.zeros(values.shape) if peak <= 0 else np.rint(PGM_MAXVAL * values / peak)
    height, width = values.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii"))
        f.write(scaled.astype(">u2").tobytes())
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    """Samples of a 16-bit P5 file as floats in [0, 1] (relative to maxval)."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"Truncated PGM header in '{path}'")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"'{path}' is not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    count = width * height
    samples = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return samples.reshape(height, width).astype(float) / maxval


def write_heatmap_csv(path: str | Path, values: np.ndarray) -> Path:
    values = np.asarray(values, dtype=float)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        for row in values:
            writer.writerow([repr(float(v)) for v in row])
    return path


def read_heatmap_csv(path: str | Path) -> np.ndarray:
    with open(path, "r", newline="", encoding="utf-8") as f:
        rows = [[float(v) for v in row] for row in csv.reader(f) if row]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"Heatmap CSV '{path}' must hold a nonempty rectangular grid")
    return np.array(rows)


def read_heatmap(path: str | Path) -> np.ndarray:
    """PGM or CSV by extension."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".csv":
        return read_heatmap_csv(path)
    raise ValueError(f"Unsupported heatmap format '{suffix}'; expected .pgm or .csv")


def write_heatmap(path: str | Path, values: np.ndarray) -> Path:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return write_pgm(path, values)
    if suffix == ".csv":
        return write_heatmap_csv(path, values)
    raise ValueError(f"Unsupported heatmap format '{suffix}'; expected .pgm or .csv")


def library_versions() -> dict:
    import numpy
    import scipy
    versions = {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__}
    try:
        from importlib.metadata import version
        versions["ortools"] = version("ortools")
    except Exception:
        versions["ortools"] = "unknown"
    return versions


def write_manifest(out_dir: str | Path, name: str, config: dict, outputs: list) -> Path:
    """Run manifest: config, seed, versions and output files, written as <out_dir>/<name>.manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "project": settings.PROJECT_NAME,
        "version": settings.VERSION,
        "libraries": library_versions(),
        "config": config,
        "seed": config.get("seed"),
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / f"{name}.manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str, ensure_ascii=True), encoding="utf-8")
    return path
