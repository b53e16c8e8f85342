"""Checkpoints and plot-ready artifacts, all written atomically.

Checkpoint layout (little-endian)::

    b"DCNT"  u16 version
    repeated until EOF: u16 name length, name (utf-8), u8 rank, rank x u32 dims,
                        prod(dims) f64 values

The magic is shared with dataset files; the two are told apart by role, not
content.  Arrays are stored sorted by name so equal states produce equal bytes.  A JSON
sidecar ``<path>.json`` carries the model configuration and provenance.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .connectivity import DIRECTION_NOTE
from .data import atomic_write_bytes
from .errors import FormatError
from .model import ModelConfig, ModelParams

CKPT_MAGIC = b"DCNT"
CKPT_VERSION = 1


def encode_state(state: dict[str, np.ndarray]) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION)]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_state(blob: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if blob[:4] != CKPT_MAGIC or len(blob) < 6:
        raise FormatError(f"{source}: not a checkpoint file")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    pos = 6
    state = {}
    try:
        while pos < len(blob):
            length, rank = struct.unpack_from("<HB", blob, pos)
            pos += 3
            name = blob[pos:pos + length].decode()
            pos += length
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(blob):
                raise FormatError(f"{source}: truncated array {name!r}")
            state[name] = np.frombuffer(blob, "<f8", count, pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except (struct.error, UnicodeDecodeError):
        raise FormatError(f"{source}: truncated or corrupt checkpoint") from None
    return state


def save_checkpoint(path: str | os.PathLike, params: ModelParams, meta: dict | None = None) -> None:
    """Write the state and a JSON sidecar with the model config."""
    meta = dict(meta or {})
    meta["model_config"] = params.config.to_dict()
    atomic_write_bytes(path, encode_state(params.state_dict()))
    write_json(sidecar(path), meta)


def sidecar(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelParams, dict]:
    """Rebuild a model from a checkpoint and its sidecar."""
    with open(path, "rb") as fh:
        blob = fh.read()
    with open(sidecar(path)) as fh:
        meta = json.load(fh)
    try:
        config = ModelConfig(**meta["model_config"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad checkpoint metadata ({exc})") from None
    params = ModelParams.init(config, 0)
    params.load_state_dict(decode_state(blob, str(path)))
    return params, meta


# ---------------------------------------------------------------------------
# reports


def write_json(path: str | os.PathLike, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
    atomic_write_bytes(path, text.encode())


def _provenance_line(provenance: dict) -> str:
    return "# " + ", ".join(f"{k}={provenance[k]}" for k in sorted(provenance)) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: str | os.PathLike, header: list[str], rows, provenance: dict) -> None:
    """CSV whose first line is a ``#`` comment holding the provenance fields."""
    buf = io.StringIO()
    buf.write(_provenance_line(provenance))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode())


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_matrix_csv(path, matrix, provenance: dict) -> None:
    m = np.asarray(matrix, dtype=float)
    header = ["row"] + [f"c{j}" for j in range(m.shape[1])]
    write_csv(path, header, ([i, *m[i]] for i in range(m.shape[0])), provenance)


def write_graph_csv(path, graphs, provenance: dict) -> None:
    """One row per timepoint holding the flattened ``n x n`` graph, plus a JSON note."""
    g = np.asarray(graphs, dtype=float)
    T, n, _ = g.shape
    header = ["t"] + [f"w{i}_{j}" for i in range(n) for j in range(n)]
    write_csv(path, header, ([t, *g[t].ravel()] for t in range(T)), provenance)
    write_json(sidecar(path), {**provenance, "direction": DIRECTION_NOTE, "n": n, "T": T,
                               "layout": "row-major n x n per line; column w{i}_{j} is W[i][j]"})


def write_edges_csv(path, edges, provenance: dict) -> None:
    write_csv(path, ["source", "target", "weight"], edges, provenance)


def write_alpha_csv(path, ids, alpha, provenance: dict) -> None:
    a = np.asarray(alpha, dtype=float)
    header = ["id"] + [f"t{t}" for t in range(a.shape[1])]
    write_csv(path, header, ([sid, *row] for sid, row in zip(ids, a)), provenance)
