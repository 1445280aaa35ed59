"""Plain-text serialization of matrices, trajectories, partitions and chains.

Matrix CSV: the first line holds the dimensions ``p,q``; each following line is
one row, floats written with ``repr`` so values round-trip exactly.
JSON envelope: ``{"p": .., "q": .., "entries": [[..], ..], "kind": ..}``.
"""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, TextIO, Union

import numpy as np

from statecompress.errors import DimensionError, SchemaError, ValidationError
from statecompress.kmeans import PartitionLabels

PathLike = Union[str, os.PathLike]
MATRIX_KINDS = ("stochastic", "frequency", "basis", "matrix", "counts")


def _float(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise ValidationError(f"not a number: {s!r}") from None


def format_matrix_csv(M) -> str:
    M = np.atleast_2d(np.asarray(M))
    lines = [f"{M.shape[0]},{M.shape[1]}"]
    for row in M:
        lines.append(",".join(repr(float(x)) if M.dtype.kind == "f" else str(int(x)) for x in row))
    return "\n".join(lines) + "\n"


def parse_matrix_csv(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if not rows:
        raise ValidationError("empty matrix file")
    head = rows[0].split(",")
    try:
        p, q = int(head[0]), int(head[1])
        if len(head) != 2:
            raise ValueError
    except (ValueError, IndexError):
        raise SchemaError(f"matrix CSV must start with a 'p,q' header, got {rows[0]!r}") from None
    body = [[_float(x) for x in line.split(",")] for line in rows[1:]]
    if len(body) != p or any(len(r) != q for r in body):
        raise DimensionError(f"header declares {p}x{q} but the body does not match")
    return np.asarray(body, dtype=np.float64).reshape(p, q)


def matrix_envelope(M, kind: str = "matrix", **extra) -> Dict[str, Any]:
    if kind not in MATRIX_KINDS:
        raise ValidationError(f"unknown matrix kind {kind!r}")
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    out = {"p": int(M.shape[0]), "q": int(M.shape[1]), "entries": M.tolist(), "kind": kind}
    out.update(extra)
    return out


def matrix_from_envelope(d: Dict[str, Any]) -> np.ndarray:
    for key in ("p", "q", "entries"):
        if key not in d:
            raise SchemaError(f"matrix envelope lacks {key!r}")
    M = np.asarray(d["entries"], dtype=np.float64)
    if M.shape != (d["p"], d["q"]):
        raise DimensionError(f"envelope declares {d['p']}x{d['q']} but entries are {M.shape}")
    return M


def read_matrix(path: PathLike) -> np.ndarray:
    """Read a matrix from a ``.json`` envelope or a matrix CSV."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        try:
            return matrix_from_envelope(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return parse_matrix_csv(text)


def write_matrix(M, path: PathLike, kind: str = "matrix") -> None:
    if str(path).endswith(".json"):
        Path(path).write_text(json.dumps(matrix_envelope(M, kind)) + "\n")
    else:
        Path(path).write_text(format_matrix_csv(M))


def format_trajectory(states) -> str:
    return "".join(f"{int(s)}\n" for s in np.asarray(states).ravel())


def parse_trajectory(text: str) -> np.ndarray:
    out = []
    for i, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise ValidationError(f"line {i + 1}: not an integer state {line!r}") from None
    return np.asarray(out, dtype=np.int64)


def read_trajectory(path: PathLike) -> np.ndarray:
    return parse_trajectory(Path(path).read_text())


def write_trajectory(states, path: PathLike) -> None:
    Path(path).write_text(format_trajectory(states))


def format_partition_csv(partition: PartitionLabels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state", "block"])
    for i, b in enumerate(partition.labels):
        w.writerow([i, int(b)])
    return buf.getvalue()


def parse_partition_csv(text: str, r: Optional[int] = None) -> PartitionLabels:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"state", "block"} <= set(reader.fieldnames):
        raise SchemaError("partition CSV needs 'state' and 'block' columns")
    pairs = []
    for row in reader:
        try:
            pairs.append((int(row["state"]), int(row["block"])))
        except (TypeError, ValueError):
            raise ValidationError(f"bad partition row {row!r}") from None
    if not pairs:
        raise ValidationError("partition CSV has no rows")
    pairs.sort()
    states = [s for s, _ in pairs]
    if states != list(range(len(states))):
        raise ValidationError("partition CSV must list states 0..p-1 exactly once")
    labels = np.asarray([b for _, b in pairs], dtype=np.int64)
    return PartitionLabels(labels, r if r is not None else int(labels.max()) + 1)


def read_partition(path: PathLike, r: Optional[int] = None) -> PartitionLabels:
    return parse_partition_csv(Path(path).read_text(), r)


def write_partition(partition: PartitionLabels, path: PathLike) -> None:
    Path(path).write_text(format_partition_csv(partition))


def chain_bundle(chain, **metadata) -> Dict[str, Any]:
    """JSON-ready bundle of a ground-truth chain (P, pi, partition, metadata)."""
    meta = {"rank": int(chain.rank)}
    meta.update(metadata)
    return {
        "P": matrix_envelope(chain.P, "stochastic"),
        "pi": chain.pi.probs.tolist(),
        "partition": None if chain.partition is None else chain.partition.labels.tolist(),
        "r": None if chain.partition is None else int(chain.partition.r),
        "metadata": meta,
    }


def write_json(obj, path_or_stream: Union[PathLike, TextIO]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(text)
    else:
        Path(path_or_stream).write_text(text)
