"""Datasets, task pairs and their on-disk formats.

Binary dataset layout (little-endian)::

    b"OTDS"  u16 version  u32 n  u32 d  u32 num_classes
    n*d float32 features (row-major)
    n   uint32 labels

Matrix files (prediction matrices, coupling dumps) use the same header with a
different magic and no label section.  Manifests are JSON documents.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"OTDS"
PREDICTION_MAGIC = b"OTPM"
COUPLING_MAGIC = b"OTCP"
FORMAT_VERSION = 1
MANIFEST_VERSION = 1

_HEADER = struct.Struct("<4sHIII")


class DataFormatError(ValueError):
    """A file does not match its declared format."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Embedded samples of one classification task.

    Features are held as read-only float64 regardless of the file they came
    from.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"features must be an n x d matrix with n, d >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain NaN or infinite values")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(f"expected {x.shape[0]} labels, got shape {y.shape}")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        k = int(self.num_classes)
        if k < 1:
            raise ValueError("num_classes must be positive")
        if np.any(y < 0) or np.any(y >= k):
            raise ValueError(f"label out of range for num_classes={k}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", k)

    @classmethod
    def from_arrays(cls, features, labels, num_classes: int | None = None) -> "Dataset":
        labels = np.asarray(labels)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if labels.size else 1
        return cls(features, labels, num_classes)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def equals(self, other: "Dataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class TaskPair:
    source: Dataset
    target: Dataset
    pair_id: str = ""

    def __post_init__(self):
        if self.source.d != self.target.d:
            raise ValueError(
                f"pair {self.pair_id!r}: source d={self.source.d} != target d={self.target.d}"
            )


# -- binary ----------------------------------------------------------------------


def _read_header(buf: bytes, magic: bytes, path) -> tuple[int, int, int]:
    if len(buf) < _HEADER.size:
        raise DataFormatError(
            f"{path}: malformed header at byte 0: need {_HEADER.size} bytes, file has {len(buf)}"
        )
    got_magic, version, rows, cols, classes = _HEADER.unpack_from(buf, 0)
    if got_magic != magic:
        raise DataFormatError(f"{path}: malformed header at byte 0: bad magic {got_magic!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: malformed header at byte 4: unsupported version {version}")
    if rows < 1 or cols < 1:
        raise DataFormatError(f"{path}: malformed header at byte 6: empty shape {rows}x{cols}")
    return rows, cols, classes


def _write(path, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(payload)


def save_dataset(ds: Dataset, path, format: str = "binary") -> None:
    """Write ``ds``; binary stores features as float32."""
    if format == "binary":
        header = _HEADER.pack(DATASET_MAGIC, FORMAT_VERSION, ds.n, ds.d, ds.num_classes)
        feats = np.ascontiguousarray(ds.features, dtype="<f4").tobytes()
        labels = np.ascontiguousarray(ds.labels, dtype="<u4").tobytes()
        _write(path, header + feats + labels)
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row, label in zip(ds.features, ds.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])
    else:
        raise ValueError(f"unknown dataset format {format!r}")


def load_dataset(
    path,
    format: str = "binary",
    *,
    header: bool = False,
    num_classes: int | None = None,
) -> Dataset:
    """Read a dataset file.

    ``header`` and ``num_classes`` only apply to CSV: the former skips a
    header row, the latter declares the class count instead of inferring
    ``1 + max(label)``.
    """
    if format == "binary":
        return _load_binary_dataset(path)
    if format == "csv":
        return _load_csv_dataset(path, header=header, num_classes=num_classes)
    raise ValueError(f"unknown dataset format {format!r}")


def _load_binary_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    n, d, k = _read_header(buf, DATASET_MAGIC, path)
    if k < 1:
        raise DataFormatError(f"{path}: malformed header at byte 14: num_classes must be positive")
    start = _HEADER.size
    expected = start + 4 * n * d + 4 * n
    if len(buf) < expected:
        raise DataFormatError(
            f"{path}: truncated payload at byte {len(buf)}: expected {expected} bytes"
        )
    if len(buf) > expected:
        raise DataFormatError(f"{path}: trailing data at byte {expected}")
    feats = np.frombuffer(buf, dtype="<f4", count=n * d, offset=start)
    bad = np.flatnonzero(~np.isfinite(feats))
    if bad.size:
        raise DataFormatError(
            f"{path}: NaN or infinite feature at byte {start + 4 * int(bad[0])}"
        )
    lab_start = start + 4 * n * d
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=lab_start)
    bad = np.flatnonzero(labels >= k)
    if bad.size:
        raise DataFormatError(
            f"{path}: label out of range at byte {lab_start + 4 * int(bad[0])}: "
            f"{int(labels[bad[0]])} >= num_classes {k}"
        )
    return Dataset(feats.reshape(n, d).astype(np.float64), labels.astype(np.int64), k)


def _load_csv_dataset(path, *, header: bool, num_classes: int | None) -> Dataset:
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise DataFormatError(f"{path}: line {lineno}: need at least one feature and a label")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} columns, got {len(row)}"
                )
            try:
                values = [float(cell) for cell in row[:-1]]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if not all(np.isfinite(values)):
                raise DataFormatError(f"{path}: line {lineno}: NaN or infinite feature")
            try:
                label = int(row[-1])
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: bad label {row[-1]!r}") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DataFormatError(f"{path}: line {lineno}: label out of range: {label}")
            rows.append(values)
            labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    k = num_classes if num_classes is not None else max(labels) + 1
    return Dataset(np.array(rows), np.array(labels, dtype=np.int64), k)


def save_matrix(matrix, path, magic: bytes = PREDICTION_MAGIC) -> None:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError("matrix must be 2-d")
    header = _HEADER.pack(magic, FORMAT_VERSION, m.shape[0], m.shape[1], 0)
    _write(path, header + np.ascontiguousarray(m, dtype="<f4").tobytes())


def load_matrix(path, magic: bytes = PREDICTION_MAGIC) -> np.ndarray:
    buf = Path(path).read_bytes()
    rows, cols, _ = _read_header(buf, magic, path)
    expected = _HEADER.size + 4 * rows * cols
    if len(buf) != expected:
        raise DataFormatError(
            f"{path}: payload size mismatch at byte {min(len(buf), expected)}: "
            f"expected {expected} bytes, file has {len(buf)}"
        )
    out = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    bad = np.flatnonzero(~np.isfinite(out.ravel()))
    if bad.size:
        raise DataFormatError(f"{path}: non-finite value at byte {_HEADER.size + 4 * int(bad[0])}")
    return out.astype(np.float64)


def save_coupling(plan, path) -> None:
    """Dump a transport plan for inspection (float32, lossy)."""
    save_matrix(plan, path, magic=COUPLING_MAGIC)


def load_coupling(path) -> np.ndarray:
    return load_matrix(path, magic=COUPLING_MAGIC)


# -- manifests -------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    pair_id: str
    source_path: Path
    target_path: Path
    transfer_accuracy: float | None = None
    prediction_path: Path | None = None
    source_format: str = "binary"
    target_format: str = "binary"
    group: str | None = None
    source_id: str | None = None

    def load_pair(self) -> TaskPair:
        src = load_dataset(self.source_path, self.source_format)
        tgt = load_dataset(self.target_path, self.target_format)
        return TaskPair(src, tgt, self.pair_id)

    def load_predictions(self) -> np.ndarray:
        if self.prediction_path is None:
            raise FileNotFoundError(f"pair {self.pair_id!r} has no prediction matrix")
        return load_matrix(self.prediction_path)


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    meta: dict | None = None

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.pair_id in seen:
                raise ValueError(f"duplicate pair_id {e.pair_id!r}")
            seen.add(e.pair_id)
            acc = e.transfer_accuracy
            if acc is not None and not (0.0 <= acc <= 1.0):
                raise ValueError(f"pair {e.pair_id!r}: transfer_accuracy {acc} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def has_accuracies(self) -> bool:
        return all(e.transfer_accuracy is not None for e in self.entries)


def _infer_format(path: str) -> str:
    return "csv" if path.lower().endswith(".csv") else "binary"


def load_manifest(path, *, check_files: bool = True) -> Manifest:
    """Parse a JSON manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise DataFormatError(f"{path}: manifest needs an 'entries' list")
    version = doc.get("version", MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise DataFormatError(f"{path}: unsupported manifest version {version}")
    root = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else root / p

    entries = []
    for idx, raw in enumerate(doc["entries"]):
        try:
            pair_id = str(raw["pair_id"])
            src, tgt = raw["source"], raw["target"]
        except (KeyError, TypeError):
            raise DataFormatError(
                f"{path}: entry {idx} needs 'pair_id', 'source' and 'target'"
            ) from None
        acc = raw.get("transfer_accuracy")
        pred = raw.get("predictions")
        entry = ManifestEntry(
            pair_id=pair_id,
            source_path=resolve(src),
            target_path=resolve(tgt),
            transfer_accuracy=None if acc is None else float(acc),
            prediction_path=None if pred is None else resolve(pred),
            source_format=raw.get("source_format", _infer_format(src)),
            target_format=raw.get("target_format", _infer_format(tgt)),
            group=raw.get("group"),
            source_id=raw.get("source_id"),
        )
        if check_files:
            for p in (entry.source_path, entry.target_path, entry.prediction_path):
                if p is not None and not p.is_file():
                    raise FileNotFoundError(f"{path}: entry {pair_id!r}: missing file {p}")
        entries.append(entry)
    return Manifest(tuple(entries), doc.get("meta"))


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    root = path.parent.resolve()

    def rel(p: Path) -> str:
        try:
            return os.path.relpath(Path(p).resolve(), root)
        except ValueError:
            return str(Path(p).resolve())

    entries = []
    for e in manifest.entries:
        raw = {"pair_id": e.pair_id, "source": rel(e.source_path), "target": rel(e.target_path)}
        if e.source_format != _infer_format(raw["source"]):
            raw["source_format"] = e.source_format
        if e.target_format != _infer_format(raw["target"]):
            raw["target_format"] = e.target_format
        if e.transfer_accuracy is not None:
            raw["transfer_accuracy"] = e.transfer_accuracy
        if e.prediction_path is not None:
            raw["predictions"] = rel(e.prediction_path)
        if e.group is not None:
            raw["group"] = e.group
        if e.source_id is not None:
            raw["source_id"] = e.source_id
        entries.append(raw)
    doc = {"version": MANIFEST_VERSION, "entries": entries}
    if manifest.meta:
        doc["meta"] = manifest.meta
    path.write_text(json.dumps(doc, indent=2) + "\n")
