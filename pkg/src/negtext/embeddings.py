"""Core domain types: embedding matrices, label spaces, negative spaces.

All vectors are L2-normalized on ingestion so downstream similarities are
plain dot products. The on-disk format is a small binary container with a
JSON identifier sidecar (see `save_embeddings` / `load_embeddings`).
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimError, FormatError, InputError

MAGIC = b"NSPC"
FORMAT_VERSION = 1

# Rows whose norm already sits within this band are left untouched, which
# makes normalization idempotent at float32 resolution (bitwise-stable
# round trips through the file format).
_NORM_SKIP_TOL = 1e-6


def _normalize_rows(data: np.ndarray) -> np.ndarray:
    out = np.array(data, dtype=np.float64, copy=True)
    norms = np.linalg.norm(out, axis=1)
    if np.any(norms == 0.0):
        raise DataError("zero-norm row cannot be normalized")
    needs = np.abs(norms - 1.0) > _NORM_SKIP_TOL
    if np.any(needs):
        out[needs] /= norms[needs, None]
    return out


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-major matrix of unit-norm vectors with one id per row."""

    ids: tuple[str, ...]
    data: np.ndarray  # (rows, dim) float64, unit-norm rows

    def __post_init__(self):
        if self.data.ndim != 2:
            raise DataError("expected a 2-D array")
        if len(self.ids) != self.data.shape[0]:
            raise DataError(
                f"{len(self.ids)} ids for {self.data.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate row ids")
        if not np.all(np.isfinite(self.data)):
            raise DataError("non-finite entries in embedding matrix")
        self.data.setflags(write=False)

    @classmethod
    def from_rows(cls, ids, data) -> "EmbeddingMatrix":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise DataError("expected a 2-D array")
        if not np.all(np.isfinite(data)):
            raise DataError("non-finite entries in embedding matrix")
        return cls(ids=tuple(ids), data=_normalize_rows(data))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def select(self, indices) -> "EmbeddingMatrix":
        idx = list(indices)
        return EmbeddingMatrix(
            ids=tuple(self.ids[i] for i in idx),
            data=np.array(self.data[idx], dtype=np.float64),
        )


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(min(1.0, max(-1.0, float(np.dot(a, b)))))


def save_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Write the binary container plus the `<file>.ids.json` sidecar."""
    path = Path(path)
    header = MAGIC + struct.pack(
        "<IQI", FORMAT_VERSION, matrix.rows, matrix.dim
    )
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    sidecar = path.with_name(path.name + ".ids.json")
    sidecar.write_text(json.dumps(list(matrix.ids)), encoding="utf-8")


def load_embeddings(path) -> EmbeddingMatrix:
    """Read the binary container; rows are renormalized to unit norm."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20:
        raise FormatError(f"{path}: truncated header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, rows, dim = struct.unpack("<IQI", raw[4:20])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 20 + rows * dim * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload size {len(raw) - 20}, expected {expected - 20}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=20).astype(np.float64)
    data = data.reshape(rows, dim)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite entries")
    sidecar = path.with_name(path.name + ".ids.json")
    if not sidecar.exists():
        raise FormatError(f"{path}: missing id sidecar {sidecar.name}")
    ids = json.loads(sidecar.read_text(encoding="utf-8"))
    if not isinstance(ids, list) or len(ids) != rows:
        raise DataError(
            f"{path}: sidecar has {len(ids)} ids for {rows} rows"
        )
    return EmbeddingMatrix(ids=tuple(ids), data=_normalize_rows(data))


def _canon_label(label: str) -> str:
    return " ".join(label.casefold().split())


@dataclass(frozen=True)
class LabelSpace:
    """Ordered ID class names with their text features."""

    labels: tuple[str, ...]
    features: EmbeddingMatrix
    prompt_template: str = "The nice <label>."

    def __post_init__(self):
        if len(self.labels) < 1:
            raise DataError("label space needs at least one class")
        canon = [_canon_label(l) for l in self.labels]
        if len(set(canon)) != len(canon):
            raise DataError("labels collide after case folding")
        if self.features.rows != len(self.labels):
            raise DataError(
                f"{self.features.rows} feature rows for {len(self.labels)} labels"
            )
        if "<label>" not in self.prompt_template:
            raise DataError("prompt template must contain '<label>'")

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def canon_labels(self) -> frozenset[str]:
        return frozenset(_canon_label(l) for l in self.labels)

    @classmethod
    def from_manifest(cls, path) -> "LabelSpace":
        path = Path(path)
        spec = json.loads(path.read_text(encoding="utf-8"))
        features = load_embeddings(path.parent / spec["features"])
        return cls(
            labels=tuple(spec["labels"]),
            features=features,
            prompt_template=spec.get("prompt_template", "The nice <label>."),
        )

    def save_manifest(self, path, features_name: str) -> None:
        path = Path(path)
        save_embeddings(self.features, path.parent / features_name)
        path.write_text(
            json.dumps(
                {
                    "labels": list(self.labels),
                    "prompt_template": self.prompt_template,
                    "features": features_name,
                },
                indent=2,
            ),
            encoding="utf-8",
        )


class SpaceKind(enum.Enum):
    NL = "nl"
    ENS = "ens"
    VSNL = "vsnl"


@dataclass(frozen=True)
class NegativeSpace:
    """A named set of negative texts partitioned into scoring groups."""

    kind: SpaceKind
    texts: tuple[str, ...]
    features: EmbeddingMatrix
    group_size: int
    epoch: int = 0

    def __post_init__(self):
        if len(self.texts) < 1:
            raise DataError("negative space must be non-empty")
        if self.features.rows != len(self.texts):
            raise DataError("feature rows do not match texts")
        if self.group_size < 1:
            raise DataError("group size must be >= 1")

    @property
    def size(self) -> int:
        return len(self.texts)

    @property
    def n_groups(self) -> int:
        return -(-self.size // self.group_size)

    def group_slices(self) -> list[slice]:
        g = self.group_size
        return [slice(i, min(i + g, self.size)) for i in range(0, self.size, g)]


def assert_disjoint(texts, label_space: LabelSpace) -> None:
    """Case-folded exact-match disjointness check against ID labels."""
    id_canon = label_space.canon_labels()
    clashes = [t for t in texts if _canon_label(t) in id_canon]
    if clashes:
        raise InputError(f"negative texts collide with ID labels: {clashes[:5]}")


@dataclass(frozen=True)
class TestBatch:
    """One batch of test-image embeddings, optionally tagged for evaluation."""

    __test__ = False  # not a pytest class despite the name

    images: EmbeddingMatrix
    ground_truth: tuple[str, ...] | None = None  # per-row "ID" / "OOD"

    def __post_init__(self):
        if self.ground_truth is not None:
            if len(self.ground_truth) != self.images.rows:
                raise DataError("ground truth length does not match images")
            bad = set(self.ground_truth) - {"ID", "OOD"}
            if bad:
                raise DataError(f"unknown ground-truth tags: {bad}")
