"""Labeled feature datasets: synthetic Gaussian blobs plus CSV and binary file formats.

Features are stored d x n (one example per column) in float64.  The binary
format is little-endian: magic "KDA1", u32 n, u32 d, n*d float32 features
(example-major), then n u32 labels.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .matrix import as_matrix

BINARY_MAGIC = b"KDA1"
_HEADER = struct.Struct("<4sII")


class FormatError(ValueError):
    """A dataset file does not match its declared format."""


@dataclass
class LabeledDataset:
    """Feature columns with integer class labels and an optional train/test split."""

    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.features = as_matrix(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[1],):
            raise ValueError(
                f"expected {self.features.shape[1]} labels, got shape {self.labels.shape}"
            )
        if self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def train_split(self) -> tuple[np.ndarray, np.ndarray]:
        if self.train_idx is None:
            raise ValueError("dataset has no train/test split")
        return self.features[:, self.train_idx], self.labels[self.train_idx]

    def test_split(self) -> tuple[np.ndarray, np.ndarray]:
        if self.test_idx is None:
            raise ValueError("dataset has no train/test split")
        return self.features[:, self.test_idx], self.labels[self.test_idx]


def stratified_split(labels: np.ndarray, train_fraction: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class split: shuffle each class's indices, first chunk goes to train."""
    train_parts = []
    test_parts = []
    for label in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == label)
        members = members[rng.permutation(members.size)]
        cut = int(members.size * train_fraction)
        train_parts.append(members[:cut])
        test_parts.append(members[cut:])
    return np.concatenate(train_parts), np.concatenate(test_parts)


def generate_blobs(classes: int, dim: int, per_class: int, separation: float,
                   sigma: float, seed: int) -> LabeledDataset:
    """Gaussian blobs around class means sampled on a sphere of radius ``separation``.

    Deterministic per seed; comes with a stratified 80/20 train/test split.
    """
    if classes < 2:
        raise ValueError("classes must be >= 2")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if per_class < 2:
        raise ValueError("per_class must be >= 2")
    if not separation > 0:
        raise ValueError("separation must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((dim, classes))
    means *= separation / np.linalg.norm(means, axis=0, keepdims=True)
    features = np.empty((dim, classes * per_class))
    labels = np.empty(classes * per_class, dtype=np.int64)
    for label in range(classes):
        block = slice(label * per_class, (label + 1) * per_class)
        features[:, block] = means[:, [label]] + sigma * rng.standard_normal((dim, per_class))
        labels[block] = label
    train_idx, test_idx = stratified_split(labels, 0.8, rng)
    return LabeledDataset(features, labels, train_idx=train_idx, test_idx=test_idx)


def infer_format(path) -> str:
    return "csv" if Path(path).suffix.lower() == ".csv" else "f32-binary"


def save_dataset(dataset: LabeledDataset, path, format: str | None = None) -> None:
    """Write features + labels as csv or f32-binary (split indices are not stored)."""
    fmt = format or infer_format(path)
    if fmt == "csv":
        _save_csv(dataset, path)
    elif fmt == "f32-binary":
        _save_binary(dataset, path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def load_dataset(path, format: str | None = None) -> LabeledDataset:
    """Read a dataset written by save_dataset, validating structure and labels.

    Labels must cover 0..max(label) with no gaps; features must be finite.
    Raises FormatError naming the offending row (csv) or byte offset (binary).
    """
    fmt = format or infer_format(path)
    if fmt == "csv":
        features, labels = _load_csv(path)
    elif fmt == "f32-binary":
        features, labels = _load_binary(path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    present = np.bincount(labels)
    gaps = np.flatnonzero(present == 0)
    if gaps.size:
        raise FormatError(f"{path}: label gap, class {int(gaps[0])} has no examples")
    return LabeledDataset(features, labels)


def _save_csv(dataset: LabeledDataset, path) -> None:
    d = dataset.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(d)] + ["label"])
        for i in range(dataset.n):
            writer.writerow([repr(float(v)) for v in dataset.features[:, i]]
                            + [int(dataset.labels[i])])


def _load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        d = len(header) - 1
        if d < 1 or header != [f"f{j}" for j in range(d)] + ["label"]:
            raise FormatError(f"{path}: malformed header {header!r}")
        rows = []
        labels = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise FormatError(f"{path}: row {row_no}: expected {d + 1} fields, got {len(row)}")
            try:
                values = [float(v) for v in row[:d]]
                label = int(row[d])
            except ValueError:
                raise FormatError(f"{path}: row {row_no}: unparseable value") from None
            if not all(np.isfinite(values)):
                raise FormatError(f"{path}: row {row_no}: non-finite feature")
            if label < 0:
                raise FormatError(f"{path}: row {row_no}: negative label")
            rows.append(values)
            labels.append(label)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return np.asarray(rows).T, np.asarray(labels, dtype=np.int64)


def _save_binary(dataset: LabeledDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BINARY_MAGIC, dataset.n, dataset.dim))
        fh.write(np.ascontiguousarray(dataset.features.T, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes())


def _load_binary(path) -> tuple[np.ndarray, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}")
    magic, n, d = _HEADER.unpack_from(blob)
    if magic != BINARY_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: invalid dimensions n={n}, d={d}")
    feat_end = _HEADER.size + 4 * n * d
    total = feat_end + 4 * n
    if len(blob) != total:
        kind = "truncated" if len(blob) < total else "trailing bytes"
        raise FormatError(f"{path}: {kind} at byte {min(len(blob), total)}, expected {total} bytes")
    features = np.frombuffer(blob, dtype="<f4", count=n * d, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(features))
    if bad.size:
        offset = _HEADER.size + 4 * int(bad[0])
        raise FormatError(f"{path}: non-finite feature at byte {offset}")
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=feat_end)
    return features.reshape(n, d).T.astype(np.float64), labels.astype(np.int64)
