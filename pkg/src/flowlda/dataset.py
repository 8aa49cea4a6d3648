"""Labeled vector datasets and their on-disk formats.

Binary format (``.dnfv``): magic ``DNFV``, u8 version 1, then little-endian
u32 dim, u32 record count, and per record a u32 class id followed by ``dim``
float32 features. The CSV format has header ``label,f0,f1,...`` with one
record per line.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError

_MAGIC = b"DNFV"
_VERSION = 1


@dataclass
class LabeledDataset:
    """Observation vectors with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise DimensionError("labels must be 1-D with one entry per feature row")
        if not np.all(np.isfinite(self.features)):
            raise ContractError("features contain non-finite values")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        return len(np.unique(self.labels))

    def class_indices(self):
        """Mapping from label value to row indices, in sorted label order."""
        return {int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels)}

    def subset(self, idx):
        return LabeledDataset(self.features[idx], self.labels[idx])


def save_dnfv1(dataset, path):
    if np.any(dataset.labels < 0) or np.any(dataset.labels > 0xFFFFFFFF):
        raise ContractError("binary format stores labels as u32; labels must be in [0, 2^32)")
    feats = dataset.features.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        fh.write(struct.pack("<II", dataset.dim, len(dataset)))
        for label, row in zip(dataset.labels, feats):
            fh.write(struct.pack("<I", int(label)))
            fh.write(row.tobytes())


def load_dnfv1(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ContractError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<B", raw, 4)
    if version != _VERSION:
        raise ContractError(f"{path}: unsupported version {version}")
    dim, count = struct.unpack_from("<II", raw, 5)
    record = 4 + 4 * dim
    body = raw[13:]
    if len(body) != record * count:
        raise ContractError(f"{path}: truncated file")
    labels = np.empty(count, dtype=np.int64)
    feats = np.empty((count, dim), dtype=np.float64)
    for i in range(count):
        off = i * record
        (labels[i],) = struct.unpack_from("<I", body, off)
        feats[i] = np.frombuffer(body, dtype="<f4", count=dim, offset=off + 4)
    return LabeledDataset(feats, labels)


def save_csv(dataset, path):
    header = "label," + ",".join(f"f{i}" for i in range(dataset.dim))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for label, row in zip(dataset.labels, dataset.features):
            fh.write(str(int(label)) + "," + ",".join(f"{v:.17g}" for v in row) + "\n")


def load_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("label,"):
            raise ContractError(f"{path}: expected header starting with 'label,'")
        rows = []
        labels = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    if not rows:
        raise ContractError(f"{path}: no records")
    return LabeledDataset(np.asarray(rows), np.asarray(labels))


def save(dataset, path, fmt="dnfv1"):
    if fmt == "dnfv1":
        save_dnfv1(dataset, path)
    elif fmt == "csv":
        save_csv(dataset, path)
    else:
        raise ContractError(f"unknown dataset format {fmt!r}")


def load(path, fmt=None):
    if fmt is None:
        fmt = "csv" if str(path).endswith(".csv") else "dnfv1"
    return load_csv(path) if fmt == "csv" else load_dnfv1(path)
