"""Binary model container.

Layout: magic ``DNFM``, u16 version, u32 header length, a JSON architecture
descriptor (deterministically encoded), then every parameter tensor as raw
little-endian float64 in declaration order. Float payloads round-trip
bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import flows
from .dnf import ClassPrior, DnfModel
from .errors import ContractError
from .lda import LdaModel

_MAGIC = b"DNFM"
_VERSION = 1


def _build_block(desc):
    kind = desc["type"]
    if kind == "stack":
        return flows.FlowStack([_build_block(b) for b in desc["blocks"]], dim=desc["dim"])
    if kind == "reverse":
        return flows.Reverse(desc["dim"])
    if kind == "linear":
        return flows.LinearFlow(desc["dim"])
    if kind == "coupling":
        return flows.AffineCoupling(desc["dim"], width=desc["width"], split=desc["split"])
    if kind == "maf":
        return flows.MafBlock(desc["dim"], width=desc["width"], ordering=desc["ordering"])
    raise ContractError(f"unknown block type {kind!r}")


def _write(path, header, tensors):
    header = dict(header)
    header["tensors"] = [list(t.shape) for t in tensors]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ContractError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != _VERSION:
        raise ContractError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 6)
    header = json.loads(raw[10 : 10 + hlen].decode("utf-8"))
    tensors = []
    offset = 10 + hlen
    for shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        tensors.append(arr.astype(np.float64))
        offset += 8 * count
    if offset != len(raw):
        raise ContractError(f"{path}: trailing bytes in checkpoint")
    return header, tensors


def save_model(model, path):
    """Serialize a DnfModel or LdaModel."""
    if isinstance(model, DnfModel):
        header = {
            "kind": "dnf",
            "dim": model.dim,
            "num_classes": model.num_classes,
            "class_dim": model.class_dim,
            "flow": model.flow.descriptor(),
        }
        tensors = [p.value for p in model.flow.parameters()]
        tensors.append(model.prior.means.value)
        _write(path, header, tensors)
    elif isinstance(model, LdaModel):
        header = {
            "kind": "lda",
            "dim": model.dim,
            "num_classes": len(model.classes),
            "class_dim": model.reduced_dim,
            "classes": [int(c) for c in model.classes],
            "flow": {
                "type": "stack",
                "dim": model.dim,
                "blocks": [{"type": "linear", "dim": model.dim}],
            },
        }
        tensors = [model.projection, model.class_means, model.covariance]
        _write(path, header, tensors)
    else:
        raise ContractError(f"cannot checkpoint object of type {type(model).__name__}")


def load_model(path):
    """Inverse of :func:`save_model`."""
    header, tensors = _read(path)
    if header["kind"] == "dnf":
        flow = _build_block(header["flow"])
        params = flow.parameters()
        if len(tensors) != len(params) + 1:
            raise ContractError(f"{path}: tensor count does not match architecture")
        for p, t in zip(params, tensors[:-1]):
            if p.value.shape != t.shape:
                raise ContractError(f"{path}: tensor shape mismatch")
            p.value[...] = t
        prior = ClassPrior(
            header["num_classes"], header["dim"], header["class_dim"], means=tensors[-1]
        )
        return DnfModel(flow, prior)
    if header["kind"] == "lda":
        projection, class_means, covariance = tensors
        return LdaModel(
            projection=projection,
            class_means=class_means,
            covariance=covariance,
            reduced_dim=header["class_dim"],
            classes=np.asarray(header["classes"], dtype=np.int64),
        )
    raise ContractError(f"{path}: unknown model kind {header['kind']!r}")
