"""Checkpoint container: canonical JSON header plus raw float64 blobs.

Layout:

    bytes 0..3    magic b"PSCK"
    bytes 4..7    format version, uint32 little-endian
    bytes 8..15   header length in bytes, uint64 little-endian
    header        canonical JSON (sorted keys, no whitespace), utf-8
    blobs         concatenated C-order little-endian float64 arrays

The header carries config, epoch, metric history, RNG bookkeeping and a
manifest entry per tensor (name, shape, offset, nbytes, sha256). Loads
verify every digest, so silent corruption is impossible; saves are
written to a temp file and renamed, so a crash cannot leave a partial
checkpoint under the final name.

Round trip is bit-exact: save(load(p)) produces the same bytes as p.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (CheckpointIntegrityError, CheckpointVersionError,
                     ContractViolation)

MAGIC = b"PSCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    epoch: int
    tensors: dict                      # name -> float64 ndarray
    history: list = field(default_factory=list)
    rng: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def tensor(self, name):
        if name not in self.tensors:
            raise ContractViolation(f"checkpoint has no tensor {name!r}")
        return self.tensors[name]


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path):
    names = sorted(ckpt.tensors)
    manifest = []
    blobs = []
    offset = 0
    for name in names:
        # tobytes copies in C order itself; ascontiguousarray would
        # silently promote 0-d tensors to shape (1,).
        arr = np.asarray(ckpt.tensors[name], dtype=np.float64)
        raw = arr.astype("<f8", copy=False).tobytes(order="C")
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        blobs.append(raw)
        offset += len(raw)

    header = _canonical({
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "rng": ckpt.rng,
        "extra": ckpt.extra,
        "tensors": manifest,
    })

    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(FORMAT_VERSION.to_bytes(4, "little"))
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for raw in blobs:
            f.write(raw)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointIntegrityError(f"{path}: not a checkpoint file", offset=0)
    version = int.from_bytes(data[4:8], "little")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    header_len = int.from_bytes(data[8:16], "little")
    header_end = 16 + header_len
    if len(data) < header_end:
        raise CheckpointIntegrityError(f"{path}: truncated header", offset=len(data))
    try:
        header = json.loads(data[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointIntegrityError(f"{path}: unreadable header: {e}", offset=16)

    blob_base = header_end
    tensors = {}
    for entry in header["tensors"]:
        start = blob_base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(data):
            raise CheckpointIntegrityError(
                f"{path}: tensor {entry['name']!r} extends past end of file",
                offset=len(data))
        raw = data[start:end]
        digest = hashlib.sha256(raw).hexdigest()
        if digest != entry["sha256"]:
            raise CheckpointIntegrityError(
                f"{path}: tensor {entry['name']!r} fails its digest", offset=start)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
        tensors[entry["name"]] = arr

    return Checkpoint(config=header["config"], epoch=header["epoch"],
                      tensors=tensors, history=header["history"],
                      rng=header["rng"], extra=header["extra"])


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
