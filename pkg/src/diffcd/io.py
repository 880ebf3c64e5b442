"""Deterministic on-disk formats: versioned binary checkpoints, line-delimited
history records, and run manifests.

The checkpoint format avoids zip containers on purpose: zip members carry
timestamps, which would break byte-identical reruns.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataError

MAGIC = b"DCDCKPT\x00"
VERSION = 1


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    """Write named float/int arrays plus a JSON metadata block.

    Layout: magic, version (u32 LE), header length (u64 LE), JSON header,
    then raw C-order array bytes in header order. Writes are atomic
    (write-then-rename).
    """
    manifest = []
    blobs = []
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name])
        manifest.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": manifest}, sort_keys=True).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        version = int.from_bytes(fh.read(4), "little")
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode())
        arrays = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return arrays, header["meta"]


def append_history(path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_history(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_manifest(path, config_dict: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_dict, fh, sort_keys=True, indent=2)
        fh.write("\n")
