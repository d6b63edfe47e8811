"""Checkpoint format: one JSON header line, then raw little-endian float64
payloads concatenated in header order."""

from __future__ import annotations

import json
from collections import OrderedDict

import numpy as np

FORMAT_NAME = "rulelens-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = [{"name": name, "shape": list(a.shape)} for name, a in arrays.items()]
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "tensors": entries,
        "meta": meta or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    with open(path, "rb") as f:
        header_line = f.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} file: {path}")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"truncated payload for tensor '{entry['name']}'")
            out[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out, header.get("meta", {})
