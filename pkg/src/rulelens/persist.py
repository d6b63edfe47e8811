"""Deterministic on-disk formats: parameter checkpoints and packed boolean
matrices. Byte-identical output for identical input, no timestamps."""

from __future__ import annotations

import json
import math

import numpy as np


class PersistError(Exception):
    pass


PARAMS_FORMAT = "params-v1"
BITMATRIX_FORMAT = "bitmatrix-v1"


def save_params(path, params: dict, meta: dict | None = None) -> None:
    names = sorted(params)
    header = {
        "format": PARAMS_FORMAT,
        "meta": meta or {},
        "tensors": [
            {
                "name": n,
                "dtype": str(np.asarray(params[n]).dtype),
                "shape": list(np.asarray(params[n]).shape),
            }
            for n in names
        ],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            f.write(np.ascontiguousarray(params[n]).tobytes())


def load_params(path) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != PARAMS_FORMAT:
            raise PersistError(f"{path}: not a parameter checkpoint")
        arrays = {}
        for spec in header["tensors"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            buf = f.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise PersistError(f"{path}: truncated tensor '{spec['name']}'")
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
        return header["meta"], arrays


def save_bitmatrix(path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.dtype != bool:
        raise PersistError(f"expected a 2-d boolean matrix, got {m.dtype} {m.shape}")
    header = {"format": BITMATRIX_FORMAT, "shape": list(m.shape)}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(np.packbits(m, axis=1).tobytes())


def load_bitmatrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != BITMATRIX_FORMAT:
            raise PersistError(f"{path}: not a packed boolean matrix")
        rows, cols = header["shape"]
        packed = np.frombuffer(f.read(), dtype=np.uint8)
        per_row = math.ceil(cols / 8) if cols else 0
        if packed.size != rows * per_row:
            raise PersistError(f"{path}: truncated matrix payload")
        if cols == 0:
            return np.zeros((rows, 0), dtype=bool)
        bits = np.unpackbits(packed.reshape(rows, per_row), axis=1, count=cols)
        return bits.astype(bool)
