"""Parameter checkpoint container.

Flat binary file: a little-endian uint64 header length, a UTF-8 JSON index
``{"version", "meta", "arrays": {name: {"shape", "offset"}}}``, then the
raw float64 (little-endian, C-order) array payload. Offsets are in bytes
from the start of the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = "sdc-ckpt-1"


class CheckpointMismatch(ValueError):
    """Checkpoint contents do not match what the consumer expects."""


class ParameterStore:
    """Ordered mapping of parameter names to float64 arrays."""

    def __init__(self, arrays: dict | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        if arrays:
            for name, arr in arrays.items():
                self[name] = arr

    def __setitem__(self, name: str, value) -> None:
        self._arrays[name] = np.asarray(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def total_size(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self.items()})

    def save(self, path, meta: dict | None = None) -> None:
        index = {"version": CHECKPOINT_VERSION, "meta": meta or {}, "arrays": {}}
        offset = 0
        for name, arr in self._arrays.items():
            index["arrays"][name] = {"shape": list(arr.shape), "offset": offset}
            offset += arr.size * 8
        header = json.dumps(index).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for arr in self._arrays.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> tuple["ParameterStore", dict]:
        data = Path(path).read_bytes()
        if len(data) < 8:
            raise CheckpointMismatch("file too short to be a checkpoint")
        (header_len,) = struct.unpack("<Q", data[:8])
        try:
            index = json.loads(data[8 : 8 + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise CheckpointMismatch(f"bad checkpoint index: {err}") from None
        if index.get("version") != CHECKPOINT_VERSION:
            raise CheckpointMismatch(
                f"unsupported checkpoint version {index.get('version')!r}"
            )
        payload = data[8 + header_len :]
        store = cls()
        for name, entry in index["arrays"].items():
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            raw = payload[start : start + count * 8]
            if len(raw) != count * 8:
                raise CheckpointMismatch(f"array {name!r} is truncated")
            store[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        return store, index.get("meta", {})
