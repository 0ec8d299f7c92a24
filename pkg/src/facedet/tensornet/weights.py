"""Weight container file format.

Layout: 5-byte magic "SSHW1", a little-endian u32 header length, a JSON
header listing every tensor as {"name", "shape", "dtype": "f32",
"byte_offset"} (offset into the payload region), then the concatenated
raw little-endian row-major float32 payloads. Round-trips are bit exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSHW1"


class WeightFormatError(Exception):
    pass


def save_weights(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    payloads = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "f32", "byte_offset": offset}
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for raw in payloads:
            f.write(raw)


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {blob[:5]!r}")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_start = len(MAGIC) + 4
    payload_start = header_start + header_len
    try:
        entries = json.loads(blob[header_start:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFormatError(f"{path}: malformed header: {e}") from e

    out: dict[str, np.ndarray] = {}
    for entry in entries:
        if entry.get("dtype") != "f32":
            raise WeightFormatError(f"{path}: unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(int(d) for d in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = payload_start + int(entry["byte_offset"])
        end = start + 4 * count
        if end > len(blob):
            raise WeightFormatError(f"{path}: payload for {entry['name']!r} out of bounds")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape)
        out[str(entry["name"])] = arr.copy()
    return out
