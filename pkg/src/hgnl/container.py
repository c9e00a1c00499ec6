"""On-disk container: one JSON header line, then a float64 payload.

The header carries arbitrary metadata plus an ``arrays`` index with the
name, shape, and byte offset (relative to the payload start) of each stored
array. Values are little-endian 64-bit floats, so a write/read round trip
is bit-exact.
"""

import json

import numpy as np

from .errors import ContainerError


def corrupt(path, why) -> ContainerError:
    return ContainerError(f"{path}: {why}")


def write(path, header: dict, arrays) -> None:
    """Write ``arrays`` (iterable of (name, ndarray)) under ``header``."""
    index = []
    chunks = []
    offset = 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(data),
        })
        chunks.append(data)
        offset += len(data)
    full = dict(header)
    full["arrays"] = index
    with open(path, "wb") as fh:
        fh.write(json.dumps(full, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for chunk in chunks:
            fh.write(chunk)


def read(path, expected_format=None):
    """Read a container; returns (header, {name: ndarray})."""
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise corrupt(path, f"unreadable header ({exc})") from exc
    if not isinstance(header, dict) or "arrays" not in header:
        raise corrupt(path, "header is not an object with an 'arrays' index")
    if expected_format is not None and header.get("format") != expected_format:
        raise corrupt(
            path,
            f"format is {header.get('format')!r}, expected {expected_format!r}",
        )
    arrays = {}
    for entry in header["arrays"]:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
            nbytes = int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise corrupt(path, f"malformed array entry {entry!r}") from exc
        if offset < 0 or offset + nbytes > len(payload):
            raise corrupt(path, f"array {name!r} extends past end of payload")
        flat = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=offset)
        try:
            arrays[name] = flat.reshape(shape).copy()
        except ValueError as exc:
            raise corrupt(path, f"array {name!r}: {exc}") from exc
    return header, arrays
