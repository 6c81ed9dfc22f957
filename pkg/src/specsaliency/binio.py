"""Binary record layout shared by the on-disk formats.

Every artifact file starts with a single JSON header line (UTF-8, terminated
by ``\\n``) followed by raw little-endian payload blocks, tightly packed in
the order declared by the writer.
"""

import json

import numpy as np

from .errors import FormatError


def write_record(path, header, blocks):
    """Write ``header`` plus payload ``blocks`` (pairs of array, dtype)."""
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for arr, dtype in blocks:
            data = np.ascontiguousarray(arr).astype(dtype, copy=False)
            fh.write(data.tobytes())


def read_record(path):
    """Return (header dict, raw payload bytes)."""
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.endswith(b"\n"):
            raise FormatError(f"{path}: missing header line")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad JSON header: {exc}") from exc
        if not isinstance(header, dict):
            raise FormatError(f"{path}: header is not an object")
        payload = fh.read()
    return header, payload


def split_payload(payload, specs):
    """Slice a payload into arrays following ``specs`` (shape, dtype pairs)."""
    out = []
    offset = 0
    for shape, dtype in specs:
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dt.itemsize
        if offset + nbytes > len(payload):
            raise FormatError("payload truncated")
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=offset)
        out.append(arr.reshape(shape))
        offset += nbytes
    if offset != len(payload):
        raise FormatError("payload has trailing bytes")
    return out
