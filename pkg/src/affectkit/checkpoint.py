"""Flat binary parameter container with a plain-text index header.

Layout (byte-identical across platforms):

    AFFECTKIT1\n
    <entry count>\n
    <name> <d0>x<d1>x...\n        (one line per entry; scalar shape is "-")
    END\n
    <raw little-endian float64 payload, entries concatenated in index order>
"""

from __future__ import annotations

import numpy as np

MAGIC = b"AFFECTKIT1"


class CheckpointError(ValueError):
    """Raised on malformed container files."""


def _shape_str(shape):
    return "x".join(str(d) for d in shape) if shape else "-"


def _parse_shape(text):
    if text == "-":
        return ()
    return tuple(int(d) for d in text.split("x"))


def save(path, entries):
    """Write `{name: array}` to `path`; insertion order is preserved."""
    lines = [MAGIC, str(len(entries)).encode()]
    blobs = []
    for name, arr in entries.items():
        arr = np.asarray(arr, dtype=np.float64)
        if " " in name or "\n" in name:
            raise CheckpointError(f"entry name may not contain whitespace: {name!r}")
        lines.append(f"{name} {_shape_str(arr.shape)}".encode())
        blobs.append(arr.astype("<f8").tobytes())
    lines.append(b"END")
    with open(path, "wb") as f:
        f.write(b"\n".join(lines) + b"\n")
        for blob in blobs:
            f.write(blob)


def load(path):
    """Read a container back into an ordered `{name: float64 array}` dict."""
    with open(path, "rb") as f:
        raw = f.read()
    head, sep, _ = raw.partition(b"\nEND\n")
    if not sep:
        raise CheckpointError(f"{path}: missing END marker")
    lines = head.split(b"\n")
    if lines[0] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {lines[0]!r}")
    try:
        count = int(lines[1])
    except (IndexError, ValueError):
        raise CheckpointError(f"{path}: unreadable entry count")
    if len(lines) != 2 + count:
        raise CheckpointError(f"{path}: header declares {count} entries, "
                              f"found {len(lines) - 2} index lines")
    offset = len(head) + len(b"\nEND\n")
    out = {}
    for line in lines[2:]:
        try:
            name, shape_text = line.decode().rsplit(" ", 1)
        except ValueError:
            raise CheckpointError(f"{path}: malformed index line {line!r}")
        shape = _parse_shape(shape_text)
        n = int(np.prod(shape)) if shape else 1
        blob = raw[offset:offset + 8 * n]
        if len(blob) != 8 * n:
            raise CheckpointError(f"{path}: truncated payload at entry {name!r}")
        out[name] = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * n
    return out
