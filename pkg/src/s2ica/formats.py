"""Binary containers for models, SVMs and descriptor tables.

Container layout (all integers little-endian ``uint32``)::

    magic (4 bytes) | version | header length | UTF-8 JSON header | float32 blobs

The header lists every blob's shape in storage order. Descriptor tables use
the simpler ``magic | count | length | float32 rows`` layout.
"""

import json
import math
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1
MODEL_MAGIC = b"S2IC"
SVM_MAGIC = b"S2SV"
DESCRIPTOR_MAGIC = b"S2FV"


def atomic_write(path, payload):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_container(magic, header, arrays):
    header = dict(header)
    header["blobs"] = [list(np.shape(a)) for a in arrays]
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(text)), text]
    for a in arrays:
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_container(data, magic):
    if len(data) < 12:
        raise FormatError("file too short for a container header", offset=len(data))
    if data[:4] != magic:
        raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}", offset=0)
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported format version {version}; this build reads version {FORMAT_VERSION}",
            offset=4,
        )
    end = 12 + hlen
    if end > len(data):
        raise FormatError("truncated header", offset=len(data))
    try:
        header = json.loads(data[12:end].decode("utf-8"))
        shapes = [tuple(s) for s in header.pop("blobs")]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError, AttributeError) as exc:
        raise FormatError(f"unreadable header: {exc}", offset=12) from None
    if not isinstance(header, dict) or not all(
        type(d) is int and d >= 0 for shape in shapes for d in shape
    ):
        raise FormatError("header blob shapes must be lists of non-negative integers", offset=12)
    arrays = []
    pos = end
    for shape in shapes:
        nbytes = 4 * math.prod(shape)
        if pos + nbytes > len(data):
            raise FormatError("truncated parameter blob", offset=len(data))
        arrays.append(np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32))
        pos += nbytes
    if pos != len(data):
        raise FormatError("trailing bytes after last blob", offset=pos)
    return header, arrays


def write_container(path, magic, header, arrays):
    atomic_write(path, encode_container(magic, header, arrays))


def read_container(path, magic):
    with open(path, "rb") as fh:
        return decode_container(fh.read(), magic)


def save_descriptors(path, table):
    table = np.asarray(table, dtype="<f4")
    if table.ndim != 2:
        raise FormatError("descriptor table must be 2-D (count, length)")
    payload = DESCRIPTOR_MAGIC + struct.pack("<II", *table.shape) + table.tobytes()
    atomic_write(path, payload)


def load_descriptors(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise FormatError("file too short for a descriptor table", offset=len(data))
    if data[:4] != DESCRIPTOR_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {DESCRIPTOR_MAGIC!r}", offset=0)
    count, length = struct.unpack_from("<II", data, 4)
    expected = 12 + 4 * count * length
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes for {count}x{length} table, got {len(data)}", offset=min(len(data), expected))
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(count, length).astype(np.float32)


def save_descriptors_csv(path, table, labels=None):
    table = np.asarray(table)
    with open(path, "w") as fh:
        for i, row in enumerate(table):
            values = ",".join(repr(float(v)) for v in row)
            fh.write(f"{int(labels[i])},{values}\n" if labels is not None else values + "\n")
