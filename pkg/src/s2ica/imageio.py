"""Binary Netpbm (P5 grayscale, P6 colour) reading and writing.

Images are ``float32`` arrays in ``[0, 1]`` shaped ``(h, w)`` or ``(h, w, 3)``.
Only ``maxval == 255`` is accepted.
"""

import numpy as np

from .errors import FormatError
from .formats import atomic_write

_WHITESPACE = b" \t\n\r\v\f"


def _tokens(data, count):
    """Read ``count`` header tokens, skipping ``#`` comments; return tokens and data offset."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in _WHITESPACE:
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise FormatError("header ended early", offset=pos)
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        tokens.append((data[start:pos], start))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or data[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", offset=pos)
    return tokens, pos + 1


def decode_netpbm(data):
    """Raw ``uint8`` samples from P5/P6 bytes."""
    if len(data) < 2:
        raise FormatError("file too short", offset=0)
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"unsupported magic {magic!r}; expected P5 or P6", offset=0)
    tokens, start = _tokens(data[2:], 3)
    start += 2
    values = []
    for tok, off in tokens:
        if not tok.isdigit():
            raise FormatError(f"expected an integer, found {tok!r}", offset=off + 2)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise FormatError(f"degenerate size {width}x{height}", offset=tokens[0][1] + 2)
    if maxval != 255:
        raise FormatError(f"maxval {maxval} not supported; only 8-bit (255) images are read", offset=tokens[2][1] + 2)
    expected = width * height * channels
    raster = data[start:]
    if len(raster) < expected:
        raise FormatError(f"raster truncated: need {expected} bytes, have {len(raster)}", offset=len(data))
    if len(raster) > expected:
        raise FormatError("trailing bytes after raster", offset=start + expected)
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return arr[..., 0] if channels == 1 else arr


def encode_netpbm(samples):
    samples = np.asarray(samples)
    if samples.dtype != np.uint8:
        raise FormatError("encode expects uint8 samples")
    if samples.ndim == 2:
        magic = b"P5"
    elif samples.ndim == 3 and samples.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot store an image of shape {samples.shape}")
    h, w = samples.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(samples).tobytes()


def to_uint8(image):
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def load_image(path):
    with open(path, "rb") as fh:
        raw = decode_netpbm(fh.read())
    return raw.astype(np.float32) / np.float32(255)


def save_image(path, image):
    atomic_write(path, encode_netpbm(to_uint8(image)))


def to_grayscale(image):
    """Luma ``0.299 R + 0.587 G + 0.114 B``; grayscale input is returned unchanged."""
    image = np.asarray(image)
    if image.ndim == 2:
        return image
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"expected an (h, w, 3) colour image, got {image.shape}")
    weights = np.array([0.299, 0.587, 0.114], dtype=np.float64)
    return (image.astype(np.float64) @ weights).astype(image.dtype if image.dtype.kind == "f" else np.float32)
