"""Binary Netpbm readers/writers: P6 color, P5 masks, Pf float depth.

All three are deliberately minimal: 8-bit maxval for the byte formats and
little-endian float32 (negative scale) for the float maps, which is what the
rendering pipeline produces and consumes. Float maps are stored bottom row
first, per convention; arrays in memory are always top row first.
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError


def _read_header_token(buf: bytes, pos: int):
    # Tokens are separated by whitespace; '#' starts a comment to end of line.
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header")
    return buf[start:pos], pos


def _parse_byte_image(buf: bytes, magic: bytes, channels: int):
    got = buf[:2]
    if got != magic:
        raise ParseError(f"bad magic {got!r}, expected {magic!r}")
    pos = 2
    width, pos = _read_header_token(buf, pos)
    height, pos = _read_header_token(buf, pos)
    maxval, pos = _read_header_token(buf, pos)
    try:
        width, height, maxval = int(width), int(height), int(maxval)
    except ValueError:
        raise ParseError("non-numeric image header field") from None
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise ParseError(f"bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * channels
    data = buf[pos : pos + expected]
    if len(data) != expected:
        raise ParseError(f"pixel data is {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype=np.uint8)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return arr.reshape(shape)


def read_ppm(path) -> np.ndarray:
    """8-bit color image as uint8 (H, W, 3)."""
    with open(path, "rb") as fh:
        return _parse_byte_image(fh.read(), b"P6", 3)


def write_ppm(path, image: np.ndarray):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected uint8 (H, W, 3), got {image.dtype} {image.shape}")
    height, width = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (width, height))
        fh.write(np.ascontiguousarray(image).tobytes())


def read_pgm(path) -> np.ndarray:
    """8-bit grayscale image as uint8 (H, W)."""
    with open(path, "rb") as fh:
        return _parse_byte_image(fh.read(), b"P5", 1)


def write_pgm(path, image: np.ndarray):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError(f"expected uint8 (H, W), got {image.dtype} {image.shape}")
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(np.ascontiguousarray(image).tobytes())


def read_pfm(path) -> np.ndarray:
    """Grayscale float map as float32 (H, W), top row first."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"Pf":
        raise ParseError(f"bad magic {buf[:2]!r}, expected b'Pf' (grayscale float map)")
    pos = 2
    width, pos = _read_header_token(buf, pos)
    height, pos = _read_header_token(buf, pos)
    scale, pos = _read_header_token(buf, pos)
    try:
        width, height, scale = int(width), int(height), float(scale)
    except ValueError:
        raise ParseError("non-numeric float-map header field") from None
    if scale >= 0:
        raise ParseError("big-endian float maps (scale >= 0) are not supported")
    pos += 1
    expected = width * height * 4
    data = buf[pos : pos + expected]
    if len(data) != expected:
        raise ParseError(f"float data is {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f4").reshape(height, width)
    return arr[::-1].copy()  # stored bottom-up


def write_pfm(path, data: np.ndarray):
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError(f"expected (H, W) float map, got shape {data.shape}")
    height, width = data.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n-1.0\n" % (width, height))
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def image_to_float(image: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] to float32 [0, 1]."""
    return np.asarray(image, dtype=np.float32) / 255.0


def float_to_image(values: np.ndarray) -> np.ndarray:
    """float [0, 1] (clipped) to uint8, rounding to nearest."""
    scaled = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8)
