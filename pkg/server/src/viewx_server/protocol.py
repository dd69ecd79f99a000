"""Wire protocol implementation, written against the published byte layout.

Frame: magic b"VXDN", version u8 (=1), kind u8, length u64 LE, body.
Kinds: 1=INIT, 2=PREDICT, 3=PREDICT_OK, 4=ERROR, 5=SHUTDOWN.
Tensor envelope: u8 dtype (0 = LE float32), u8 ndim, ndim u32 LE dims,
raw element bytes; element count < 2**32.

Server-side validation order (fixes which error code a malformed stream
earns): magic, version, kind, length cap; truncation anywhere is
"truncated"; PREDICT before INIT is "uninitialized" before its body is
parsed; INIT body problems are "bad-init"; tensor problems are
"bad-tensor"; reply-only kinds are "unexpected-kind". Every ERROR reply is
"code: detail" and closes the connection. Clean EOF at a frame boundary
closes without a reply.
"""

from __future__ import annotations

import json
import struct

MAGIC = b"VXDN"
VERSION = 1
KIND_INIT = 1
KIND_PREDICT = 2
KIND_PREDICT_OK = 3
KIND_ERROR = 4
KIND_SHUTDOWN = 5
_KINDS = (KIND_INIT, KIND_PREDICT, KIND_PREDICT_OK, KIND_ERROR, KIND_SHUTDOWN)

DTYPE_FLOAT32 = 0
MAX_BODY = 1 << 30
MAX_ELEMENTS = 1 << 32
HEADER = struct.Struct("<4sBBQ")


class WireError(Exception):
    """Carries the wire error code for the ERROR reply."""

    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class Truncated(WireError):
    def __init__(self, detail: str):
        super().__init__("truncated", detail)


def pack_message(kind: int, body: bytes = b"") -> bytes:
    return HEADER.pack(MAGIC, VERSION, kind, len(body)) + body


def pack_error(code: str, detail: str) -> bytes:
    return pack_message(KIND_ERROR, f"{code}: {detail}".encode("utf-8"))


def read_message(stream):
    """Blocking read of one frame; None on clean EOF at a boundary."""
    header = _read_exact(stream, HEADER.size, eof_ok=True)
    if header is None:
        return None
    magic, version, kind, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise WireError("bad-magic", f"got {magic!r}")
    if version != VERSION:
        raise WireError("bad-version", f"got {version}")
    if kind not in _KINDS:
        raise WireError("bad-kind", f"got {kind}")
    if length > MAX_BODY:
        raise WireError("oversized-length", f"{length} exceeds {MAX_BODY}")
    body = _read_exact(stream, length) if length else b""
    return kind, body


def _read_exact(stream, n, eof_ok=False):
    chunks = []
    got = 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            if got == 0 and eof_ok:
                return None
            raise Truncated(f"stream ended {n - got} bytes short")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def unpack_init(body: bytes):
    """INIT body -> (meta dict, condition bytes)."""
    if len(body) < 4:
        raise WireError("bad-init", "body shorter than 4 bytes")
    (meta_len,) = struct.unpack("<I", body[:4])
    if 4 + meta_len > len(body):
        raise WireError("bad-init", f"meta length {meta_len} exceeds body")
    try:
        meta = json.loads(body[4 : 4 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError("bad-init", f"meta is not valid JSON: {exc}") from None
    if not isinstance(meta, dict):
        raise WireError("bad-init", "meta must be a JSON object")
    return meta, body[4 + meta_len :]


def unpack_predict(body: bytes):
    """PREDICT body -> (sigma float, float32 ndarray)."""
    import numpy as np

    if len(body) < 4:
        raise WireError("bad-tensor", "predict body shorter than 4 bytes")
    (sigma,) = struct.unpack("<f", body[:4])
    buf = body[4:]
    if len(buf) < 2:
        raise WireError("bad-tensor", "envelope shorter than 2 bytes")
    dtype_code, ndim = buf[0], buf[1]
    if dtype_code != DTYPE_FLOAT32:
        raise WireError("bad-tensor", f"unknown dtype code {dtype_code}")
    dims_end = 2 + 4 * ndim
    if len(buf) < dims_end:
        raise WireError("bad-tensor", "envelope truncated in dims")
    dims = struct.unpack(f"<{ndim}I", buf[2:dims_end])
    count = 1
    for dim in dims:
        count *= dim
    if count >= MAX_ELEMENTS:
        raise WireError("bad-tensor", f"element count {count} too large")
    payload = buf[dims_end:]
    if len(payload) != count * 4:
        raise WireError(
            "bad-tensor", f"payload {len(payload)} bytes, dims {list(dims)} need {count * 4}"
        )
    return float(sigma), np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def encode_tensor(array) -> bytes:
    import numpy as np

    array = np.ascontiguousarray(array, dtype="<f4")
    head = bytes([DTYPE_FLOAT32, array.ndim]) + struct.pack(f"<{array.ndim}I", *array.shape)
    return head + array.tobytes()
