"""Wire protocol and client for out-of-process denoiser backends.

Every message is one frame::

    magic   4 bytes  b"VXDN"
    version u8       1
    kind    u8       1=INIT 2=PREDICT 3=PREDICT_OK 4=ERROR 5=SHUTDOWN
    length  u64 LE   body size in bytes
    body    length bytes

Bodies:
  INIT        u32 LE meta length, UTF-8 JSON meta, then opaque condition
              bytes. Meta carries at least {"shape": [...], "fps": int,
              "noise_aug_strength": 0.0}.
  PREDICT     f32 LE noise level, then one tensor envelope.
  PREDICT_OK  one tensor envelope.
  ERROR       UTF-8 text "code: detail"; codes are listed in ERROR_CODES.
  SHUTDOWN    empty.

A tensor envelope is: u8 dtype code (0 = little-endian float32), u8 ndim,
ndim u32 LE dims, then the raw element bytes (C order). The element count
must stay below 2**32. The same envelope wrapped in a PREDICT_OK frame is
the on-disk tensor container (".vxt").

Servers reply to PREDICT only; INIT and SHUTDOWN are one-way. Any malformed
or out-of-order input earns one ERROR reply and the connection is closed.
Validation order (which fixes the error code a given malformed stream earns):
header checks magic, version, kind, then length against MAX_BODY; a stream
ending mid-frame is "truncated"; a PREDICT before INIT is "uninitialized"
before its body is even parsed; tensor problems are "bad-tensor"; reply-only
kinds arriving at a server are "unexpected-kind". A stream that ends cleanly
at a frame boundary is a normal close, with no reply.
"""

from __future__ import annotations

import io
import json
import os
import socket
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BackendError,
    ProtocolError,
    TransportError,
    TruncatedStreamError,
)

MAGIC = b"VXDN"
VERSION = 1
KIND_INIT = 1
KIND_PREDICT = 2
KIND_PREDICT_OK = 3
KIND_ERROR = 4
KIND_SHUTDOWN = 5
_KINDS = (KIND_INIT, KIND_PREDICT, KIND_PREDICT_OK, KIND_ERROR, KIND_SHUTDOWN)

DTYPE_FLOAT32 = 0
MAX_BODY = 1 << 30  # refuse absurd frames instead of allocating them
MAX_ELEMENTS = 1 << 32
_HEADER = struct.Struct("<4sBBQ")

DEFAULT_TIMEOUT = 300.0
ADDR_ENV_VAR = "VIEWX_BRIDGE_ADDR"

ERROR_CODES = (
    "bad-magic",
    "bad-version",
    "bad-kind",
    "oversized-length",
    "truncated",
    "bad-init",
    "bad-tensor",
    "uninitialized",
    "unexpected-kind",
    "backend",
)


# -- tensor envelopes ---------------------------------------------------------


def encode_tensor(array: np.ndarray) -> bytes:
    """Serialize a float32 array losslessly (including -0.0 and subnormals)."""
    array = np.asarray(array)
    if array.dtype != np.float32:
        raise ProtocolError(f"only float32 tensors are supported, got {array.dtype}")
    if array.ndim > 255:
        raise ProtocolError(f"too many dimensions: {array.ndim}")
    if array.size >= MAX_ELEMENTS:
        raise ProtocolError(f"element count {array.size} exceeds {MAX_ELEMENTS - 1}")
    for dim in array.shape:
        if dim >= 1 << 32:
            raise ProtocolError(f"dimension {dim} does not fit in u32")
    head = bytes([DTYPE_FLOAT32, array.ndim]) + struct.pack(
        f"<{array.ndim}I", *array.shape
    )
    payload = np.ascontiguousarray(array).astype("<f4", copy=False).tobytes()
    return head + payload


def decode_tensor(buf: bytes, position: int = 0) -> np.ndarray:
    """Inverse of encode_tensor; ``position`` seeds error offsets."""
    if len(buf) < 2:
        raise ProtocolError("tensor envelope shorter than 2 bytes", position)
    dtype_code, ndim = buf[0], buf[1]
    if dtype_code != DTYPE_FLOAT32:
        raise ProtocolError(f"unknown tensor dtype code {dtype_code}", position)
    dims_end = 2 + 4 * ndim
    if len(buf) < dims_end:
        raise ProtocolError("tensor envelope truncated in dims", position)
    dims = struct.unpack(f"<{ndim}I", buf[2:dims_end])
    count = 1
    for dim in dims:
        count *= dim
    if count >= MAX_ELEMENTS:
        raise ProtocolError(f"element count {count} exceeds {MAX_ELEMENTS - 1}", position)
    expected = count * 4
    payload = buf[dims_end:]
    if len(payload) != expected:
        raise ProtocolError(
            f"tensor payload is {len(payload)} bytes, dims {list(dims)} need {expected}",
            position,
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


# -- framing ------------------------------------------------------------------


def pack_message(kind: int, body: bytes = b"") -> bytes:
    if kind not in _KINDS:
        raise ProtocolError(f"unknown message kind {kind}")
    return _HEADER.pack(MAGIC, VERSION, kind, len(body)) + body


def pack_init(shape, condition: bytes, fps: int = 6, noise_aug_strength: float = 0.0,
              extra_meta: dict | None = None) -> bytes:
    meta = {"shape": list(int(s) for s in shape), "fps": int(fps),
            "noise_aug_strength": float(noise_aug_strength)}
    if extra_meta:
        meta.update(extra_meta)
    blob = json.dumps(meta).encode("utf-8")
    return pack_message(KIND_INIT, struct.pack("<I", len(blob)) + blob + condition)


def unpack_init(body: bytes, position: int = 0):
    """INIT body -> (meta dict, condition bytes)."""
    if len(body) < 4:
        raise ProtocolError("init body shorter than 4 bytes", position)
    (meta_len,) = struct.unpack("<I", body[:4])
    if 4 + meta_len > len(body):
        raise ProtocolError(f"init meta length {meta_len} exceeds body", position)
    try:
        meta = json.loads(body[4 : 4 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"init meta is not valid JSON: {exc}", position) from None
    if not isinstance(meta, dict):
        raise ProtocolError("init meta must be a JSON object", position)
    return meta, body[4 + meta_len :]


def pack_predict(x_t: np.ndarray, sigma: float) -> bytes:
    return pack_message(KIND_PREDICT, struct.pack("<f", sigma) + encode_tensor(x_t))


def unpack_predict(body: bytes, position: int = 0):
    """PREDICT body -> (sigma, tensor)."""
    if len(body) < 4:
        raise ProtocolError("predict body shorter than 4 bytes", position)
    (sigma,) = struct.unpack("<f", body[:4])
    tensor = decode_tensor(body[4:], position + 4)
    return float(sigma), tensor


def pack_error(code: str, detail: str) -> bytes:
    return pack_message(KIND_ERROR, f"{code}: {detail}".encode("utf-8"))


def error_code(message: str) -> str:
    """Leading code token of an ERROR body."""
    return message.split(":", 1)[0].strip()


class MessageReader:
    """Incremental frame reader over any object with read(n).

    read_message() returns (kind, body), or None on a clean end of stream at
    a frame boundary. Malformed input raises ProtocolError carrying the byte
    offset; a stream ending mid-frame raises TruncatedStreamError (a
    ProtocolError subclass) so callers on sockets can translate it to a
    transport failure.
    """

    def __init__(self, stream):
        self._stream = stream
        self.position = 0

    def _read_exact(self, n: int, *, allow_eof_at_start: bool = False):
        chunks = []
        got = 0
        while got < n:
            chunk = self._stream.read(n - got)
            if not chunk:
                if got == 0 and allow_eof_at_start:
                    return None
                raise TruncatedStreamError(
                    f"stream ended {n - got} bytes short", self.position + got
                )
            chunks.append(chunk)
            got += len(chunk)
        data = b"".join(chunks)
        self.position += n
        return data

    def read_message(self):
        start = self.position
        header = self._read_exact(_HEADER.size, allow_eof_at_start=True)
        if header is None:
            return None
        magic, version, kind, length = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ProtocolError(f"bad magic {magic!r}", start)
        if version != VERSION:
            raise ProtocolError(f"unsupported version {version}", start + 4)
        if kind not in _KINDS:
            raise ProtocolError(f"unknown message kind {kind}", start + 5)
        if length > MAX_BODY:
            raise ProtocolError(f"body length {length} exceeds {MAX_BODY}", start + 6)
        body = self._read_exact(length) if length else b""
        return kind, body


def iter_messages(data: bytes):
    """Parse a complete byte buffer into (kind, body) frames."""
    reader = MessageReader(io.BytesIO(data))
    while True:
        msg = reader.read_message()
        if msg is None:
            return
        yield msg


# -- tensor container ----------------------------------------------------------


def save_tensor(path, array: np.ndarray):
    """Write a .vxt file: one PREDICT_OK frame. Atomic (tmp + rename)."""
    path = Path(path)
    blob = pack_message(KIND_PREDICT_OK, encode_tensor(array))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    frames = list(iter_messages(data))
    if len(frames) != 1:
        raise ProtocolError(f"tensor container holds {len(frames)} frames, expected 1")
    kind, body = frames[0]
    if kind != KIND_PREDICT_OK:
        raise ProtocolError(f"tensor container frame has kind {kind}, expected PREDICT_OK")
    return decode_tensor(body)


# -- client --------------------------------------------------------------------


def parse_address(address: str | None = None):
    address = address or os.environ.get(ADDR_ENV_VAR)
    if not address:
        raise TransportError(
            f"no backend address: pass one or set {ADDR_ENV_VAR}"
        )
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise TransportError(f"address must be host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


class BridgeConnection:
    """One TCP connection to a denoiser server, strictly request-reply."""

    def __init__(self, address: str | None = None, timeout: float = DEFAULT_TIMEOUT):
        host, port = parse_address(address)
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(timeout)
        self._file = self._sock.makefile("rb")
        self._reader = MessageReader(self._file)

    def _send(self, blob: bytes):
        try:
            self._sock.sendall(blob)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _recv(self):
        try:
            msg = self._reader.read_message()
        except TruncatedStreamError as exc:
            raise TransportError(f"connection closed mid-reply: {exc}") from exc
        except (socket.timeout, TimeoutError) as exc:
            raise TransportError("timed out waiting for reply") from exc
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if msg is None:
            raise TransportError("connection closed by server")
        return msg

    def init(self, shape, condition: bytes, fps: int = 6,
             noise_aug_strength: float = 0.0, extra_meta: dict | None = None):
        self._send(pack_init(shape, condition, fps, noise_aug_strength, extra_meta))

    def predict(self, x_t: np.ndarray, sigma: float) -> np.ndarray:
        self._send(pack_predict(x_t, sigma))
        kind, body = self._recv()
        if kind == KIND_ERROR:
            raise BackendError(body.decode("utf-8", errors="replace"))
        if kind != KIND_PREDICT_OK:
            raise ProtocolError(f"expected PREDICT_OK, got kind {kind}")
        result = decode_tensor(body)
        if result.shape != x_t.shape:
            raise ProtocolError(
                f"reply shape {result.shape} does not match request {x_t.shape}"
            )
        return result

    def shutdown(self):
        self._send(pack_message(KIND_SHUTDOWN))

    def close(self):
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


class BridgeDenoiser:
    """Denoiser backend living behind a BridgeConnection.

    The first predict() sends INIT carrying that latent's shape and the
    condition payload; every call then round-trips one PREDICT. Latents are
    sent as float32 (the only wire dtype) and the reply is returned as such.
    """

    def __init__(self, address: str | None = None, timeout: float = DEFAULT_TIMEOUT,
                 fps: int = 6, noise_aug_strength: float = 0.0):
        self._conn = BridgeConnection(address, timeout)
        self._fps = fps
        self._noise_aug = noise_aug_strength
        self._initialized = False

    def predict(self, x_t: np.ndarray, sigma: float, condition: bytes = b"") -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float32)
        if not self._initialized:
            self._conn.init(
                x_t.shape, condition, fps=self._fps, noise_aug_strength=self._noise_aug
            )
            self._initialized = True
        return self._conn.predict(x_t, sigma)

    def close(self):
        # Just drop the connection; SHUTDOWN is reserved for stopping a server.
        self._conn.close()
