"""Weight-free protocol server for integration tests and loopback runs.

Serves the bridge wire protocol with an analytic backend: ``echo`` returns
the request latent unchanged, ``gaussian`` evaluates the Gaussian posterior
mean exactly as the in-process oracle does, so a refine run through this
server is bitwise identical to an in-process one.

Runs embedded (`MockBridgeServer` in a thread, used by the test suite) or
standalone::

    python -m viewx.mockserver --addr 127.0.0.1:0 --backend gaussian

The standalone form prints ``LISTENING host:port`` once bound, handles one
connection at a time, and exits 0 on a SHUTDOWN message.
"""

from __future__ import annotations

import argparse
import socket
import sys
import threading

import numpy as np

from . import bridge
from .errors import ProtocolError, TruncatedStreamError


class _Session:
    """Per-connection state machine; yields reply blobs or raises _Hangup."""

    def __init__(self, backend):
        self._backend = backend
        self._meta = None

    def handle(self, kind, body, position):
        if kind == bridge.KIND_INIT:
            self._meta, _condition = bridge.unpack_init(body, position)
            return None
        if kind == bridge.KIND_SHUTDOWN:
            raise _Shutdown()
        if kind == bridge.KIND_PREDICT:
            if self._meta is None:
                raise ProtocolError("uninitialized: PREDICT before INIT", None)
            sigma, x_t = bridge.unpack_predict(body, position)
            result = np.asarray(self._backend(x_t, sigma), dtype=np.float32)
            return bridge.pack_message(bridge.KIND_PREDICT_OK, bridge.encode_tensor(result))
        raise ProtocolError(f"unexpected-kind: kind {kind} is reply-only", None)


class _Shutdown(Exception):
    pass


def classify_error(exc: ProtocolError) -> str:
    """Map a parse/validation failure onto its wire error code."""
    text = str(exc)
    first = text.split(":", 1)[0].strip()
    if first in bridge.ERROR_CODES:
        return first
    if isinstance(exc, TruncatedStreamError):
        return "truncated"
    for needle, code in (
        ("bad magic", "bad-magic"),
        ("unsupported version", "bad-version"),
        ("unknown message kind", "bad-kind"),
        ("body length", "oversized-length"),
        ("init", "bad-init"),
    ):
        if needle in text:
            return code
    return "bad-tensor"


def serve_connection(conn: socket.socket, backend) -> bool:
    """Run one session; returns True when a SHUTDOWN was received."""
    session = _Session(backend)
    stream = conn.makefile("rb")
    reader = bridge.MessageReader(stream)
    try:
        while True:
            start = reader.position
            try:
                msg = reader.read_message()
                if msg is None:
                    return False  # clean end of stream, no reply
                reply = session.handle(msg[0], msg[1], start)
            except _Shutdown:
                return True
            except ProtocolError as exc:
                code = classify_error(exc)
                detail = str(exc)
                if detail.startswith(code + ":"):
                    detail = detail[len(code) + 1 :].strip()
                _best_effort_send(conn, bridge.pack_error(code, detail))
                return False
            except Exception as exc:  # backend failure
                _best_effort_send(conn, bridge.pack_error("backend", str(exc)))
                return False
            if reply is not None:
                conn.sendall(reply)
    except OSError:
        return False
    finally:
        stream.close()


def _best_effort_send(conn, blob):
    try:
        conn.sendall(blob)
    except OSError:
        pass


def gaussian_backend(mean: float = 0.0, scale: float = 1.0):
    """The wire-contract Gaussian mock; grouping must match the oracle."""

    def predict(x_t, sigma):
        sg2 = float(sigma) * float(sigma)
        s2 = float(scale) * float(scale)
        return (sg2 * mean + s2 * x_t) / (sg2 + s2)

    return predict


def echo_backend():
    return lambda x_t, sigma: x_t


class MockBridgeServer:
    """Threaded server for tests: start(), read .address, then stop()."""

    def __init__(self, backend="gaussian", host="127.0.0.1", port=0,
                 mean=0.0, scale=1.0):
        if callable(backend):
            self._backend = backend
        elif backend == "gaussian":
            self._backend = gaussian_backend(mean, scale)
        elif backend == "echo":
            self._backend = echo_backend()
        else:
            raise ValueError(f"unknown mock backend {backend!r}")
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.address = "%s:%d" % self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self):
        self._thread.start()
        return self

    def _run(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with conn:
                if serve_connection(conn, self._backend):
                    break
        self._listener.close()

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc_info):
        self.stop()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="mock denoiser protocol server")
    parser.add_argument("--addr", default="127.0.0.1:0", help="host:port to bind (port 0 picks one)")
    parser.add_argument("--backend", choices=("gaussian", "echo"), default="gaussian")
    parser.add_argument("--mean", type=float, default=0.0)
    parser.add_argument("--scale", type=float, default=1.0)
    args = parser.parse_args(argv)

    host, port = args.addr.rsplit(":", 1)
    if args.backend == "gaussian":
        backend = gaussian_backend(args.mean, args.scale)
    else:
        backend = echo_backend()
    listener = socket.create_server((host, int(port)))
    print("LISTENING %s:%d" % listener.getsockname()[:2], flush=True)
    try:
        while True:
            conn, _ = listener.accept()
            with conn:
                if serve_connection(conn, backend):
                    return 0
    finally:
        listener.close()


if __name__ == "__main__":
    sys.exit(main())
