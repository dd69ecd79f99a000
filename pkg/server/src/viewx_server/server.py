"""Denoiser protocol server.

Serves the bridge wire protocol on a TCP address, one session per
connection, connections handled one at a time. A SHUTDOWN frame stops the
server (exit code 0 when standalone). Backends: ``--mock gaussian`` needs no
weights; ``--model`` loads the pretrained video diffusion model.

    viewx-server --addr 127.0.0.1:7707 --mock gaussian
    viewx-server --addr 0.0.0.0:7707 --model stabilityai/stable-video-diffusion-img2vid-xt-1-1

The standalone server prints ``LISTENING host:port`` once bound.
"""

from __future__ import annotations

import argparse
import socket
import sys
import threading

import numpy as np

from . import protocol


class Session:
    """State for one connection: INIT must precede PREDICT."""

    def __init__(self):
        self.meta = None
        self.condition = None

    @property
    def initialized(self):
        return self.meta is not None


class ShutdownRequested(Exception):
    pass


class BridgeServer:
    def __init__(self, address, backend):
        self._backend = backend
        self._listener = socket.create_server(address)
        self._listener.settimeout(0.2)
        self.bound_address = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._thread = None

    def _handle(self, conn) -> bool:
        """Serve one connection; True when SHUTDOWN arrived."""
        session = Session()
        stream = conn.makefile("rb")
        try:
            while True:
                try:
                    frame = protocol.read_message(stream)
                    if frame is None:
                        return False  # clean close, no reply
                    reply = self._dispatch(session, *frame)
                except ShutdownRequested:
                    return True
                except protocol.WireError as exc:
                    _send_quiet(conn, protocol.pack_error(exc.code, exc.detail))
                    return False
                except Exception as exc:
                    _send_quiet(conn, protocol.pack_error("backend", str(exc)))
                    return False
                if reply is not None:
                    conn.sendall(reply)
        except OSError:
            return False
        finally:
            stream.close()

    def _dispatch(self, session, kind, body):
        if kind == protocol.KIND_INIT:
            session.meta, session.condition = protocol.unpack_init(body)
            return None
        if kind == protocol.KIND_SHUTDOWN:
            raise ShutdownRequested()
        if kind == protocol.KIND_PREDICT:
            if not session.initialized:
                raise protocol.WireError("uninitialized", "PREDICT before INIT")
            sigma, x_t = protocol.unpack_predict(body)
            result = np.asarray(self._backend(x_t, sigma, session), dtype=np.float32)
            declared = session.meta.get("shape")
            if declared is not None and list(result.shape) != list(declared):
                raise protocol.WireError(
                    "backend", f"backend shape {list(result.shape)} != advertised {declared}"
                )
            return protocol.pack_message(
                protocol.KIND_PREDICT_OK, protocol.encode_tensor(result)
            )
        raise protocol.WireError("unexpected-kind", f"kind {kind} is reply-only")

    def serve_forever(self) -> int:
        try:
            while not self._stop.is_set():
                try:
                    conn, _ = self._listener.accept()
                except socket.timeout:
                    continue
                except OSError:
                    break
                with conn:
                    if self._handle(conn):
                        return 0
        finally:
            self._listener.close()
        return 0

    def start_background(self):
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
        try:
            self._listener.close()
        except OSError:
            pass


def _send_quiet(conn, blob):
    try:
        conn.sendall(blob)
    except OSError:
        pass


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="denoiser protocol server")
    parser.add_argument("--addr", default="127.0.0.1:7707", help="host:port (port 0 picks one)")
    parser.add_argument("--mock", choices=("gaussian",), help="weight-free analytic backend")
    parser.add_argument("--mean", type=float, default=0.0, help="gaussian mock prior mean")
    parser.add_argument("--scale", type=float, default=1.0, help="gaussian mock prior scale")
    parser.add_argument("--model", help="pretrained model id or local path")
    parser.add_argument("--device", default="cuda")
    args = parser.parse_args(argv)

    if args.mock:
        from .backends import gaussian_mock

        backend = gaussian_mock(args.mean, args.scale)
    else:
        from .backends import SvdBackend

        try:
            model = SvdBackend(args.model, device=args.device)
        except RuntimeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2

        def backend(x_t, sigma, session):
            return model(x_t, sigma, session)

    host, port = args.addr.rsplit(":", 1)
    server = BridgeServer((host, int(port)), backend)
    print("LISTENING %s:%d" % server.bound_address, flush=True)
    return server.serve_forever()


if __name__ == "__main__":
    sys.exit(main())
