"""Protocol v1 server: one reader per connection, forwards run on a shared executor."""

import socket
import socketserver
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

from .errors import ServerError
from .model import MaskRequest, ServedModel
from .protocol import (PROTOCOL_VERSION, MalformedFrame, TransportClosed, encode_frame, make_error,
                       make_result, read_frame)


def make_hello_ack(model: ServedModel):
    return {"type": "hello_ack", "version": PROTOCOL_VERSION, "model_id": model.model_id,
            "sites": [s.to_json() for s in model.sites()], "grid": list(model.grid),
            "channels": model.channels}


def _request_id(message):
    rid = message.get("request_id")
    if isinstance(rid, int) and not isinstance(rid, bool) and rid >= 0:
        return rid
    return None


def handle_message(model: ServedModel, message):
    """Answers one decoded message; never raises."""
    rid = None
    try:
        if not isinstance(message, dict) or "type" not in message:
            return make_error(None, "malformed", "message lacks a type")
        rid = _request_id(message)
        kind = message["type"]
        if kind == "hello":
            version = message.get("version", 0)
            if version != PROTOCOL_VERSION:
                return make_error(None, "version_mismatch",
                                  f"server speaks version {PROTOCOL_VERSION}, client asked for {version}")
            return make_hello_ack(model)
        if kind == "forward":
            if rid is None:
                return make_error(None, "malformed", "forward lacks a request_id")
            return make_result(rid, model.evaluate(MaskRequest.from_json(message, model.grid)))
        return make_error(rid, "unknown_type", f"unsupported message type '{kind}'")
    except ServerError as e:
        return make_error(rid, e.code, str(e))
    except Exception as e:  # noqa: BLE001 - every failure becomes an error frame
        return make_error(rid, "malformed", f"{type(e).__name__}: {e}")


class Connection:
    """Serves one byte stream. Forward requests run on `executor` and their
    replies are written as they finish, so they may arrive out of order."""

    def __init__(self, model, read, write, executor):
        self.model = model
        self.read = read
        self._write = write
        self.executor = executor
        self._lock = threading.Lock()
        self._closed = False

    def send(self, message):
        with self._lock:
            if self._closed:
                return
            try:
                self._write(encode_frame(message))
            except OSError:
                self._closed = True

    def _answer(self, message):
        self.send(handle_message(self.model, message))

    def run(self):
        pending = []
        try:
            while not self._closed:
                try:
                    message = read_frame(self.read)
                except MalformedFrame as e:
                    self.send(make_error(None, "malformed", str(e)))
                    continue
                except (TransportClosed, OSError):
                    break
                if message is None:
                    break
                if isinstance(message, dict) and message.get("type") == "forward" and self.executor is not None:
                    pending.append(self.executor.submit(self._answer, message))
                    pending = [f for f in pending if not f.done()]
                else:
                    self._answer(message)
        finally:
            for f in pending:
                f.result()


def serve_stdio(model, jobs=1, stdin=None, stdout=None):
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer

    def write(data):
        stdout.write(data)
        stdout.flush()

    read = getattr(stdin, "read1", stdin.read)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        Connection(model, read, write, executor).run()


class ModelServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, model, address, jobs=1):
        self.model = model
        self.executor = ThreadPoolExecutor(max_workers=max(1, jobs))
        super().__init__(address, _Handler)

    @property
    def endpoint(self):
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def server_close(self):
        super().server_close()
        self.executor.shutdown(wait=False, cancel_futures=True)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        Connection(self.server.model, sock.recv, sock.sendall, self.server.executor).run()


def parse_listen(text):
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 <= int(port) < 65536:
        raise ValueError(f"listen address must be host:port, got '{text}'")
    return host, int(port)
