"""Wire protocol v1: little-endian u32 length prefix, then a UTF-8 JSON body."""

import json
import struct

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 << 20
_LENGTH = struct.Struct("<I")


class MalformedFrame(Exception):
    """A complete frame arrived but its body is not valid JSON."""


class TransportClosed(Exception):
    """The peer closed the stream or announced an unusable frame."""


def encode_frame(message):
    body = json.dumps(message, separators=(",", ":")).encode()
    return _LENGTH.pack(len(body)) + body


def decode_body(body):
    try:
        return json.loads(body.decode())
    except (UnicodeDecodeError, ValueError) as e:
        raise MalformedFrame(f"malformed frame body: {e}") from None


def _read_exact(read, n):
    chunks, remaining = [], n
    while remaining:
        chunk = read(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(read):
    """Reads one frame with `read(n)`; None on a clean end of stream."""
    header = _read_exact(read, 4)
    if header is None:
        return None
    (n,) = _LENGTH.unpack(header)
    if n > MAX_FRAME_BYTES:
        raise TransportClosed("peer announced an oversized frame")
    body = _read_exact(read, n) if n else b""
    if body is None:
        raise TransportClosed("connection closed mid-frame")
    return decode_body(body)


def make_hello(model_id=""):
    return {"type": "hello", "version": PROTOCOL_VERSION, "model_id": model_id}


def make_error(request_id, code, message):
    return {"type": "error", "code": code, "message": message, "request_id": request_id}


def make_result(request_id, metric):
    return {"type": "result", "request_id": request_id, "metric": metric}
