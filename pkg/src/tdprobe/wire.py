"""Framing shared by the replay server and the measurement client.

Requests are single ASCII lines:

    GET <segment_index>\n

Responses are typed frames, each a 1-byte type, a 4-byte big-endian payload
length, then the payload:

    b"D"  one burst of segment content
    b"Z"  end of segment (empty payload)
    b"E"  protocol error (payload: ASCII message)

A segment is delivered as a sequence of D frames followed by one Z frame.
"""

from __future__ import annotations

import socket
import struct

FRAME_DATA = b"D"
FRAME_END = b"Z"
FRAME_ERROR = b"E"

_HEADER = struct.Struct(">cI")
MAX_FRAME_PAYLOAD = 4 * 1024 * 1024
MAX_REQUEST_LINE = 128


class ProtocolError(Exception):
    """Peer violated the segment-request protocol."""


def encode_request(segment_index: int) -> bytes:
    if segment_index < 0:
        raise ValueError("segment index must be >= 0")
    return f"GET {segment_index}\n".encode("ascii")


def parse_request(line: bytes) -> int:
    parts = line.strip().split()
    if len(parts) != 2 or parts[0] != b"GET":
        raise ProtocolError(f"bad request line {line[:40]!r}")
    try:
        idx = int(parts[1])
    except ValueError as e:
        raise ProtocolError(f"bad segment index in {line[:40]!r}") from e
    if idx < 0:
        raise ProtocolError(f"negative segment index {idx}")
    return idx


def read_request(sock: socket.socket) -> bytes | None:
    """Read one request line; None on clean EOF before any byte."""
    buf = bytearray()
    while not buf.endswith(b"\n"):
        if len(buf) > MAX_REQUEST_LINE:
            raise ProtocolError("request line too long")
        chunk = sock.recv(1)
        if not chunk:
            if buf:
                raise ProtocolError("connection closed mid-request")
            return None
        buf += chunk
    return bytes(buf)


def frame_header(frame_type: bytes, length: int) -> bytes:
    return _HEADER.pack(frame_type, length)


def send_frame(sock: socket.socket, frame_type: bytes, payload: bytes = b"") -> None:
    sock.sendall(_HEADER.pack(frame_type, len(payload)) + payload)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    """Read exactly n bytes; raises ConnectionError on EOF."""
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(65536, n - len(buf)))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame_header(sock: socket.socket) -> tuple[bytes, int] | None:
    """Read a frame header; None on clean EOF at a frame boundary."""
    first = sock.recv(1)
    if not first:
        return None
    rest = recv_exact(sock, _HEADER.size - 1)
    frame_type, length = _HEADER.unpack(first + rest)
    if frame_type not in (FRAME_DATA, FRAME_END, FRAME_ERROR):
        raise ProtocolError(f"unknown frame type {frame_type!r}")
    if length > MAX_FRAME_PAYLOAD:
        raise ProtocolError(f"oversized frame ({length} bytes)")
    return frame_type, length
