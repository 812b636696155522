"""Frame protocol, shim side.

Independent implementation of the wire format in docs/protocol.md (repository
root): a 4-byte big-endian payload length followed by that many bytes of
UTF-8 JSON; every message is an object with a "type" field.
"""

from __future__ import annotations

import json
import struct
from typing import Any, BinaryIO

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024

_LEN = struct.Struct(">I")


class ProtocolError(Exception):
    pass


def encode_frame(payload: dict[str, Any]) -> bytes:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {len(body)} bytes exceeds the cap")
    return _LEN.pack(len(body)) + body


def write_frame(stream: BinaryIO, payload: dict[str, Any]) -> None:
    stream.write(encode_frame(payload))
    stream.flush()


def read_frame(stream: BinaryIO) -> dict[str, Any] | None:
    """Next frame, or None on a cleanly closed stream."""
    header = stream.read(_LEN.size)
    if not header:
        return None
    if len(header) < _LEN.size:
        raise ProtocolError("stream closed mid-header")
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame length {length} exceeds the cap")
    body = b""
    while len(body) < length:
        piece = stream.read(length - len(body))
        if not piece:
            raise ProtocolError("stream closed mid-frame")
        body += piece
    return decode_frame_body(body)


def decode_frame_body(body: bytes) -> dict[str, Any]:
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"frame body is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "type" not in payload:
        raise ProtocolError("frame body must be an object with a 'type' field")
    return payload


def handshake_frame(profile: str, coverage: bool = True) -> dict[str, Any]:
    return {
        "type": "handshake",
        "protocol_version": PROTOCOL_VERSION,
        "profile": profile,
        "capabilities": {"coverage": coverage},
    }
