"""Length-prefixed binary framing with a 4-byte scheme tag.

Layout: ``tag(4) | body_len(u32 le) | field*`` where each field is
``len(u32 le) | bytes``.  Decoding is strict: trailing bytes, short reads
and wrong tags all raise :class:`WireError`.
"""

from __future__ import annotations

import struct


class WireError(ValueError):
    pass


def encode_fields(tag: bytes, fields: list[bytes]) -> bytes:
    if len(tag) != 4:
        raise ValueError("scheme tag must be 4 bytes")
    body = b"".join(struct.pack("<I", len(f)) + f for f in fields)
    return tag + struct.pack("<I", len(body)) + body


def decode_fields(tag: bytes, data: bytes, count: int | None = None) -> list[bytes]:
    data = bytes(data)
    if len(data) < 8 or data[:4] != tag:
        raise WireError(f"expected {tag!r} frame")
    (n,) = struct.unpack_from("<I", data, 4)
    if n != len(data) - 8:
        raise WireError("frame length mismatch")
    out, pos = [], 8
    while pos < len(data):
        if pos + 4 > len(data):
            raise WireError("truncated field header")
        (k,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + k > len(data):
            raise WireError("truncated field")
        out.append(data[pos:pos + k])
        pos += k
    if count is not None and len(out) != count:
        raise WireError(f"expected {count} fields, got {len(out)}")
    return out


def armor(data: bytes) -> str:
    return data.hex()


def unarmor(text: str) -> bytes:
    try:
        return bytes.fromhex(text)
    except (ValueError, TypeError) as exc:
        raise WireError("bad hex armor") from exc
