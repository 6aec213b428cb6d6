"""Self-describing binary frame codec shared by workers, transformers and the store.

Every value is one frame: a 1-byte type tag, a 4-byte little-endian payload
length, then the payload. Lists and mappings nest frames inside the payload.
"""
import struct
from dataclasses import dataclass
from numbers import Integral, Real
from typing import Any, BinaryIO, Optional

import numpy as np

from .errors import WireError

HEADER = struct.Struct("<BI")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 0xFFFFFFFF

TAG_NONE = 0x00
TAG_BYTES = 0x01
TAG_TEXT = 0x02
TAG_INT = 0x03
TAG_FLOAT = 0x04
TAG_F64_ARRAY = 0x05
TAG_LIST = 0x06
TAG_BOOL = 0x07
TAG_F64_MATRIX = 0x08
TAG_MAP = 0x09
TAG_IDENTIFIER = 0x0A

TAG_NAMES = {
    TAG_NONE: "none",
    TAG_BYTES: "bytes",
    TAG_TEXT: "text",
    TAG_INT: "int",
    TAG_FLOAT: "float",
    TAG_F64_ARRAY: "f64-array",
    TAG_LIST: "list",
    TAG_BOOL: "bool",
    TAG_F64_MATRIX: "f64-matrix",
    TAG_MAP: "map",
    TAG_IDENTIFIER: "identifier",
}
TAGS_BY_NAME = {name: tag for tag, name in TAG_NAMES.items()}

_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_U64 = struct.Struct("<Q")
_INT_MIN = -(1 << 63)
_INT_MAX = (1 << 63) - 1


@dataclass(frozen=True)
class Identifier:
    """Reference to a value moved out of a task message by a transformer."""
    scheme: str
    locator: str
    size: int


def type_tag(value: Any) -> int:
    """Return the frame type tag a value encodes to."""
    if value is None:
        return TAG_NONE
    if isinstance(value, bool):
        return TAG_BOOL
    if isinstance(value, (bytes, bytearray, memoryview)):
        return TAG_BYTES
    if isinstance(value, str):
        return TAG_TEXT
    if isinstance(value, Identifier):
        return TAG_IDENTIFIER
    if isinstance(value, np.ndarray):
        if value.dtype != np.float64:
            raise WireError(f"unsupported array dtype {value.dtype}")
        if value.ndim == 1:
            return TAG_F64_ARRAY
        if value.ndim == 2:
            return TAG_F64_MATRIX
        raise WireError(f"unsupported array rank {value.ndim}")
    if isinstance(value, Integral):
        return TAG_INT
    if isinstance(value, Real):
        return TAG_FLOAT
    if isinstance(value, (list, tuple)):
        return TAG_LIST
    if isinstance(value, dict):
        return TAG_MAP
    raise WireError(f"cannot encode value of type {type(value).__name__}")


def encoded_size(value: Any) -> int:
    """Length in bytes of the frame for value, computed without encoding it."""
    return HEADER_SIZE + _payload_size(value, type_tag(value))


def _payload_size(value: Any, tag: int) -> int:
    if tag == TAG_NONE:
        return 0
    if tag == TAG_BOOL:
        return 1
    if tag == TAG_BYTES:
        return len(value) if not isinstance(value, memoryview) else value.nbytes
    if tag == TAG_TEXT:
        return len(value.encode("utf-8"))
    if tag in (TAG_INT, TAG_FLOAT):
        return 8
    if tag == TAG_F64_ARRAY:
        return 8 + 8 * value.shape[0]
    if tag == TAG_F64_MATRIX:
        return 16 + 8 * value.size
    if tag == TAG_LIST:
        return sum(encoded_size(item) for item in value)
    if tag == TAG_MAP:
        return sum(encoded_size(k) + encoded_size(v) for k, v in value.items())
    if tag == TAG_IDENTIFIER:
        return (encoded_size(value.scheme) + encoded_size(value.locator)
                + encoded_size(value.size))
    raise WireError(f"unknown tag {tag}")


def encode(value: Any) -> bytes:
    """Serialize value into a single frame."""
    parts: list = []
    _encode_into(value, parts)
    return b"".join(parts)


def _encode_into(value: Any, parts: list) -> None:
    tag = type_tag(value)
    size = _payload_size(value, tag)
    if size > MAX_PAYLOAD:
        raise WireError(f"payload of {size} bytes exceeds frame limit")
    parts.append(HEADER.pack(tag, size))
    if tag == TAG_NONE:
        return
    if tag == TAG_BOOL:
        parts.append(b"\x01" if value else b"\x00")
    elif tag == TAG_BYTES:
        parts.append(bytes(value))
    elif tag == TAG_TEXT:
        parts.append(value.encode("utf-8"))
    elif tag == TAG_INT:
        number = int(value)
        if not _INT_MIN <= number <= _INT_MAX:
            raise WireError(f"integer {number} does not fit in 64 bits")
        parts.append(_I64.pack(number))
    elif tag == TAG_FLOAT:
        parts.append(_F64.pack(float(value)))
    elif tag == TAG_F64_ARRAY:
        parts.append(_U64.pack(value.shape[0]))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    elif tag == TAG_F64_MATRIX:
        rows, cols = value.shape
        parts.append(_U64.pack(rows) + _U64.pack(cols))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    elif tag == TAG_LIST:
        for item in value:
            _encode_into(item, parts)
    elif tag == TAG_MAP:
        for key, item in value.items():
            _encode_into(key, parts)
            _encode_into(item, parts)
    elif tag == TAG_IDENTIFIER:
        _encode_into(value.scheme, parts)
        _encode_into(value.locator, parts)
        _encode_into(value.size, parts)


def decode(data: bytes) -> Any:
    """Deserialize exactly one frame."""
    view = memoryview(data)
    value, offset = _decode_at(view, 0)
    if offset != len(view):
        raise WireError(f"{len(view) - offset} trailing bytes after frame")
    return value


def _decode_at(view: memoryview, offset: int) -> tuple[Any, int]:
    if len(view) - offset < HEADER_SIZE:
        raise WireError("truncated frame header")
    tag, size = HEADER.unpack_from(view, offset)
    start = offset + HEADER_SIZE
    end = start + size
    if end > len(view):
        raise WireError(f"truncated {TAG_NAMES.get(tag, tag)} frame")
    return _decode_payload(tag, view[start:end]), end


def _decode_payload(tag: int, payload: memoryview) -> Any:
    if tag == TAG_NONE:
        return None
    if tag == TAG_BOOL:
        return payload[0] != 0
    if tag == TAG_BYTES:
        return bytes(payload)
    if tag == TAG_TEXT:
        return str(payload, "utf-8")
    if tag == TAG_INT:
        return _I64.unpack(payload)[0]
    if tag == TAG_FLOAT:
        return _F64.unpack(payload)[0]
    if tag == TAG_F64_ARRAY:
        (count,) = _U64.unpack_from(payload, 0)
        if len(payload) != 8 + 8 * count:
            raise WireError("f64-array length header does not match payload")
        return np.frombuffer(payload[8:], dtype="<f8").astype(np.float64)
    if tag == TAG_F64_MATRIX:
        rows, cols = _U64.unpack_from(payload, 0)[0], _U64.unpack_from(payload, 8)[0]
        if len(payload) != 16 + 8 * rows * cols:
            raise WireError("f64-matrix shape header does not match payload")
        flat = np.frombuffer(payload[16:], dtype="<f8").astype(np.float64)
        return flat.reshape(rows, cols)
    if tag in (TAG_LIST, TAG_MAP, TAG_IDENTIFIER):
        items = []
        offset = 0
        while offset < len(payload):
            item, offset = _decode_at(payload, offset)
            items.append(item)
        if tag == TAG_LIST:
            return items
        if tag == TAG_MAP:
            if len(items) % 2:
                raise WireError("map frame holds an odd number of entries")
            return dict(zip(items[0::2], items[1::2]))
        if len(items) != 3:
            raise WireError("identifier frame must hold three fields")
        return Identifier(scheme=items[0], locator=items[1], size=items[2])
    raise WireError(f"unknown frame tag 0x{tag:02x}")


def write_frame(stream: BinaryIO, value: Any) -> int:
    """Write one frame to a byte stream and flush it; returns bytes written."""
    data = encode(value)
    stream.write(data)
    stream.flush()
    return len(data)


def read_frame(stream: BinaryIO) -> Any:
    """Read one frame from a byte stream.

    Raises EOFError when the stream ends cleanly before a header.
    """
    header = _read_exact(stream, HEADER_SIZE, allow_eof=True)
    if header is None:
        raise EOFError("stream closed")
    tag, size = HEADER.unpack(header)
    payload = _read_exact(stream, size, allow_eof=False)
    return _decode_payload(tag, memoryview(payload))


def _read_exact(stream: BinaryIO, count: int,
                allow_eof: bool) -> Optional[bytes]:
    chunks = []
    remaining = count
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            if allow_eof and remaining == count:
                return None
            raise EOFError(f"stream closed mid-frame ({count - remaining}/{count} bytes)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)
