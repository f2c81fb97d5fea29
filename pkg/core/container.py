"""Binary container shared by weight files and model bundles.

Layout::

    magic (8 bytes) | header length (uint32 LE) | header (UTF-8 JSON)
    | float32 LE blobs in header order | CRC32 (uint32 LE) over everything before it

The header carries a ``blobs`` list of ``{"name", "shape"}`` entries next to
whatever metadata the caller stores.
"""

import json
import struct
import zlib
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ChecksumMismatch, FormatVersionMismatch, MissingFile, TruncatedFile

MAGIC_SIZE = 8
_LEN = struct.Struct("<I")


def encode_container(magic: bytes, header: Dict[str, Any], blobs: Sequence[Tuple[str, np.ndarray]]) -> bytes:
    """Serialize header and blobs into container bytes."""
    if len(magic) != MAGIC_SIZE:
        raise ValueError(f"magic must be {MAGIC_SIZE} bytes")
    arrays = [(name, np.ascontiguousarray(arr, dtype="<f4")) for name, arr in blobs]
    meta = dict(header)
    meta["blobs"] = [{"name": name, "shape": list(arr.shape)} for name, arr in arrays]
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    body = bytearray(magic)
    body += _LEN.pack(len(head))
    body += head
    for _, arr in arrays:
        body += arr.tobytes(order="C")
    body += _LEN.pack(zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    return bytes(body)


def write_container(path: Path, magic: bytes, header: Dict[str, Any],
                    blobs: Sequence[Tuple[str, np.ndarray]]) -> Path:
    """Write a container file, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(magic, header, blobs))
    return path


def decode_container(
    data: bytes,
    magic: bytes,
    check_header: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Parse container bytes.

    ``check_header`` runs on the parsed header before the payload length is
    verified, so callers can reject shape edits with their own error type.
    """
    if len(data) < MAGIC_SIZE + _LEN.size:
        raise TruncatedFile("Container shorter than its fixed preamble", {"size": len(data)})
    found = data[:MAGIC_SIZE]
    if found != magic:
        raise FormatVersionMismatch(
            f"Unexpected container magic {found!r}, expected {magic!r}",
            {"found": found.hex(), "expected": magic.hex()},
        )

    (head_len,) = _LEN.unpack_from(data, MAGIC_SIZE)
    head_start = MAGIC_SIZE + _LEN.size
    if len(data) < head_start + head_len:
        raise TruncatedFile("Container ends inside its header", {"header_length": head_len})
    try:
        header = json.loads(data[head_start:head_start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ChecksumMismatch(f"Container header is not valid JSON: {e}")

    if check_header is not None:
        check_header(header)

    entries: List[Dict[str, Any]] = header.get("blobs", [])
    sizes = [int(np.prod(entry["shape"], dtype=np.int64)) * 4 for entry in entries]
    payload_start = head_start + head_len
    expected = payload_start + sum(sizes) + _LEN.size
    if len(data) < expected:
        raise TruncatedFile(
            f"Container is {expected - len(data)} bytes short",
            {"expected": expected, "size": len(data)},
        )
    if len(data) > expected:
        raise ChecksumMismatch("Container has trailing bytes", {"expected": expected, "size": len(data)})

    (stored_crc,) = _LEN.unpack_from(data, expected - _LEN.size)
    actual_crc = zlib.crc32(data[:expected - _LEN.size]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumMismatch(
            "Container CRC32 does not match its contents",
            {"stored": stored_crc, "computed": actual_crc},
        )

    arrays: Dict[str, np.ndarray] = {}
    offset = payload_start
    for entry, size in zip(entries, sizes):
        blob = np.frombuffer(data, dtype="<f4", count=size // 4, offset=offset)
        arrays[entry["name"]] = blob.reshape(entry["shape"]).astype(np.float32)
        offset += size
    return header, arrays


def read_container(
    path: Path,
    magic: bytes,
    check_header: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read and verify a container file."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"File not found: {path}", {"path": str(path)})
    return decode_container(path.read_bytes(), magic, check_header)
