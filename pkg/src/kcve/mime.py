"""Self-contained media-type sniffing.

Magic numbers first, then a printable-text heuristic, then a file-name
extension fallback for binary formats without a usable signature.
"""

from __future__ import annotations

import posixpath
import struct

# (offset, signature, media type); first hit wins, longer/stronger
# signatures ordered before weak ones.
_MAGIC: list[tuple[int, bytes, str]] = [
    (0, b"\x7fELF", "application/x-executable"),  # refined by e_type below
    (0, b"\x89PNG\r\n\x1a\n", "image/png"),
    (0, b"\xfd7zXZ\x00", "application/x-xz"),
    (0, b"\xd0\x0d\xfe\xed", "application/x-flattened-device-tree"),
    (0, b"\x27\x05\x19\x56", "application/x-uboot-image"),
    (0, b"\x28\xb5\x2f\xfd", "application/zstd"),
    (0, b"\x04\x22\x4d\x18", "application/x-lz4"),
    (0, b"\x02\x21\x4c\x18", "application/x-lz4"),  # legacy frame
    (0, b"\x1f\x8b", "application/gzip"),
    (0, b"BZh", "application/x-bzip2"),
    (0, b"PK\x03\x04", "application/zip"),
    (0, b"%PDF", "application/pdf"),
    (0, b"\xff\xd8\xff", "image/jpeg"),
    (0, b"GIF87a", "image/gif"),
    (0, b"GIF89a", "image/gif"),
    (0, b"hsqs", "application/x-squashfs"),
    (0, b"sqsh", "application/x-squashfs"),
    (0, b"070701", "application/x-cpio"),
    (0, b"070702", "application/x-cpio"),
    (0, b"070707", "application/x-cpio"),
    (0, b"\x85\x19", "application/x-jffs2"),
    (0, b"\x19\x85", "application/x-jffs2"),
    (0, b"!<arch>", "application/x-archive"),
    (0, b"MZ", "application/x-dosexec"),
    (257, b"ustar", "application/x-tar"),
    # Weak 3-byte LZMA-alone dictionaries (0x5d/0x6d/0x6c seen in the wild);
    # kept last among magics to limit false positives.
    (0, b"\x5d\x00\x00", "application/x-lzma"),
    (0, b"\x6d\x00\x00", "application/x-lzma"),
    (0, b"\x6c\x00\x00", "application/x-lzma"),
]

_TEXT_EXTENSIONS = {
    ".sh": "text/x-shellscript",
    ".py": "text/x-python",
    ".html": "text/html",
    ".htm": "text/html",
    ".xml": "text/xml",
    ".json": "application/json",
}

# Extension fallback for binary formats that carry no magic of their own.
_BINARY_EXTENSIONS = {
    ".dtb": "application/x-flattened-device-tree",
    ".ko": "application/x-object",
    ".o": "application/x-object",
    ".bin": "application/octet-stream",
    ".img": "application/octet-stream",
}

# Bytes that may appear in printable single-byte text.
_TEXT_BYTES = frozenset(range(0x20, 0x7F)) | {0x09, 0x0A, 0x0D, 0x0C, 0x0B, 0x1B}


def _elf_subtype(blob: bytes) -> str:
    if len(blob) < 18:
        return "application/x-executable"
    little = blob[5] == 1
    try:
        (e_type,) = struct.unpack_from("<H" if little else ">H", blob, 16)
    except struct.error:
        return "application/x-executable"
    return {
        1: "application/x-object",
        2: "application/x-executable",
        3: "application/x-sharedlib",
        4: "application/x-coredump",
    }.get(e_type, "application/x-executable")


def looks_like_text(sample: bytes) -> bool:
    """Printability heuristic over the leading bytes of a blob."""
    if not sample:
        return False
    if b"\x00" in sample:
        return False
    binary = sum(1 for b in sample if b < 0x80 and b not in _TEXT_BYTES)
    return binary / len(sample) < 0.05


def sniff(blob: bytes, path: str | None = None) -> str:
    """Best-effort media type for a blob, with `path` as extension hint."""
    if not blob:
        return "inode/x-empty"
    for offset, signature, media_type in _MAGIC:
        if blob[offset : offset + len(signature)] == signature:
            if signature == b"\x7fELF":
                return _elf_subtype(blob)
            return media_type
    if looks_like_text(blob[:8192]):
        if path:
            ext = posixpath.splitext(path)[1].lower()
            if ext in _TEXT_EXTENSIONS:
                return _TEXT_EXTENSIONS[ext]
        return "text/plain"
    if path:
        ext = posixpath.splitext(path)[1].lower()
        if ext in _BINARY_EXTENSIONS:
            return _BINARY_EXTENSIONS[ext]
    return "application/octet-stream"


def is_text(media_type: str) -> bool:
    return media_type.partition("/")[0] == "text"
