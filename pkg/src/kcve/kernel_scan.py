"""Detect Linux kernel version strings in extracted firmware trees.

The version signature matches ``Linux version X.Y.Z[-suffix]`` in both
single-byte and UTF-16LE ("wide") encodings, case-insensitively. Files
classified as text/* are excluded from scanning.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from . import mime
from .versions import KernelVersion, VersionParseError

logger = logging.getLogger(__name__)

DEFAULT_MAX_FILE_SIZE = 512 * 1024 * 1024  # skip larger files with a warning

_PREFIX = "linux version "

_ASCII_RE = re.compile(
    rb"Linux version \d\.\d{1,2}\.\d{1,3}(?:-[\w.-]+)?",
    re.IGNORECASE,
)

# The same signature with every code unit widened to UTF-16LE.
_WIDE_RE = re.compile(
    rb"L\x00i\x00n\x00u\x00x\x00\x20\x00v\x00e\x00r\x00s\x00i\x00o\x00n\x00\x20\x00"
    rb"\d\x00\.\x00(?:\d\x00){1,2}\.\x00(?:\d\x00){1,3}"
    rb"(?:-\x00(?:[\w.-]\x00)+)?",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class VersionHit:
    """One version-signature match inside a file."""

    path: str | None
    offset: int
    version: KernelVersion
    raw: str
    encoding: str = "ascii"  # "ascii" or "utf-16le"


@dataclass
class FirmwareInventory:
    """Aggregated scan result over one firmware tree."""

    root: str
    hits: list[VersionHit]
    distinct_versions: list[KernelVersion]
    mimes: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def from_hits(
        cls,
        root: str,
        hits: list[VersionHit],
        mimes: dict[str, str] | None = None,
        warnings: list[str] | None = None,
    ) -> FirmwareInventory:
        return cls(
            root=root,
            hits=hits,
            distinct_versions=distinct_versions(hits),
            mimes=mimes or {},
            warnings=warnings or [],
        )


def distinct_versions(hits: list[VersionHit]) -> list[KernelVersion]:
    """Deduplicated versions over hits; suffixes compare exactly."""
    return sorted(set(h.version for h in hits), key=KernelVersion.sort_key)


def parse_kernel_version(raw: str) -> KernelVersion:
    """Parse a ``Linux version X.Y.Z[-suffix]`` banner string.

    Text after the version token (e.g. a compiler banner) is ignored.
    """
    if raw[: len(_PREFIX)].lower() != _PREFIX:
        raise VersionParseError(
            f"expected 'Linux version ' prefix, got {raw[:len(_PREFIX)]!r}"
        )
    rest = raw[len(_PREFIX) :].strip()
    if not rest:
        raise VersionParseError("missing version token after prefix")
    token = rest.split()[0]
    return KernelVersion.parse(token)


def scan_file_for_kernel_version(
    blob: bytes, media_type: str, path: str | None = None
) -> list[VersionHit]:
    """All non-overlapping version-signature matches in a blob.

    Returns the empty list for text/* media types regardless of content.
    """
    if mime.is_text(media_type):
        return []
    hits: list[VersionHit] = []
    for m in _ASCII_RE.finditer(blob):
        raw = m.group(0).decode("latin-1")
        hits.append(
            VersionHit(path, m.start(), parse_kernel_version(raw), raw, "ascii")
        )
    for m in _WIDE_RE.finditer(blob):
        raw = m.group(0).decode("utf-16-le")
        hits.append(
            VersionHit(path, m.start(), parse_kernel_version(raw), raw, "utf-16le")
        )
    hits.sort(key=lambda h: h.offset)
    return hits


def iter_regular_files(root: Path) -> Iterator[Path]:
    """Regular files under root in deterministic order; symlinks skipped.

    A file root yields itself.
    """
    if root.is_file() and not root.is_symlink():
        yield root
        return
    stack = [root]
    at_root = True
    while stack:
        directory = stack.pop()
        try:
            entries = sorted(directory.iterdir())
        except OSError:
            if at_root:
                raise
            logger.warning("unreadable directory skipped: %s", directory)
            continue
        at_root = False
        subdirs = []
        for entry in entries:
            if entry.is_symlink():
                continue
            if entry.is_dir():
                subdirs.append(entry)
            elif entry.is_file():
                yield entry
        stack.extend(reversed(subdirs))


def read_file_bounded(
    path: Path, max_size: int = DEFAULT_MAX_FILE_SIZE
) -> tuple[bytes | None, str | None]:
    """Read a file, returning (data, warning); oversized or unreadable
    files produce (None, reason)."""
    try:
        size = path.stat().st_size
        if size > max_size:
            return None, f"{path}: skipped, {size} bytes exceeds limit {max_size}"
        return path.read_bytes(), None
    except OSError as exc:
        return None, f"{path}: unreadable ({exc})"


def scan_tree(
    root: str | Path, max_file_size: int = DEFAULT_MAX_FILE_SIZE
) -> FirmwareInventory:
    """Scan every regular file under root for kernel version signatures.

    The root must exist and be readable (fatal otherwise); individual
    unreadable files are recorded as warnings and skipped.
    """
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"scan root does not exist: {root}")
    hits: list[VersionHit] = []
    mimes: dict[str, str] = {}
    warnings: list[str] = []
    for path in iter_regular_files(root):
        rel = path.name if root.is_file() else path.relative_to(root).as_posix()
        data, warning = read_file_bounded(path, max_file_size)
        if data is None:
            warnings.append(warning or f"{path}: unreadable")
            logger.warning("%s", warning)
            continue
        media_type = mime.sniff(data, rel)
        mimes[rel] = media_type
        hits.extend(scan_file_for_kernel_version(data, media_type, rel))
    return FirmwareInventory.from_hits(str(root), hits, mimes, warnings)
