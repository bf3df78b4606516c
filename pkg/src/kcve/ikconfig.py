"""Find and extract Linux kernel build configurations.

Configurations appear in three shapes inside firmware:

* plain-text ``.config`` dumps (recognized by generated-file header or
  a directive-count threshold),
* an inline blob between ``IKCFG_ST``/``IKCFG_ED`` markers inside a
  kernel image or module, compressed in one of the formats the kernel
  has shipped over the years,
* the same marker-wrapped blob nested inside a compressed container
  (e.g. a gzipped kernel image), which is carved by signature and
  decompressed before the marker search repeats.

Extraction failures on individual candidates are warnings, not errors;
a file simply yields no configuration.
"""

from __future__ import annotations

import bz2
import logging
import lzma
import re
import zlib
from dataclasses import dataclass, replace
from enum import Enum

from . import mime

logger = logging.getLogger(__name__)

try:  # optional; not all deployments carry the frame codecs
    import lz4.frame as _lz4_frame
except ImportError:
    _lz4_frame = None
try:
    import zstandard as _zstandard
except ImportError:
    _zstandard = None

START_MARKER = b"IKCFG_ST"
END_MARKER = b"IKCFG_ED"

DEFAULT_MIN_DIRECTIVES = 50
DEFAULT_CONTAINER_CANDIDATES = 64
_MAX_DECOMPRESSED = 256 * 1024 * 1024
_CHUNK = 1 << 20


class IkconfigExtractionError(RuntimeError):
    """Structurally broken embedded configuration (e.g. missing end marker)."""


class Tristate(Enum):
    Y = "y"
    M = "m"
    N = "n"


class ValueKind(Enum):
    TRISTATE = "tristate"
    STRING = "string"
    INT = "int"
    HEX = "hex"


class SourceKind(Enum):
    PLAINTEXT = "plaintext"
    INLINE_STRING = "inline-string"
    EMBEDDED_CONTAINER = "embedded-container"


class CandidateKind(Enum):
    PLAIN_TEXT = "plain-text"
    KERNEL_BINARY = "kernel-binary"
    OTHER = "other"


@dataclass(frozen=True)
class ConfigValue:
    kind: ValueKind
    value: Tristate | str | int

    @classmethod
    def yes(cls) -> ConfigValue:
        return cls(ValueKind.TRISTATE, Tristate.Y)

    @classmethod
    def module(cls) -> ConfigValue:
        return cls(ValueKind.TRISTATE, Tristate.M)

    @classmethod
    def not_set(cls) -> ConfigValue:
        return cls(ValueKind.TRISTATE, Tristate.N)

    @classmethod
    def string(cls, value: str) -> ConfigValue:
        return cls(ValueKind.STRING, value)

    @classmethod
    def integer(cls, value: int) -> ConfigValue:
        return cls(ValueKind.INT, value)

    @classmethod
    def hexadecimal(cls, value: int) -> ConfigValue:
        return cls(ValueKind.HEX, value)

    @property
    def is_enabled(self) -> bool:
        """True unless the option is an explicit "is not set"."""
        return not (self.kind is ValueKind.TRISTATE and self.value is Tristate.N)


@dataclass
class KernelConfig:
    """A parsed build configuration and where it came from."""

    options: dict[str, ConfigValue]
    source_kind: SourceKind = SourceKind.PLAINTEXT
    origin_path: str | None = None

    def __len__(self) -> int:
        return len(self.options)

    def with_origin(self, path: str) -> KernelConfig:
        return replace(self, origin_path=path)


_NOT_SET_RE = re.compile(r"#\s*(CONFIG_[A-Za-z0-9_]+) is not set\s*$")
_ASSIGN_RE = re.compile(r"(CONFIG_[A-Za-z0-9_]+)=(.*)$")
_HEX_RE = re.compile(r"0x[0-9A-Fa-f]+$")
_INT_RE = re.compile(r"-?\d+$")
_HEADER_RE = re.compile(r"automatically generated|linux/", re.IGNORECASE)


def _parse_value(token: str) -> ConfigValue | None:
    if token == "y":
        return ConfigValue.yes()
    if token == "m":
        return ConfigValue.module()
    if token == "n":
        return ConfigValue.not_set()
    if token.startswith('"'):
        if len(token) < 2 or not token.endswith('"'):
            return None
        body = token[1:-1]
        return ConfigValue.string(body.replace('\\"', '"').replace("\\\\", "\\"))
    if _HEX_RE.fullmatch(token):
        return ConfigValue.hexadecimal(int(token, 16))
    if _INT_RE.fullmatch(token):
        return ConfigValue.integer(int(token))
    # Not valid .config syntax, but vendors ship it; keep the raw token.
    return ConfigValue.string(token)


def _parse_lines(
    text: str, probe: bool = False
) -> tuple[dict[str, ConfigValue], int, bool]:
    """Returns (options, directive line count, generated-header seen).

    With probe=True the text is merely being sniffed as a possible
    config, so junk lines are expected and logged quietly.
    """
    options: dict[str, ConfigValue] = {}
    directives = 0
    header = False
    complain = logger.debug if probe else logger.warning

    def put(key: str, value: ConfigValue) -> None:
        if key in options:
            complain("duplicate option %s, later value wins", key)
        options[key] = value

    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _NOT_SET_RE.fullmatch(line)
            if m:
                directives += 1
                put(m.group(1), ConfigValue.not_set())
            elif _HEADER_RE.search(line):
                header = True
            continue
        m = _ASSIGN_RE.fullmatch(line)
        if m is None:
            complain("unparseable config line skipped: %r", line[:80])
            continue
        value = _parse_value(m.group(2).strip())
        if value is None:
            complain("unparseable config value skipped: %r", line[:80])
            continue
        directives += 1
        put(m.group(1), value)
    return options, directives, header


def parse_config(text: str) -> KernelConfig:
    """Parse ``.config``-shaped text; junk lines warn and are skipped."""
    options, _, _ = _parse_lines(text)
    return KernelConfig(options)


def _render_string(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_config(config: KernelConfig | dict[str, ConfigValue]) -> str:
    """Render options in the kernel's ``.config`` text format."""
    options = config.options if isinstance(config, KernelConfig) else config
    lines = []
    for key, cv in options.items():
        if cv.kind is ValueKind.TRISTATE:
            if cv.value is Tristate.N:
                lines.append(f"# {key} is not set")
            else:
                lines.append(f"{key}={cv.value.value}")
        elif cv.kind is ValueKind.STRING:
            lines.append(f"{key}={_render_string(cv.value)}")
        elif cv.kind is ValueKind.HEX:
            lines.append(f"{key}=0x{cv.value:x}")
        else:
            lines.append(f"{key}={cv.value}")
    return "\n".join(lines) + ("\n" if lines else "")


def extract_plaintext_config(
    text: str, min_directives: int = DEFAULT_MIN_DIRECTIVES
) -> KernelConfig | None:
    """Accept text as a configuration iff it carries the generated-file
    header or at least `min_directives` directive lines."""
    options, directives, header = _parse_lines(text, probe=True)
    if header or directives >= min_directives:
        return KernelConfig(options, SourceKind.PLAINTEXT)
    return None


_KERNEL_BINARY_TYPES = {
    "application/x-executable",
    "application/x-object",
    "application/x-sharedlib",
    "application/gzip",
    "application/x-xz",
    "application/x-bzip2",
    "application/x-lzma",
    "application/x-lz4",
    "application/zstd",
    "application/x-uboot-image",
    "application/octet-stream",
}


def classify_candidate(blob: bytes, media_type: str) -> CandidateKind:
    """Route a file down the plain-text or kernel-binary analysis path."""
    if mime.is_text(media_type):
        return CandidateKind.PLAIN_TEXT
    if media_type in _KERNEL_BINARY_TYPES:
        return CandidateKind.KERNEL_BINARY
    return CandidateKind.OTHER


# --- embedded-configuration extraction -------------------------------------


def _bounded_decompress(decompressor, data: bytes) -> bytes | None:
    """Feed data through an incremental decompressor, tolerating trailing
    garbage and truncation; returns whatever came out, or None."""
    out = bytearray()
    view = memoryview(data)
    try:
        for start in range(0, len(view), _CHUNK):
            out += decompressor.decompress(
                view[start : start + _CHUNK], _MAX_DECOMPRESSED - len(out)
            )
            if len(out) >= _MAX_DECOMPRESSED:
                break
            if getattr(decompressor, "eof", False):
                break
    except (zlib.error, lzma.LZMAError, OSError, EOFError, ValueError):
        pass
    return bytes(out) if out else None


def _gunzip(data: bytes) -> bytes | None:
    return _bounded_decompress(zlib.decompressobj(wbits=31), data)


def _unxz(data: bytes) -> bytes | None:
    return _bounded_decompress(lzma.LZMADecompressor(format=lzma.FORMAT_XZ), data)


def _bunzip2(data: bytes) -> bytes | None:
    return _bounded_decompress(bz2.BZ2Decompressor(), data)


def _unlzma(data: bytes) -> bytes | None:
    return _bounded_decompress(lzma.LZMADecompressor(format=lzma.FORMAT_ALONE), data)


def _unlz4(data: bytes) -> bytes | None:
    if _lz4_frame is None:
        logger.debug("lz4 codec unavailable, candidate skipped")
        return None
    try:
        return _lz4_frame.decompress(data, return_bytearray=False)
    except RuntimeError:
        return None


def _unzstd(data: bytes) -> bytes | None:
    if _zstandard is None:
        logger.debug("zstd codec unavailable, candidate skipped")
        return None
    try:
        return _zstandard.ZstdDecompressor().decompress(
            data, max_output_size=_MAX_DECOMPRESSED
        )
    except _zstandard.ZstdError:
        return None


# Priority order mirrors the kernel's historical config compressors.
_FORMATS: list[tuple[str, bytes, object]] = [
    ("gzip", b"\x1f\x8b", _gunzip),
    ("xz", b"\xfd7zXZ\x00", _unxz),
    ("bzip2", b"BZh", _bunzip2),
    ("lzma", b"\x5d\x00\x00", _unlzma),
    ("lzma", b"\x6d\x00\x00", _unlzma),
    ("lzma", b"\x6c\x00\x00", _unlzma),
    ("lz4", b"\x04\x22\x4d\x18", _unlz4),
    ("lz4", b"\x02\x21\x4c\x18", _unlz4),
    ("zstd", b"\x28\xb5\x2f\xfd", _unzstd),
]


def _decode_payload(payload: bytes) -> str | None:
    """Inter-marker payload to config text: try format signatures in
    order, falling back to raw text."""
    for name, signature, decompress in _FORMATS:
        if not payload.startswith(signature):
            continue
        data = decompress(payload)
        if data is None:
            logger.warning("embedded %s payload failed to decompress", name)
            continue
        return data.decode("utf-8", errors="replace")
    try:
        return payload.decode("utf-8")
    except UnicodeDecodeError:
        return None


def _search_markers(data: bytes, strict: bool) -> KernelConfig | None:
    idx = data.find(START_MARKER)
    while idx != -1:
        payload_start = idx + len(START_MARKER)
        end = data.find(END_MARKER, payload_start)
        if end == -1:
            # No end marker ahead of any later start marker either.
            message = f"config start marker at offset {idx} has no end marker"
            if strict:
                raise IkconfigExtractionError(message)
            logger.warning("%s", message)
            return None
        text = _decode_payload(data[payload_start:end])
        if text is not None:
            config = parse_config(text)
            if config.options:
                return config
        idx = data.find(START_MARKER, payload_start)
    return None


def _container_offsets(data: bytes, budget: int) -> list[tuple[int, object]]:
    found: list[tuple[int, object]] = []
    for _, signature, decompress in _FORMATS:
        start = 0
        while len(found) < budget * 4:
            offset = data.find(signature, start)
            if offset == -1:
                break
            found.append((offset, decompress))
            start = offset + 1
    found.sort(key=lambda item: item[0])
    return found[:budget]


def find_ikconfig(
    blob: bytes, max_candidates: int = DEFAULT_CONTAINER_CANDIDATES
) -> KernelConfig | None:
    """Extract an embedded kernel configuration from a binary image.

    The raw blob is searched for the start marker first; failing that,
    compressed containers are carved by signature (bounded to the first
    `max_candidates` offsets), decompressed, and searched in turn.
    Returns None when all options are exhausted.
    """
    config = _search_markers(blob, strict=True)
    if config is not None:
        return replace(config, source_kind=SourceKind.INLINE_STRING)
    budget = max_candidates
    queue: list[tuple[bytes, int]] = [(blob, 0)]
    while queue and budget > 0:
        data, depth = queue.pop(0)
        for offset, decompress in _container_offsets(data, budget):
            budget -= 1
            inner = decompress(data[offset:])
            if inner is not None:
                config = _search_markers(inner, strict=False)
                if config is not None:
                    return replace(config, source_kind=SourceKind.EMBEDDED_CONTAINER)
                if depth == 0:
                    queue.append((inner, depth + 1))
            if budget <= 0:
                break
    return None
