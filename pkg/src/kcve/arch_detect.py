"""Identify the target instruction set of a firmware kernel.

Four measures contribute evidence, ranked by how direct it is:
ELF header fields, device-tree CPU nodes, architecture-specific
configuration directives, and file-type (MIME) hints. Consolidation
keeps every guess and resolves to the highest-ranked agreeing group;
"unknown" is a first-class outcome.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .ikconfig import KernelConfig

logger = logging.getLogger(__name__)

FAMILY_MIPS = "mips"
FAMILY_ARM = "arm"
FAMILY_AARCH64 = "aarch64"
FAMILY_X86 = "x86"
FAMILY_X86_64 = "x86-64"
FAMILY_POWERPC = "powerpc"

LITTLE = "little"
BIG = "big"


class Evidence(Enum):
    ELF_HEADER = "elf-header"
    DEVICE_TREE = "device-tree"
    CONFIG_DIRECTIVE = "config-directive"
    MIME = "mime"

    @property
    def rank(self) -> int:
        return _RANKS[self]


_RANKS = {
    Evidence.ELF_HEADER: 3,
    Evidence.DEVICE_TREE: 2,
    Evidence.CONFIG_DIRECTIVE: 1,
    Evidence.MIME: 0,
}


@dataclass(frozen=True)
class ArchGuess:
    family: str
    bits: int | None
    endianness: str | None
    evidence: Evidence
    detail: str = ""

    @property
    def confidence(self) -> int:
        return self.evidence.rank


@dataclass(frozen=True)
class ResolvedArch:
    family: str
    bits: int | None
    endianness: str | None


@dataclass
class ArchVerdict:
    resolved: ResolvedArch | None
    guesses: list[ArchGuess] = field(default_factory=list)


# --- shipped mapping tables -------------------------------------------------


@dataclass
class ArchTables:
    config_rules: list[tuple[str, str | None, int | None, str | None]]
    compat_exact: dict[str, tuple[str, int | None]]
    compat_prefix: dict[str, tuple[str, int | None]]
    uimage: dict[int, tuple[str, int | None]]
    version: int = 0


def _field(token: str) -> str | None:
    return None if token == "-" else token


def _bits_field(token: str) -> int | None:
    return None if token == "-" else int(token)


def load_tables(path: str | Path | None = None) -> ArchTables:
    if path is None:
        return _default_tables()
    return _parse_tables(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def _default_tables() -> ArchTables:
    text = (
        resources.files("kcve").joinpath("data/arch_tables.txt").read_text("utf-8")
    )
    return _parse_tables(text)


def _parse_tables(text: str) -> ArchTables:
    tables = ArchTables([], {}, {}, {})
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        kind = fields[0]
        try:
            if kind == "version":
                tables.version = int(fields[1])
            elif kind == "config":
                tables.config_rules.append(
                    (fields[1], _field(fields[2]), _bits_field(fields[3]), _field(fields[4]))
                )
            elif kind == "compatible":
                tables.compat_exact[fields[1]] = (fields[2], _bits_field(fields[3]))
            elif kind == "compatible-prefix":
                tables.compat_prefix[fields[1]] = (fields[2], _bits_field(fields[3]))
            elif kind == "uimage":
                tables.uimage[int(fields[1])] = (fields[2], _bits_field(fields[3]))
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"arch table line {lineno}: {exc}") from exc
    return tables


# --- ELF --------------------------------------------------------------------

_EM_FAMILIES: dict[int, str] = {
    3: FAMILY_X86,
    8: FAMILY_MIPS,
    20: FAMILY_POWERPC,
    21: FAMILY_POWERPC,
    40: FAMILY_ARM,
    62: FAMILY_X86_64,
    183: FAMILY_AARCH64,
    2: "sparc",
    4: "m68k",
    22: "s390",
    42: "sh",
    43: "sparc",
    50: "ia64",
    243: "riscv",
}

_EF_MIPS_ARCH = {
    0x00000000: "mips1",
    0x10000000: "mips2",
    0x20000000: "mips3",
    0x30000000: "mips4",
    0x40000000: "mips5",
    0x50000000: "mips32",
    0x60000000: "mips64",
    0x70000000: "mips32r2",
    0x80000000: "mips64r2",
    0x90000000: "mips32r6",
    0xA0000000: "mips64r6",
}


def detect_from_elf(blob: bytes) -> ArchGuess | None:
    """Family/bits/endianness from the ELF identification and header.

    e_flags refines the guess for MIPS (ISA revision and ABI); other
    families ignore it.
    """
    if blob[:4] != b"\x7fELF":
        return None
    if len(blob) < 52:
        logger.warning("truncated ELF header (%d bytes)", len(blob))
        return None
    ei_class, ei_data = blob[4], blob[5]
    bits = {1: 32, 2: 64}.get(ei_class)
    endianness = {1: LITTLE, 2: BIG}.get(ei_data)
    if endianness is None:
        logger.warning("ELF with invalid EI_DATA byte %#x", ei_data)
        return None
    order = "<" if endianness == LITTLE else ">"
    (e_machine,) = struct.unpack_from(order + "H", blob, 18)
    family = _EM_FAMILIES.get(e_machine, f"em{e_machine}")
    detail = f"e_machine={e_machine}"
    if family == FAMILY_MIPS:
        flags_offset = 36 if bits == 32 else 48
        if len(blob) >= flags_offset + 4:
            (e_flags,) = struct.unpack_from(order + "I", blob, flags_offset)
            isa = _EF_MIPS_ARCH.get(e_flags & 0xF0000000)
            abi = []
            if e_flags & 0x00001000:
                abi.append("o32")
            if e_flags & 0x00002000:
                abi.append("o64")
            if e_flags & 0x00000020:
                abi.append("n32")
            if isa:
                detail += f" {isa}"
            if abi:
                detail += " " + ",".join(abi)
    return ArchGuess(family, bits, endianness, Evidence.ELF_HEADER, detail)


# --- configuration directives -------------------------------------------------


def detect_from_config(
    config: KernelConfig, tables: ArchTables | None = None
) -> ArchGuess | None:
    """Match enabled options against the directive table.

    The first family hit (table order) decides the family; further
    matching rules only fill in unknown bits/endianness when they name
    the same family or no family at all.
    """
    tables = tables or _default_tables()
    family: str | None = None
    bits: int | None = None
    endianness: str | None = None
    matched: list[str] = []
    for option, rule_family, rule_bits, rule_endian in tables.config_rules:
        value = config.options.get(option)
        if value is None or not value.is_enabled:
            continue
        if rule_family is not None:
            if family is None:
                family = rule_family
            elif rule_family != family:
                continue
        matched.append(option)
        if bits is None and rule_bits is not None:
            bits = rule_bits
        if endianness is None and rule_endian is not None:
            endianness = rule_endian
    if family is None:
        return None
    return ArchGuess(
        family, bits, endianness, Evidence.CONFIG_DIRECTIVE, " ".join(matched)
    )


# --- flattened device trees ---------------------------------------------------

_FDT_MAGIC = b"\xd0\x0d\xfe\xed"
_FDT_BEGIN_NODE = 1
_FDT_END_NODE = 2
_FDT_PROP = 3
_FDT_NOP = 4
_FDT_END = 9


def _iter_cpu_compatibles(blob: bytes):
    """Yield strings from "compatible" properties under the /cpus node."""
    magic, _totalsize, off_struct, off_strings = struct.unpack_from(">IIII", blob, 0)
    pos = off_struct
    path: list[str] = []
    while pos + 4 <= len(blob):
        (token,) = struct.unpack_from(">I", blob, pos)
        pos += 4
        if token == _FDT_BEGIN_NODE:
            end = blob.index(b"\x00", pos)
            name = blob[pos:end].decode("ascii", errors="replace")
            path.append(name.split("@", 1)[0])
            pos = (end + 1 + 3) & ~3
        elif token == _FDT_END_NODE:
            if path:
                path.pop()
        elif token == _FDT_PROP:
            length, nameoff = struct.unpack_from(">II", blob, pos)
            pos += 8
            value = blob[pos : pos + length]
            pos = (pos + length + 3) & ~3
            name_end = blob.index(b"\x00", off_strings + nameoff)
            prop = blob[off_strings + nameoff : name_end].decode(
                "ascii", errors="replace"
            )
            if prop == "compatible" and len(path) >= 2 and path[1] == "cpus":
                for chunk in value.split(b"\x00"):
                    if chunk:
                        yield chunk.decode("ascii", errors="replace")
        elif token == _FDT_NOP:
            continue
        elif token == _FDT_END:
            return
        else:
            raise ValueError(f"unknown FDT token {token} at offset {pos - 4}")


def detect_from_device_tree(
    blob: bytes, tables: ArchTables | None = None
) -> ArchGuess | None:
    """Map /cpus "compatible" strings to a family via the shipped table."""
    if blob[:4] != _FDT_MAGIC or len(blob) < 40:
        return None
    tables = tables or _default_tables()
    fallback: ArchGuess | None = None
    try:
        for compatible in _iter_cpu_compatibles(blob):
            hit = tables.compat_exact.get(compatible)
            if hit is not None:
                family, bits = hit
                return ArchGuess(
                    family, bits, None, Evidence.DEVICE_TREE, compatible
                )
            if fallback is None:
                vendor = compatible.split(",", 1)[0]
                prefix_hit = tables.compat_prefix.get(vendor)
                if prefix_hit is not None:
                    fallback = ArchGuess(
                        prefix_hit[0],
                        prefix_hit[1],
                        None,
                        Evidence.DEVICE_TREE,
                        compatible,
                    )
    except (struct.error, ValueError, IndexError) as exc:
        logger.warning("malformed device tree: %s", exc)
        return None
    return fallback


# --- MIME / file-type hints ----------------------------------------------------


def detect_from_mime(
    blob: bytes, media_type: str, tables: ArchTables | None = None
) -> ArchGuess | None:
    """Thin last-resort measure: file types whose headers leak the ISA."""
    if media_type == "application/x-uboot-image" and len(blob) >= 32:
        tables = tables or _default_tables()
        hit = tables.uimage.get(blob[29])
        if hit is not None:
            return ArchGuess(
                hit[0], hit[1], None, Evidence.MIME, f"uimage arch {blob[29]}"
            )
    return None


# --- consolidation --------------------------------------------------------------


def _majority(values: list) -> object | None:
    """Most common value, or None on a tie (permutation-invariant)."""
    counts: dict = {}
    for value in values:
        counts[value] = counts.get(value, 0) + 1
    if not counts:
        return None
    best = max(counts.values())
    winners = [value for value, count in counts.items() if count == best]
    return winners[0] if len(winners) == 1 else None


def consolidate(guesses: list[ArchGuess]) -> ArchVerdict:
    """Resolve collected guesses by evidence rank.

    Only the highest-ranked guesses determine the verdict: family by
    majority (ties resolve to unknown), bits/endianness by majority of
    the family-agreeing group. Lower-ranked guesses are recorded but
    never contribute fields.
    """
    guesses = list(guesses)
    if not guesses:
        return ArchVerdict(resolved=None, guesses=[])
    top_rank = max(g.confidence for g in guesses)
    top = [g for g in guesses if g.confidence == top_rank]
    family = _majority([g.family for g in top])
    if family is None:
        return ArchVerdict(resolved=None, guesses=guesses)
    agreeing = [g for g in top if g.family == family]
    bits = _majority([g.bits for g in agreeing if g.bits is not None])
    endianness = _majority(
        [g.endianness for g in agreeing if g.endianness is not None]
    )
    return ArchVerdict(ResolvedArch(family, bits, endianness), guesses)
