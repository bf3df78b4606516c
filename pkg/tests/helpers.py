"""Fixture builders shared across the test suite.

Everything here constructs inputs independently of the code under test:
ELF headers and device trees are assembled byte by byte from the
published formats, embedded configs are wrapped by hand.
"""

from __future__ import annotations

import gzip
import struct

IKCFG_ST = b"IKCFG_ST"
IKCFG_ED = b"IKCFG_ED"


def build_elf(
    machine: int,
    bits: int = 32,
    big_endian: bool = False,
    e_type: int = 2,
    e_flags: int = 0,
    truncate: int | None = None,
) -> bytes:
    """Minimal ELF header laid out from the ELF specification."""
    ei_class = 1 if bits == 32 else 2
    ei_data = 2 if big_endian else 1
    order = ">" if big_endian else "<"
    ident = b"\x7fELF" + bytes([ei_class, ei_data, 1, 0]) + b"\x00" * 8
    if bits == 32:
        rest = struct.pack(
            order + "HHIIIIIHHHHHH",
            e_type, machine, 1, 0x1000, 52, 0, e_flags, 52, 0, 0, 0, 0, 0,
        )
    else:
        rest = struct.pack(
            order + "HHIQQQIHHHHHH",
            e_type, machine, 1, 0x1000, 64, 0, e_flags, 64, 0, 0, 0, 0, 0,
        )
    header = ident + rest
    return header[:truncate] if truncate is not None else header


def build_fdt(cpu_compatibles: list[list[str]], root_props: bytes = b"") -> bytes:
    """Flattened device tree with /cpus/cpu@N nodes carrying
    "compatible" string lists."""
    strings = b"compatible\x00"

    def node(name: str, children: bytes = b"", props: bytes = b"") -> bytes:
        encoded = name.encode() + b"\x00"
        pad = (4 - len(encoded) % 4) % 4
        return (
            struct.pack(">I", 1)
            + encoded
            + b"\x00" * pad
            + props
            + children
            + struct.pack(">I", 2)
        )

    def prop(value: bytes) -> bytes:
        pad = (4 - len(value) % 4) % 4
        return struct.pack(">III", 3, len(value), 0) + value + b"\x00" * pad

    cpus_children = b""
    for index, compatibles in enumerate(cpu_compatibles):
        value = b"".join(c.encode() + b"\x00" for c in compatibles)
        cpus_children += node(f"cpu@{index}", props=prop(value))
    structure = (
        node("", children=node("cpus", children=cpus_children), props=root_props)
        + struct.pack(">I", 9)
    )
    off_struct = 40
    off_strings = off_struct + len(structure)
    total = off_strings + len(strings)
    header = struct.pack(
        ">10I",
        0xD00DFEED, total, off_struct, off_strings, total,
        17, 16, 0, len(strings), len(structure),
    )
    return header + structure + strings


def build_uimage(arch_code: int) -> bytes:
    """Legacy u-boot image header with the given architecture code."""
    header = bytearray(64)
    header[0:4] = b"\x27\x05\x19\x56"
    header[28] = 5  # OS: linux
    header[29] = arch_code
    header[30] = 2  # type: kernel
    header[32:38] = b"kernel"
    return bytes(header)


def embed_config(config_text: str, compressor=gzip.compress) -> bytes:
    """Marker-wrapped compressed payload as the kernel embeds it."""
    return IKCFG_ST + compressor(config_text.encode()) + IKCFG_ED


def random_option_map(rng, count: int) -> dict[str, str]:
    """Random option -> value-token map, values rendered as .config text
    tokens (the test-side serialization, independent of the library)."""
    options: dict[str, str] = {}
    while len(options) < count:
        name = "CONFIG_" + "".join(
            rng.choice("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_") for _ in range(rng.randint(3, 18))
        )
        roll = rng.random()
        if roll < 0.35:
            options[name] = "y"
        elif roll < 0.5:
            options[name] = "m"
        elif roll < 0.65:
            options[name] = "__not_set__"
        elif roll < 0.8:
            options[name] = '"' + "".join(rng.choice("abc def/=-") for _ in range(rng.randint(0, 12))) + '"'
        elif roll < 0.9:
            options[name] = str(rng.randint(-1000, 1000))
        else:
            options[name] = hex(rng.randint(0, 2**32))
    return options


def render_option_map(options: dict[str, str]) -> str:
    """Test-side .config writer (kept independent of the library's)."""
    lines = []
    for name, token in options.items():
        if token == "__not_set__":
            lines.append(f"# {name} is not set")
        else:
            lines.append(f"{name}={token}")
    return "\n".join(lines) + "\n"
