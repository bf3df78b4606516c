"""Dotted kernel release numbers: parsing, ordering, rendering."""

from __future__ import annotations

import re
from dataclasses import dataclass


class VersionParseError(ValueError):
    """A string does not parse as a kernel version."""


# X.Y.Z with an optional local-version suffix ("-rc3", "-gdeadbeef", ...).
_VERSION_RE = re.compile(r"(\d+)\.(\d{1,2})\.(\d{1,3})(-[\w.-]+)?")


@dataclass(frozen=True)
class KernelVersion:
    """A kernel release such as 4.9.60 or 3.4.0-g12ab.

    Ordering compares the (major, minor, patch) triple only; the local
    suffix never participates. Equality is field-exact, suffix included.
    """

    major: int
    minor: int
    patch: int
    suffix: str | None = None

    def __post_init__(self) -> None:
        if min(self.major, self.minor, self.patch) < 0:
            raise VersionParseError(f"negative component in {self.render()!r}")

    @classmethod
    def parse(cls, text: str) -> KernelVersion:
        m = _VERSION_RE.fullmatch(text.strip())
        if m is None:
            raise VersionParseError(f"not a kernel version: {text!r}")
        return cls(int(m.group(1)), int(m.group(2)), int(m.group(3)), m.group(4))

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.major, self.minor, self.patch)

    def render(self) -> str:
        return f"{self.major}.{self.minor}.{self.patch}{self.suffix or ''}"

    def __str__(self) -> str:
        return self.render()

    def __lt__(self, other: KernelVersion) -> bool:
        return self.triple < other.triple

    def __le__(self, other: KernelVersion) -> bool:
        return self.triple <= other.triple

    def __gt__(self, other: KernelVersion) -> bool:
        return self.triple > other.triple

    def __ge__(self, other: KernelVersion) -> bool:
        return self.triple >= other.triple

    def sort_key(self) -> tuple[int, int, int, str]:
        """Total order for stable listings: triple first, then suffix."""
        return (self.major, self.minor, self.patch, self.suffix or "")
