"""Build-aware Linux kernel CVE attribution for binary firmware."""

__version__ = "0.1.0"

from .versions import KernelVersion, VersionParseError

__all__ = ["KernelVersion", "VersionParseError", "__version__"]
