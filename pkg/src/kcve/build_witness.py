"""Reconstruct which source files a firmware kernel build compiled.

Fetches mainline sources for the detected version, installs the
extracted configuration, reconciles it non-interactively, and runs the
build system in no-execute mode. The printed compilation recipes are
parsed into a witnessed-file set. Nothing is ever compiled, so no cross
toolchain is required; the compiler is replaced by a stub that merely
satisfies existence probes.
"""

from __future__ import annotations

import hashlib
import logging
import os
import posixpath
import re
import stat
import subprocess
import tarfile
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from filelock import FileLock

from .arch_detect import ArchVerdict
from .ikconfig import KernelConfig, serialize_config
from .versions import KernelVersion

logger = logging.getLogger(__name__)

KERNEL_CDN = "https://cdn.kernel.org/pub/linux/kernel"

SOURCE_EXTENSIONS = (".c", ".S", ".s")


class UnsupportedVersionError(ValueError):
    """Version predates the supported kernel.org layout."""


class DownloadError(RuntimeError):
    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class CachePoisonedError(RuntimeError):
    """A cached tarball no longer matches its recorded checksum."""


class SourceExtractionError(RuntimeError):
    pass


class UnresolvedArchError(ValueError):
    """Dry build requested without a resolved target architecture."""


class DryBuildError(RuntimeError):
    def __init__(self, message: str, log_tail: str = ""):
        super().__init__(message)
        self.log_tail = log_tail


class BuildToolMissingError(DryBuildError):
    """Environment problem (make itself absent), not a firmware problem."""


@dataclass(frozen=True)
class SourceTree:
    version: KernelVersion
    root: Path
    url: str
    sha256: str


@dataclass(frozen=True)
class WitnessSet:
    """Source-tree-relative paths observed in a dry-build log."""

    files: frozenset[str]

    def __post_init__(self) -> None:
        for path in self.files:
            if path.startswith("/") or path.split("/", 1)[0] == "..":
                raise ValueError(f"witness path not tree-relative: {path!r}")
        basenames: dict[str, set[str]] = {}
        directories: dict[str, set[str]] = {}
        for path in self.files:
            basenames.setdefault(posixpath.basename(path), set()).add(path)
            directories.setdefault(posixpath.dirname(path), set()).add(path)
        object.__setattr__(
            self, "basenames", {k: frozenset(v) for k, v in basenames.items()}
        )
        object.__setattr__(
            self, "directories", {k: frozenset(v) for k, v in directories.items()}
        )

    @classmethod
    def from_paths(cls, paths: Iterable[str]) -> WitnessSet:
        normalized = set()
        for path in paths:
            path = posixpath.normpath(path.replace("\\", "/"))
            if path.startswith("/") or path.split("/", 1)[0] == "..":
                raise ValueError(f"witness path not tree-relative: {path!r}")
            normalized.add(path)
        return cls(frozenset(normalized))

    def __contains__(self, path: str) -> bool:
        return path in self.files

    def __len__(self) -> int:
        return len(self.files)

    def paths_for_basename(self, name: str) -> frozenset[str]:
        return self.basenames.get(name, frozenset())

    def paths_in_directory(self, directory: str) -> frozenset[str]:
        return self.directories.get(directory, frozenset())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "".join(f"{p}\n" for p in sorted(self.files)), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> WitnessSet:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_paths(line.strip() for line in lines if line.strip())


# --- kernel.org fetching -----------------------------------------------------


def version_lock(cache_dir: str | Path, version: KernelVersion) -> FileLock:
    """Cache-wide lock for one kernel version: guards tarball download,
    extraction, and exclusive use of the shared source tree."""
    lock_dir = Path(cache_dir) / "locks"
    lock_dir.mkdir(parents=True, exist_ok=True)
    key = f"{version.major}.{version.minor}.{version.patch}"
    return FileLock(str(lock_dir / (key + ".lock")))


def kernel_source_url(version: KernelVersion, base: str = KERNEL_CDN) -> str:
    """Deterministic kernel.org CDN location for a mainline release.

    v2.x lives under per-minor directories as .tar.gz; v3.x onwards under
    vX.x as .tar.xz, with ".0" omitted on the first release of a series.
    The local suffix never affects the mainline fetch.
    """
    if version.major < 2:
        raise UnsupportedVersionError(
            f"no supported kernel.org layout for {version.render()}"
        )
    if version.major == 2:
        return (
            f"{base}/v2.{version.minor}/"
            f"linux-{version.major}.{version.minor}.{version.patch}.tar.gz"
        )
    name = f"{version.major}.{version.minor}"
    if version.patch:
        name += f".{version.patch}"
    return f"{base}/v{version.major}.x/linux-{name}.tar.xz"


def _http_fetch(url: str, attempts: int = 3) -> bytes:
    import requests

    last: Exception | None = None
    for attempt in range(attempts):
        try:
            response = requests.get(url, timeout=300)
            response.raise_for_status()
            return response.content
        except requests.RequestException as exc:
            last = exc
            logger.warning("download attempt %d failed: %s", attempt + 1, exc)
    raise DownloadError(f"failed to download {url}: {last}")


def _safe_extract(tar: tarfile.TarFile, dest: Path) -> None:
    try:
        tar.extractall(dest, filter="data")
    except TypeError:  # no extraction-filter support
        dest_resolved = dest.resolve()
        for member in tar.getmembers():
            target = (dest / member.name).resolve()
            if not str(target).startswith(str(dest_resolved)):
                raise SourceExtractionError(
                    f"tar member escapes extraction root: {member.name}"
                )
        tar.extractall(dest)


def _makefile_triple(root: Path) -> tuple[int, int, int]:
    fields = {}
    for line in (root / "Makefile").read_text(errors="replace").splitlines()[:10]:
        m = re.match(r"(VERSION|PATCHLEVEL|SUBLEVEL)\s*=\s*(\d*)", line)
        if m:
            fields[m.group(1)] = int(m.group(2) or 0)
    return (
        fields.get("VERSION", -1),
        fields.get("PATCHLEVEL", -1),
        fields.get("SUBLEVEL", 0),
    )


def fetch_kernel_source(
    version: KernelVersion,
    cache_dir: str | Path,
    fetcher: Callable[[str], bytes] | None = None,
    offline: bool = False,
) -> SourceTree:
    """Download (or reuse) and extract the mainline tarball for a version.

    The tarball cache is keyed by the numeric triple; a checksum is
    recorded on first download and verified on every later call. Cached
    inputs are never refetched.
    """
    cache = Path(cache_dir)
    url = kernel_source_url(version)
    key = f"{version.major}.{version.minor}.{version.patch}"
    tarball = cache / "tarballs" / (key + url[url.rindex(".tar") :])
    checksum_file = tarball.with_name(tarball.name + ".sha256")
    tree_parent = cache / "trees" / key
    for directory in (tarball.parent, tree_parent.parent):
        directory.mkdir(parents=True, exist_ok=True)

    with version_lock(cache, version):
        if not tarball.exists():
            if offline:
                raise DownloadError(
                    f"offline mode and no cached tarball for {key}", retryable=False
                )
            data = (fetcher or _http_fetch)(url)
            tmp = tarball.with_suffix(".part")
            tmp.write_bytes(data)
            tmp.replace(tarball)
            checksum_file.write_text(hashlib.sha256(data).hexdigest() + "\n")
            logger.info("downloaded %s (%d bytes)", url, len(data))
        digest = hashlib.sha256(tarball.read_bytes()).hexdigest()
        if checksum_file.exists():
            recorded = checksum_file.read_text().strip()
            if recorded and recorded != digest:
                raise CachePoisonedError(
                    f"{tarball} checksum changed: recorded {recorded}, now {digest}"
                )
        else:
            checksum_file.write_text(digest + "\n")

        marker = tree_parent / ".extracted"
        if not marker.exists():
            tree_parent.mkdir(parents=True, exist_ok=True)
            try:
                with tarfile.open(tarball) as tar:
                    _safe_extract(tar, tree_parent)
            except (tarfile.TarError, EOFError, OSError) as exc:
                raise SourceExtractionError(
                    f"cannot extract cache entry {tarball}: {exc}"
                ) from exc
            marker.touch()
        roots = [p for p in tree_parent.iterdir() if p.is_dir()]
        if len(roots) != 1:
            raise SourceExtractionError(
                f"expected one top-level directory in {tree_parent}, found {len(roots)}"
            )
        root = roots[0]
        if _makefile_triple(root) != version.triple:
            raise SourceExtractionError(
                f"{root}/Makefile does not declare version {key}"
            )
    return SourceTree(version, root, url, digest)


# --- dry build ------------------------------------------------------------------


_MAKE_ARCH = {
    "mips": "mips",
    "arm": "arm",
    "aarch64": "arm64",
    "x86": "x86",
    "x86-64": "x86",
    "powerpc": "powerpc",
    "riscv": "riscv",
    "sh": "sh",
    "sparc": "sparc",
    "s390": "s390",
    "m68k": "m68k",
}

_STUB_CC = """#!/bin/sh
# Stand-in compiler for no-execute builds: answers version probes and
# accepts every flag so option checks succeed. Never compiles anything.
for arg in "$@"; do
    case "$arg" in
        --version) echo "gcc (kcve-stub) 9.3.0"; exit 0 ;;
        -dumpversion) echo "9.3.0"; exit 0 ;;
        -dumpmachine) echo "unknown-linux-gnu"; exit 0 ;;
        -print-file-name=*) echo "${arg#-print-file-name=}"; exit 0 ;;
    esac
done
exit 0
"""


def _run_make(args: list[str], cwd: Path, input_text: str | None = None):
    try:
        return subprocess.run(
            ["make", *args],
            cwd=cwd,
            input=input_text,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
            errors="replace",
        )
    except FileNotFoundError as exc:
        raise BuildToolMissingError(f"make not available: {exc}") from exc


def run_dry_build(
    tree: SourceTree,
    config: KernelConfig,
    arch: ArchVerdict,
    log_path: str | Path | None = None,
) -> str:
    """Install the config into the tree and capture the no-execute build log.

    The configuration is reconciled against the tree's option set first
    (accepting defaults for unknown options); the dry run then prints
    every compilation recipe without executing it.
    """
    if arch.resolved is None:
        raise UnresolvedArchError("target architecture unresolved, dry build refused")
    make_arch = _MAKE_ARCH.get(arch.resolved.family)
    if make_arch is None:
        raise UnresolvedArchError(
            f"no ARCH mapping for family {arch.resolved.family!r}"
        )
    if not config.options:
        raise ValueError("refusing dry build with an empty configuration")

    (tree.root / ".config").write_text(serialize_config(config), encoding="utf-8")

    with tempfile.TemporaryDirectory(prefix="kcve-cc-") as stub_dir:
        stub = Path(stub_dir) / "cc"
        stub.write_text(_STUB_CC)
        stub.chmod(stub.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
        base = [f"ARCH={make_arch}", f"CC={stub}", "CROSS_COMPILE="]

        reconcile = _run_make(["olddefconfig", *base], tree.root)
        log = reconcile.stdout
        if reconcile.returncode != 0:
            # Kernels before 3.8 lack olddefconfig; feed oldconfig defaults.
            reconcile = _run_make(
                ["oldconfig", *base], tree.root, input_text="\n" * 10000
            )
            log += reconcile.stdout
            if reconcile.returncode != 0:
                raise DryBuildError(
                    "config reconciliation failed", _tail(log)
                )

        dry = _run_make(["-n", *base], tree.root)
        log += dry.stdout
        if dry.returncode != 0:
            raise DryBuildError(
                f"dry build exited with status {dry.returncode}", _tail(log)
            )
    if log_path is not None:
        Path(log_path).write_text(log, encoding="utf-8")
    return log


def _tail(log: str, lines: int = 100) -> str:
    return "\n".join(log.splitlines()[-lines:])


# --- build-log parsing ------------------------------------------------------------


_TOKEN_STRIP = "'\"`();,"


def _normalize_source_token(token: str) -> str | None:
    token = token.strip(_TOKEN_STRIP)
    if not token.endswith(SOURCE_EXTENSIONS):
        return None
    if token.startswith(("-", "/")) or "=" in token:
        return None  # a flag, or absolute and outside the tree
    path = posixpath.normpath(token.replace("\\", "/"))
    if path.startswith("../") or path in (".", ".."):
        return None
    if "/" not in path and path.startswith("."):
        return None
    return path


def parse_build_log(log: str) -> WitnessSet:
    """Witnessed source files from no-execute build output.

    A line counts as a compilation recipe when it carries the compile
    flag (``-c``); every source-extension token in it is witnessed.
    Recipes that name only the object (implicit-rule shorthand) witness
    the inferred .c sibling. Unusable lines are skipped and counted.
    """
    witnessed: set[str] = set()
    skipped = 0
    for line in log.splitlines():
        tokens = [t.strip(_TOKEN_STRIP) for t in line.split()]
        if "-c" not in tokens:
            if any(t.endswith(SOURCE_EXTENSIONS) for t in tokens):
                skipped += 1
            continue
        sources = []
        saw_source_shaped = False
        for token in tokens:
            if token.endswith(SOURCE_EXTENSIONS):
                saw_source_shaped = True
            path = _normalize_source_token(token)
            if path is not None:
                sources.append(path)
        if not sources and not saw_source_shaped:
            for i, token in enumerate(tokens):
                if token == "-o" and i + 1 < len(tokens):
                    target = tokens[i + 1]
                    if target.endswith(".o"):
                        inferred = _normalize_source_token(target[:-2] + ".c")
                        if inferred is not None:
                            sources.append(inferred)
        if sources:
            witnessed.update(sources)
        else:
            skipped += 1
    if skipped:
        logger.debug("build log: %d lines skipped without witness", skipped)
    return WitnessSet(frozenset(witnessed))
