"""Linux kernel CVE records from NVD JSON (API schema 2.0) dumps.

Ingest keeps only records whose CPE applicability statements name the
Linux kernel (vendor ``linux``, product ``linux_kernel``), parses their
version constraints, and derives affected-file references from the
English description text. Snapshots are immutable after ingest.
"""

from __future__ import annotations

import gzip
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .versions import KernelVersion, VersionParseError

logger = logging.getLogger(__name__)

_CVE_ID_RE = re.compile(r"CVE-(\d{4})-(\d{4,})")


class FeedSchemaError(ValueError):
    """The document does not follow the pinned NVD JSON schema."""


class RefKind(Enum):
    FULL_PATH = "full-path"
    FILE_ONLY = "file-only"


# Leading source-tree prefixes CVE texts often carry ("linux/",
# "linux-4.9.6/", ...); stripped from normalized full paths.
_TREE_PREFIX_RE = re.compile(r"^linux(-\d[\w.]*)?/", re.IGNORECASE)

_FILE_TOKEN_RE = re.compile(
    r"(?<![A-Za-z0-9_./-])([A-Za-z0-9_./-]+\.(?:c|h|S))(?![A-Za-z0-9_/])"
)


@dataclass(frozen=True)
class FileRef:
    raw: str
    kind: RefKind
    normalized: str

    @classmethod
    def from_token(cls, raw: str) -> FileRef:
        kind = RefKind.FULL_PATH if "/" in raw else RefKind.FILE_ONLY
        normalized = raw.replace("\\", "/").lstrip("/")
        normalized = _TREE_PREFIX_RE.sub("", normalized)
        while normalized.startswith("./"):
            normalized = normalized[2:]
        return cls(raw, kind, normalized)


def extract_file_refs(description: str) -> list[FileRef]:
    """Source/header file tokens mentioned in a record description.

    Tokens with a path separator classify as full-path references
    (relative to the kernel tree), bare filenames as file-only.
    Duplicates keep their first occurrence.
    """
    refs: list[FileRef] = []
    seen: set[tuple[RefKind, str]] = set()
    for m in _FILE_TOKEN_RE.finditer(description):
        ref = FileRef.from_token(m.group(1))
        key = (ref.kind, ref.normalized)
        if key not in seen:
            seen.add(key)
            refs.append(ref)
    return refs


@dataclass(frozen=True)
class VersionConstraint:
    """One CPE applicability statement: an exact version or a range."""

    exact: KernelVersion | None = None
    start: KernelVersion | None = None
    start_inclusive: bool = True
    end: KernelVersion | None = None
    end_inclusive: bool = True

    def __post_init__(self) -> None:
        if self.exact is not None and (self.start or self.end):
            raise ValueError("exact constraint excludes range bounds")
        if self.exact is None and self.start is None and self.end is None:
            raise ValueError("constraint admits everything; refusing")

    def admits(self, version: KernelVersion) -> bool:
        triple = version.triple
        if self.exact is not None:
            return triple == self.exact.triple
        if self.start is not None:
            lower = self.start.triple
            if triple < lower or (triple == lower and not self.start_inclusive):
                return False
        if self.end is not None:
            upper = self.end.triple
            if triple > upper or (triple == upper and not self.end_inclusive):
                return False
        return True


def version_matches(
    constraints: Iterable[VersionConstraint], version: KernelVersion
) -> bool:
    """True iff any constraint admits the version (suffix ignored)."""
    return any(c.admits(version) for c in constraints)


@dataclass(frozen=True)
class CveRecord:
    id: str
    description: str
    constraints: tuple[VersionConstraint, ...]
    file_refs: tuple[FileRef, ...]
    published: str = ""
    modified: str = ""

    @classmethod
    def build(
        cls,
        cve_id: str,
        description: str,
        constraints: Iterable[VersionConstraint],
        published: str = "",
        modified: str = "",
    ) -> CveRecord:
        if not _CVE_ID_RE.fullmatch(cve_id):
            raise ValueError(f"not a CVE identifier: {cve_id!r}")
        return cls(
            id=cve_id,
            description=description,
            constraints=tuple(constraints),
            file_refs=tuple(extract_file_refs(description)),
            published=published,
            modified=modified,
        )

    def sort_key(self) -> tuple[int, int]:
        m = _CVE_ID_RE.fullmatch(self.id)
        assert m is not None
        return (int(m.group(1)), int(m.group(2)))

    @property
    def full_path_refs(self) -> tuple[FileRef, ...]:
        return tuple(r for r in self.file_refs if r.kind is RefKind.FULL_PATH)


@dataclass(frozen=True)
class NvdSnapshot:
    records: tuple[CveRecord, ...]
    snapshot_date: str = ""
    source: str = ""

    def __len__(self) -> int:
        return len(self.records)


def _parse_cpe_version(text: str) -> KernelVersion:
    """CPE version strings: 1 to 3 numeric components, extras kept as
    an ordering-neutral suffix."""
    parts = text.split(".")
    numeric = []
    for part in parts[:3]:
        if not part.isdigit():
            raise VersionParseError(f"non-numeric CPE version component: {text!r}")
        numeric.append(int(part))
    while len(numeric) < 3:
        numeric.append(0)
    rest = ".".join(parts[3:])
    return KernelVersion(*numeric, suffix=f"-{rest}" if rest else None)


def _cpe_fields(criteria: str) -> tuple[str, str, str] | None:
    parts = criteria.split(":")
    if len(parts) < 6 or parts[0] != "cpe":
        return None
    return parts[3], parts[4], parts[5]  # vendor, product, version


def _constraint_from_match(match: dict) -> VersionConstraint | None:
    start = end = None
    start_inclusive = end_inclusive = True
    if "versionStartIncluding" in match:
        start = _parse_cpe_version(match["versionStartIncluding"])
    elif "versionStartExcluding" in match:
        start = _parse_cpe_version(match["versionStartExcluding"])
        start_inclusive = False
    if "versionEndIncluding" in match:
        end = _parse_cpe_version(match["versionEndIncluding"])
    elif "versionEndExcluding" in match:
        end = _parse_cpe_version(match["versionEndExcluding"])
        end_inclusive = False
    if start is not None or end is not None:
        return VersionConstraint(
            start=start,
            start_inclusive=start_inclusive,
            end=end,
            end_inclusive=end_inclusive,
        )
    fields = _cpe_fields(match.get("criteria", ""))
    version = fields[2] if fields else "*"
    if version in ("*", "-"):
        # No version information at all; an unbounded match is noise.
        logger.warning(
            "kernel CPE without version bounds skipped: %s", match.get("criteria")
        )
        return None
    return VersionConstraint(exact=_parse_cpe_version(version))


def _is_kernel_cpe(criteria: str) -> bool:
    fields = _cpe_fields(criteria)
    return fields is not None and fields[0] == "linux" and fields[1] == "linux_kernel"


def _iter_cpe_matches(cve: dict):
    for configuration in cve.get("configurations", []):
        for node in configuration.get("nodes", []):
            for match in node.get("cpeMatch", []):
                yield match


def _english_description(cve: dict) -> str:
    for entry in cve.get("descriptions", []):
        if entry.get("lang") == "en":
            return entry.get("value", "")
    return ""


def _load_document(source) -> tuple[dict, str]:
    if isinstance(source, dict):
        return source, "<dict>"
    path = Path(source)
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return json.loads(data), str(path)


def ingest_nvd_feed(source, origin: str | None = None) -> NvdSnapshot:
    """Parse an NVD 2.0 dump (path, optionally gzipped, or parsed dict)
    into a snapshot of Linux kernel records.

    Schema violations are fatal and name the offending document path;
    individually malformed CPE entries only cost their constraint.
    """
    document, detected_origin = _load_document(source)
    origin = origin or detected_origin
    vulnerabilities = document.get("vulnerabilities")
    if not isinstance(vulnerabilities, list):
        raise FeedSchemaError("$.vulnerabilities missing or not a list")
    records = []
    dropped = 0
    for index, item in enumerate(vulnerabilities):
        cve = item.get("cve") if isinstance(item, dict) else None
        if not isinstance(cve, dict):
            raise FeedSchemaError(f"$.vulnerabilities[{index}].cve missing")
        cve_id = cve.get("id")
        if not isinstance(cve_id, str) or not _CVE_ID_RE.fullmatch(cve_id):
            raise FeedSchemaError(f"$.vulnerabilities[{index}].cve.id invalid")
        constraints = []
        kernel = False
        for match in _iter_cpe_matches(cve):
            if not _is_kernel_cpe(match.get("criteria", "")):
                continue
            kernel = True
            if match.get("vulnerable") is False:
                continue
            try:
                constraint = _constraint_from_match(match)
            except (VersionParseError, ValueError) as exc:
                logger.warning("%s: constraint skipped: %s", cve_id, exc)
                continue
            if constraint is not None:
                constraints.append(constraint)
        if not kernel:
            continue
        if not constraints:
            dropped += 1
            logger.warning("%s: no usable version constraint, record dropped", cve_id)
            continue
        records.append(
            CveRecord.build(
                cve_id,
                _english_description(cve),
                constraints,
                published=cve.get("published", ""),
                modified=cve.get("lastModified", ""),
            )
        )
    if dropped:
        logger.warning("%d kernel records dropped for missing constraints", dropped)
    records.sort(key=CveRecord.sort_key)
    return NvdSnapshot(
        records=tuple(records),
        snapshot_date=document.get("timestamp", ""),
        source=f"{origin} (NVD_CVE {document.get('version', '?')})",
    )


def version_filter(snapshot: NvdSnapshot, version: KernelVersion) -> list[CveRecord]:
    """Records whose constraints admit the version, in stable id order."""
    return [
        record
        for record in snapshot.records
        if version_matches(record.constraints, version)
    ]


NVD_API_URL = "https://services.nvd.nist.gov/rest/json/cves/2.0"
_NVD_PAGE_SIZE = 2000


def sync_nvd_dump(out_path: str | Path, fetch_page=None) -> int:
    """Thin live-API fetcher: page through the NVD for Linux kernel CVEs
    and write a merged 2.0-format dump. Returns the record count.

    `fetch_page(start_index)` must return one parsed API response; the
    default performs HTTP requests against the public API.
    """
    if fetch_page is None:

        def fetch_page(start_index: int) -> dict:
            import requests

            response = requests.get(
                NVD_API_URL,
                params={
                    "virtualMatchString": "cpe:2.3:o:linux:linux_kernel",
                    "resultsPerPage": _NVD_PAGE_SIZE,
                    "startIndex": start_index,
                },
                timeout=120,
            )
            response.raise_for_status()
            return response.json()

    vulnerabilities: list[dict] = []
    start = 0
    timestamp = ""
    while True:
        page = fetch_page(start)
        vulnerabilities.extend(page.get("vulnerabilities", []))
        timestamp = page.get("timestamp", timestamp)
        total = page.get("totalResults", 0)
        start += page.get("resultsPerPage", 0) or _NVD_PAGE_SIZE
        if start >= total:
            break
    document = {
        "format": "NVD_CVE",
        "version": "2.0",
        "timestamp": timestamp,
        "totalResults": len(vulnerabilities),
        "vulnerabilities": vulnerabilities,
    }
    out_path = Path(out_path)
    payload = json.dumps(document).encode()
    if out_path.suffix == ".gz":
        out_path.write_bytes(gzip.compress(payload))
    else:
        out_path.write_bytes(payload)
    return len(vulnerabilities)


# --- snapshot persistence -----------------------------------------------------


def _constraint_to_dict(c: VersionConstraint) -> dict:
    out: dict = {}
    if c.exact is not None:
        out["exact"] = c.exact.render()
    if c.start is not None:
        out["start"] = c.start.render()
        out["start_inclusive"] = c.start_inclusive
    if c.end is not None:
        out["end"] = c.end.render()
        out["end_inclusive"] = c.end_inclusive
    return out


def _constraint_from_dict(d: dict) -> VersionConstraint:
    return VersionConstraint(
        exact=KernelVersion.parse(d["exact"]) if "exact" in d else None,
        start=KernelVersion.parse(d["start"]) if "start" in d else None,
        start_inclusive=d.get("start_inclusive", True),
        end=KernelVersion.parse(d["end"]) if "end" in d else None,
        end_inclusive=d.get("end_inclusive", True),
    )


def save_snapshot(snapshot: NvdSnapshot, path: str | Path) -> None:
    payload = {
        "schema": "kcve-snapshot/1",
        "snapshot_date": snapshot.snapshot_date,
        "source": snapshot.source,
        "records": [
            {
                "id": r.id,
                "description": r.description,
                "constraints": [_constraint_to_dict(c) for c in r.constraints],
                "published": r.published,
                "modified": r.modified,
            }
            for r in snapshot.records
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_snapshot(path: str | Path) -> NvdSnapshot:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema") != "kcve-snapshot/1":
        raise FeedSchemaError(f"{path}: not a kcve snapshot cache")
    records = tuple(
        CveRecord.build(
            entry["id"],
            entry["description"],
            [_constraint_from_dict(c) for c in entry["constraints"]],
            published=entry.get("published", ""),
            modified=entry.get("modified", ""),
        )
        for entry in payload["records"]
    )
    return NvdSnapshot(
        records=records,
        snapshot_date=payload.get("snapshot_date", ""),
        source=payload.get("source", ""),
    )
