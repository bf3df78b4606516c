"""Classify version-matched CVEs against the witnessed-file set.

Each candidate lands in exactly one verdict class, evaluated in
priority order:

1. applicable-high      — a referenced full path was witnessed.
2. applicable-low       — the record references no files at all; only
                          version evidence remains.
3. applicable-medium    — a referenced basename was witnessed somewhere
                          (ambiguous location), or a referenced header's
                          directory contains witnessed sources.
4. not-applicable-high  — files are referenced but nothing was
                          witnessed; the record is filtered out.

Headers never appear in build logs; a full-path .h reference is
credited at medium confidence when its directory co-locates witnessed
sources, and otherwise counts as unwitnessed.
"""

from __future__ import annotations

import csv
import io
import json
import posixpath
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .arch_detect import ArchVerdict
from .build_witness import WitnessSet
from .cve_store import CveRecord, FileRef, RefKind
from .versions import KernelVersion


class VerdictClass(Enum):
    APPLICABLE_HIGH = "applicable-high"
    NOT_APPLICABLE_HIGH = "not-applicable-high"
    APPLICABLE_MEDIUM = "applicable-medium"
    APPLICABLE_LOW = "applicable-low"


VERDICT_ORDER = (
    VerdictClass.APPLICABLE_HIGH,
    VerdictClass.APPLICABLE_MEDIUM,
    VerdictClass.APPLICABLE_LOW,
    VerdictClass.NOT_APPLICABLE_HIGH,
)


@dataclass(frozen=True)
class MatchedRef:
    """A file reference together with the witnessed paths backing it."""

    ref: FileRef
    witnessed: tuple[str, ...]
    via: str  # "path" | "basename" | "header-directory"


@dataclass(frozen=True)
class Verdict:
    classification: VerdictClass
    matched_refs: tuple[MatchedRef, ...] = ()


def classify(record: CveRecord, witnesses: WitnessSet) -> Verdict:
    """Verdict for one version-matched record, in priority order."""
    path_hits = [
        MatchedRef(ref, (ref.normalized,), "path")
        for ref in record.file_refs
        if ref.kind is RefKind.FULL_PATH and ref.normalized in witnesses
    ]
    if path_hits:
        return Verdict(VerdictClass.APPLICABLE_HIGH, tuple(path_hits))
    if not record.file_refs:
        return Verdict(VerdictClass.APPLICABLE_LOW)
    medium_hits: list[MatchedRef] = []
    for ref in record.file_refs:
        candidates = witnesses.paths_for_basename(posixpath.basename(ref.normalized))
        if candidates:
            medium_hits.append(MatchedRef(ref, tuple(sorted(candidates)), "basename"))
        elif ref.kind is RefKind.FULL_PATH and ref.normalized.endswith(".h"):
            neighbours = witnesses.paths_in_directory(
                posixpath.dirname(ref.normalized)
            )
            if neighbours:
                medium_hits.append(
                    MatchedRef(ref, tuple(sorted(neighbours)), "header-directory")
                )
    if medium_hits:
        return Verdict(VerdictClass.APPLICABLE_MEDIUM, tuple(medium_hits))
    return Verdict(VerdictClass.NOT_APPLICABLE_HIGH)


@dataclass(frozen=True)
class CveVerdict:
    cve_id: str
    verdict: Verdict

    @property
    def filtered_out(self) -> bool:
        return self.verdict.classification is VerdictClass.NOT_APPLICABLE_HIGH


@dataclass
class AttributionContext:
    """Identity and provenance carried into a report."""

    firmware_id: str
    kernel_version: KernelVersion
    arch: ArchVerdict | None = None
    config_origin: str | None = None
    config_source_kind: str | None = None
    snapshot_date: str = ""
    snapshot_source: str = ""
    kernel_source_sha256: str = ""
    tool_version: str = ""


@dataclass
class AttributionReport:
    context: AttributionContext
    verdicts: list[CveVerdict]
    counts: dict[VerdictClass, int] = field(default_factory=dict)
    fractions: dict[VerdictClass, float] = field(default_factory=dict)

    @property
    def candidates(self) -> int:
        return len(self.verdicts)


def attribute(
    candidates: list[CveRecord],
    witnesses: WitnessSet,
    context: AttributionContext,
) -> AttributionReport:
    """One verdict per candidate, plus per-class summary statistics."""
    ordered = sorted(candidates, key=CveRecord.sort_key)
    verdicts = [CveVerdict(r.id, classify(r, witnesses)) for r in ordered]
    counts = {cls: 0 for cls in VERDICT_ORDER}
    for v in verdicts:
        counts[v.verdict.classification] += 1
    total = len(verdicts)
    fractions = {
        cls: (counts[cls] / total if total else 0.0) for cls in VERDICT_ORDER
    }
    return AttributionReport(context, verdicts, counts, fractions)


@dataclass
class CorpusSummary:
    reports: int
    per_report_fractions: list[dict[VerdictClass, float]]
    median_fractions: dict[VerdictClass, float]


def _lower_median(values: list[float]) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def summarize_corpus(reports: list[AttributionReport]) -> CorpusSummary:
    """Lower-median per-class fractions across attribution reports."""
    if not reports:
        raise ValueError("corpus summary needs at least one report")
    per_report = [dict(r.fractions) for r in reports]
    medians = {
        cls: _lower_median([f[cls] for f in per_report]) for cls in VERDICT_ORDER
    }
    return CorpusSummary(len(reports), per_report, medians)


# --- report serialization ------------------------------------------------------


def report_to_dict(report: AttributionReport) -> dict:
    ctx = report.context
    arch = None
    if ctx.arch is not None and ctx.arch.resolved is not None:
        arch = {
            "family": ctx.arch.resolved.family,
            "bits": ctx.arch.resolved.bits,
            "endianness": ctx.arch.resolved.endianness,
        }
    return {
        "schema": "kcve-report/1",
        "firmware": ctx.firmware_id,
        "kernel_version": ctx.kernel_version.render(),
        "architecture": arch,
        "config": {
            "origin": ctx.config_origin,
            "source_kind": ctx.config_source_kind,
        },
        "provenance": {
            "tool_version": ctx.tool_version,
            "nvd_snapshot_date": ctx.snapshot_date,
            "nvd_source": ctx.snapshot_source,
            "kernel_source_sha256": ctx.kernel_source_sha256,
        },
        "candidates": report.candidates,
        "summary": {
            "counts": {cls.value: report.counts[cls] for cls in VERDICT_ORDER},
            "fractions": {cls.value: report.fractions[cls] for cls in VERDICT_ORDER},
        },
        "verdicts": [
            {
                "cve": v.cve_id,
                "verdict": v.verdict.classification.value,
                "filtered_out": v.filtered_out,
                "matched": [
                    {
                        "reference": m.ref.raw,
                        "kind": m.ref.kind.value,
                        "via": m.via,
                        "witnessed": list(m.witnessed),
                    }
                    for m in v.verdict.matched_refs
                ],
            }
            for v in report.verdicts
        ],
    }


def render_report_json(report: AttributionReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def render_report_csv(report: AttributionReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["cve", "verdict", "filtered_out", "via", "references", "witnessed"])
    for v in report.verdicts:
        refs = " ".join(m.ref.raw for m in v.verdict.matched_refs)
        witnessed = " ".join(p for m in v.verdict.matched_refs for p in m.witnessed)
        via = " ".join(sorted({m.via for m in v.verdict.matched_refs}))
        writer.writerow(
            [
                v.cve_id,
                v.verdict.classification.value,
                str(v.filtered_out).lower(),
                via,
                refs,
                witnessed,
            ]
        )
    return buffer.getvalue()


def write_report(
    report: AttributionReport, path: str | Path, fmt: str = "canonical"
) -> None:
    text = render_report_json(report) if fmt == "canonical" else render_report_csv(report)
    Path(path).write_text(text, encoding="utf-8")


def summary_to_dict(summary: CorpusSummary) -> dict:
    return {
        "schema": "kcve-corpus-summary/1",
        "reports": summary.reports,
        "median_fractions": {
            cls.value: summary.median_fractions[cls] for cls in VERDICT_ORDER
        },
        "per_report_fractions": [
            {cls.value: fractions[cls] for cls in VERDICT_ORDER}
            for fractions in summary.per_report_fractions
        ],
    }
