"""End-to-end pipeline: scan firmware, reconstruct the build, filter CVEs.

Subcommands:

* ``scan``      — stage one only: kernel versions, configurations, and
                  architecture evidence for one or more firmware trees.
* ``attribute`` — full two-stage attribution producing one report per
                  detected kernel, plus a corpus summary for batches.
* ``stats``     — applicability statistics: stage-one success fractions
                  over a finished run and the file-reference partition
                  of an NVD snapshot.

Per-firmware failures are isolated; a bad sample never aborts a batch.
Exit status is 0 when everything succeeded or was skipped with a
recorded reason, and 1 on any hard failure.
"""

from __future__ import annotations

import argparse
import gzip
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, arch_detect, build_witness, ikconfig, kernel_scan
from .arch_detect import ArchVerdict
from .attribution import (
    AttributionContext,
    attribute,
    render_report_csv,
    render_report_json,
    summarize_corpus,
    summary_to_dict,
)
from .build_witness import WitnessSet
from .cve_store import (
    NvdSnapshot,
    RefKind,
    ingest_nvd_feed,
    load_snapshot,
    save_snapshot,
    version_filter,
)
from .ikconfig import CandidateKind, KernelConfig
from .kernel_scan import FirmwareInventory
from .versions import KernelVersion

logger = logging.getLogger(__name__)

ENV_NVD_DUMP = "KCVE_NVD_DUMP"
ENV_CACHE_DIR = "KCVE_CACHE_DIR"

SKIP_NO_VERSION = "no kernel version"
SKIP_NO_ARCH = "no architecture"
SKIP_NO_CONFIG = "no kernel configuration"

S1_STAGES = ("extraction", "kernel_version", "architecture", "kernel_config")


@dataclass
class StageOutcome:
    status: str  # "succeeded" | "skipped" | "failed"
    detail: str = ""

    @classmethod
    def ok(cls) -> StageOutcome:
        return cls("succeeded")

    @classmethod
    def skipped(cls, reason: str) -> StageOutcome:
        return cls("skipped", reason)

    @classmethod
    def failed(cls, error: str) -> StageOutcome:
        return cls("failed", error)


@dataclass
class FirmwareOutcome:
    input_path: str
    stages: dict[str, StageOutcome] = field(default_factory=dict)
    reports: list[str] = field(default_factory=list)

    @property
    def hard_failure(self) -> bool:
        return any(s.status == "failed" for s in self.stages.values())


@dataclass
class PipelineRun:
    firmware: list[FirmwareOutcome] = field(default_factory=list)
    summary_path: str | None = None

    @property
    def exit_code(self) -> int:
        return 1 if any(fw.hard_failure for fw in self.firmware) else 0

    def to_dict(self) -> dict:
        return {
            "schema": "kcve-run/1",
            "firmware": [
                {
                    "input": fw.input_path,
                    "stages": {
                        name: {"status": s.status, "detail": s.detail}
                        for name, s in fw.stages.items()
                    },
                    "reports": fw.reports,
                }
                for fw in self.firmware
            ],
            "summary": self.summary_path,
        }


def run_from_dict(payload: dict) -> PipelineRun:
    run = PipelineRun()
    for fw in payload.get("firmware", []):
        outcome = FirmwareOutcome(fw["input"])
        for name, s in fw.get("stages", {}).items():
            outcome.stages[name] = StageOutcome(s["status"], s.get("detail", ""))
        outcome.reports = list(fw.get("reports", []))
        run.firmware.append(outcome)
    run.summary_path = payload.get("summary")
    return run


@dataclass
class PipelineOptions:
    nvd_dump: str | None = None
    cache_dir: str = ".kcve-cache"
    out_dir: str = "kcve-reports"
    offline: bool = False
    workers: int | None = None
    report_format: str = "canonical"  # "canonical" | "tabular"
    build_log: str | None = None
    witness_list: str | None = None
    min_directives: int = ikconfig.DEFAULT_MIN_DIRECTIVES
    max_file_size: int = kernel_scan.DEFAULT_MAX_FILE_SIZE


# --- stage one ---------------------------------------------------------------


@dataclass
class StageOneResult:
    inventory: FirmwareInventory
    configs: list[KernelConfig]
    arch: ArchVerdict


def analyze_tree(root: Path, options: PipelineOptions) -> StageOneResult:
    """Single pass over a firmware tree running all stage-one measures."""
    hits = []
    mimes: dict[str, str] = {}
    warnings: list[str] = []
    configs: list[KernelConfig] = []
    guesses = []
    for path in kernel_scan.iter_regular_files(root):
        rel = path.name if root.is_file() else path.relative_to(root).as_posix()
        data, warning = kernel_scan.read_file_bounded(path, options.max_file_size)
        if data is None:
            warnings.append(warning or rel)
            continue
        media_type = kernel_scan.mime.sniff(data, rel)
        mimes[rel] = media_type
        hits.extend(kernel_scan.scan_file_for_kernel_version(data, media_type, rel))

        kind = ikconfig.classify_candidate(data, media_type)
        config = None
        if kind is CandidateKind.PLAIN_TEXT:
            config = ikconfig.extract_plaintext_config(
                data.decode("utf-8", errors="replace"), options.min_directives
            )
        elif kind is CandidateKind.KERNEL_BINARY:
            try:
                config = ikconfig.find_ikconfig(data)
            except ikconfig.IkconfigExtractionError as exc:
                warnings.append(f"{rel}: {exc}")
                logger.warning("%s: %s", rel, exc)
        if config is not None:
            configs.append(config.with_origin(rel))

        guess = arch_detect.detect_from_elf(data)
        if guess is not None:
            guesses.append(guess)
        guess = arch_detect.detect_from_device_tree(data)
        if guess is not None:
            guesses.append(guess)
        guess = arch_detect.detect_from_mime(data, media_type)
        if guess is not None:
            guesses.append(guess)
    for config in configs:
        guess = arch_detect.detect_from_config(config)
        if guess is not None:
            guesses.append(guess)
    inventory = FirmwareInventory.from_hits(str(root), hits, mimes, warnings)
    return StageOneResult(inventory, configs, arch_detect.consolidate(guesses))


def _pair_kernels(
    result: StageOneResult,
) -> list[tuple[KernelVersion, KernelConfig]]:
    """Pair detected versions with configurations.

    A config extracted from the same file as a version hit is preferred;
    otherwise every (version, config) combination is attributed, with a
    warning.
    """
    pairs: list[tuple[KernelVersion, KernelConfig]] = []
    for version in result.inventory.distinct_versions:
        hit_paths = {
            h.path for h in result.inventory.hits if h.version == version
        }
        same_file = [c for c in result.configs if c.origin_path in hit_paths]
        if same_file:
            pairs.extend((version, config) for config in same_file)
        else:
            if len(result.configs) > 1:
                logger.warning(
                    "%d configs and no same-file pairing for %s; attributing all",
                    len(result.configs),
                    version,
                )
            pairs.extend((version, config) for config in result.configs)
    return pairs


# --- stage two ---------------------------------------------------------------


def _config_digest(config: KernelConfig) -> str:
    return hashlib.sha256(
        ikconfig.serialize_config(config).encode()
    ).hexdigest()[:16]


def _obtain_witnesses(
    version: KernelVersion,
    config: KernelConfig,
    arch: ArchVerdict,
    options: PipelineOptions,
) -> tuple[WitnessSet, str]:
    """(witness set, kernel source checksum) for one kernel unit."""
    if options.witness_list:
        return WitnessSet.load(options.witness_list), ""
    if options.build_log:
        log = Path(options.build_log).read_text(encoding="utf-8", errors="replace")
        return build_witness.parse_build_log(log), ""
    cache = Path(options.cache_dir)
    witness_dir = cache / "witness"
    witness_dir.mkdir(parents=True, exist_ok=True)
    key = f"{version.major}.{version.minor}.{version.patch}-{_config_digest(config)}"
    cached = witness_dir / f"{key}.txt"
    tree = build_witness.fetch_kernel_source(
        version, cache, offline=options.offline
    )
    if cached.exists():
        return WitnessSet.load(cached), tree.sha256
    # one dry build at a time per shared source tree
    with build_witness.version_lock(cache, version):
        if cached.exists():
            return WitnessSet.load(cached), tree.sha256
        log = build_witness.run_dry_build(tree, config, arch)
        witnesses = build_witness.parse_build_log(log)
        witnesses.save(cached)
    return witnesses, tree.sha256


def _process_firmware(
    input_path: Path,
    snapshot: NvdSnapshot,
    options: PipelineOptions,
) -> tuple[FirmwareOutcome, list]:
    outcome = FirmwareOutcome(str(input_path))
    reports: list = []
    try:
        result = analyze_tree(input_path, options)
    except OSError as exc:
        outcome.stages["extraction"] = StageOutcome.failed(str(exc))
        return outcome, reports
    outcome.stages["extraction"] = StageOutcome.ok()

    if not result.inventory.distinct_versions:
        outcome.stages["kernel_version"] = StageOutcome.skipped(SKIP_NO_VERSION)
        return outcome, reports
    outcome.stages["kernel_version"] = StageOutcome.ok()

    if result.arch.resolved is None:
        outcome.stages["architecture"] = StageOutcome.skipped(SKIP_NO_ARCH)
        return outcome, reports
    outcome.stages["architecture"] = StageOutcome.ok()

    if not result.configs:
        outcome.stages["kernel_config"] = StageOutcome.skipped(SKIP_NO_CONFIG)
        return outcome, reports
    outcome.stages["kernel_config"] = StageOutcome.ok()

    out_dir = Path(options.out_dir) / input_path.name
    out_dir.mkdir(parents=True, exist_ok=True)
    extension = "json" if options.report_format == "canonical" else "csv"
    try:
        for version, config in _pair_kernels(result):
            witnesses, source_sha = _obtain_witnesses(
                version, config, result.arch, options
            )
            candidates = version_filter(snapshot, version)
            context = AttributionContext(
                firmware_id=input_path.name,
                kernel_version=version,
                arch=result.arch,
                config_origin=config.origin_path,
                config_source_kind=config.source_kind.value,
                snapshot_date=snapshot.snapshot_date,
                snapshot_source=snapshot.source,
                kernel_source_sha256=source_sha,
                tool_version=__version__,
            )
            report = attribute(candidates, witnesses, context)
            name = f"{version.render()}-{_config_digest(config)[:8]}.{extension}"
            report_path = out_dir / name
            text = (
                render_report_json(report)
                if options.report_format == "canonical"
                else render_report_csv(report)
            )
            report_path.write_text(text, encoding="utf-8")
            outcome.reports.append(str(report_path))
            reports.append(report)
        outcome.stages["attribution"] = StageOutcome.ok()
    except Exception as exc:  # isolate firmware failures from the batch
        logger.error("%s: attribution failed: %s", input_path, exc)
        outcome.stages["attribution"] = StageOutcome.failed(str(exc))
    return outcome, reports


def _load_snapshot_cached(dump_path: str, cache_dir: str) -> NvdSnapshot:
    """Ingest the dump, keeping a parsed snapshot in the cache keyed by
    the dump's content digest."""
    data = Path(dump_path).read_bytes()
    digest = hashlib.sha256(data).hexdigest()[:16]
    cached = Path(cache_dir) / "snapshots" / f"{digest}.json"
    if cached.exists():
        return load_snapshot(cached)
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    snapshot = ingest_nvd_feed(json.loads(data), origin=dump_path)
    cached.parent.mkdir(parents=True, exist_ok=True)
    save_snapshot(snapshot, cached)
    return snapshot


def run_pipeline(inputs: list[str | Path], options: PipelineOptions) -> PipelineRun:
    """Attribute every firmware input; failures stay per-firmware."""
    run = PipelineRun()
    if not inputs:
        return run
    if options.nvd_dump is None:
        raise ValueError("an NVD dump is required (flag or environment)")
    snapshot = _load_snapshot_cached(options.nvd_dump, options.cache_dir)
    workers = options.workers or os.cpu_count() or 1
    paths = [Path(p) for p in inputs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            pool.map(lambda p: _process_firmware(p, snapshot, options), paths)
        )
    run.firmware = [outcome for outcome, _ in results]
    reports = [report for _, fw_reports in results for report in fw_reports]

    if len(run.firmware) >= 2 and reports:
        summary = summarize_corpus(reports)
        summary_path = Path(options.out_dir) / "corpus_summary.json"
        summary_path.write_text(
            json.dumps(summary_to_dict(summary), indent=2, sort_keys=True) + "\n"
        )
        run.summary_path = str(summary_path)
    return run


# --- statistics ----------------------------------------------------------------


@dataclass
class ApplicabilityStats:
    s1_counts: dict[str, int]
    s1_fractions: dict[str, float]
    firmware_total: int
    s2_counts: dict[str, int]
    s2_fractions: dict[str, float]
    cve_total: int


def _s2_class(record) -> str:
    if any(r.kind is RefKind.FULL_PATH for r in record.file_refs):
        return "full-path"
    if record.file_refs:
        return "file-only"
    return "no-reference"


def applicability_stats(
    run: PipelineRun | None, snapshot: NvdSnapshot | None
) -> ApplicabilityStats:
    """Stage-one success fractions and the S2 file-reference partition."""
    s1_counts = {stage: 0 for stage in S1_STAGES}
    total = 0
    if run is not None:
        total = len(run.firmware)
        for fw in run.firmware:
            for stage in S1_STAGES:
                if fw.stages.get(stage, StageOutcome("missing")).status == "succeeded":
                    s1_counts[stage] += 1
    s1_fractions = {
        stage: (s1_counts[stage] / total if total else 0.0) for stage in S1_STAGES
    }
    s2_counts = {"full-path": 0, "file-only": 0, "no-reference": 0}
    cve_total = 0
    if snapshot is not None:
        cve_total = len(snapshot.records)
        for record in snapshot.records:
            s2_counts[_s2_class(record)] += 1
    s2_fractions = {
        key: (s2_counts[key] / cve_total if cve_total else 0.0) for key in s2_counts
    }
    return ApplicabilityStats(
        s1_counts, s1_fractions, total, s2_counts, s2_fractions, cve_total
    )


# --- CLI ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="increase log detail"
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kcve",
        description="Build-aware Linux kernel CVE attribution for binary firmware",
    )
    parser.add_argument("--version", action="version", version=f"kcve {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    scan = sub.add_parser("scan", help="stage one: inventory a firmware tree")
    scan.add_argument("inputs", nargs="+", help="firmware directories or files")
    scan.add_argument("--out", help="write JSON result here instead of stdout")
    scan.add_argument(
        "--min-directives",
        type=int,
        default=ikconfig.DEFAULT_MIN_DIRECTIVES,
        help="plain-text config acceptance threshold",
    )
    _add_common(scan)

    attr = sub.add_parser("attribute", help="full two-stage CVE attribution")
    attr.add_argument("inputs", nargs="*", help="firmware directories or files")
    attr.add_argument(
        "--nvd-dump",
        default=os.environ.get(ENV_NVD_DUMP),
        help=f"NVD JSON dump path (or ${ENV_NVD_DUMP})",
    )
    attr.add_argument(
        "--cache-dir",
        default=os.environ.get(ENV_CACHE_DIR, ".kcve-cache"),
        help=f"kernel source / witness cache (or ${ENV_CACHE_DIR})",
    )
    attr.add_argument("--out-dir", default="kcve-reports", help="report directory")
    attr.add_argument(
        "--offline", action="store_true", help="forbid network; caches must be warm"
    )
    attr.add_argument("--workers", type=int, help="firmware-level parallelism")
    attr.add_argument(
        "--report-format",
        choices=("canonical", "tabular"),
        default="canonical",
    )
    attr.add_argument(
        "--build-log", help="use this dry-build log instead of building"
    )
    attr.add_argument(
        "--witness-list", help="use this witnessed-path list instead of building"
    )
    attr.add_argument(
        "--min-directives", type=int, default=ikconfig.DEFAULT_MIN_DIRECTIVES
    )
    _add_common(attr)

    stats = sub.add_parser("stats", help="applicability statistics")
    stats.add_argument(
        "--nvd-dump",
        default=os.environ.get(ENV_NVD_DUMP),
        help="NVD JSON dump for the S2 file-reference partition",
    )
    stats.add_argument("--run", help="run.json manifest for S1 stage fractions")
    stats.add_argument("--json", action="store_true", help="machine-readable output")
    _add_common(stats)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def _scan_result_dict(root: Path, result: StageOneResult) -> dict:
    return {
        "root": str(root),
        "versions": [v.render() for v in result.inventory.distinct_versions],
        "hits": [
            {
                "path": h.path,
                "offset": h.offset,
                "version": h.version.render(),
                "raw": h.raw,
                "encoding": h.encoding,
            }
            for h in result.inventory.hits
        ],
        "configs": [
            {
                "origin": c.origin_path,
                "source_kind": c.source_kind.value,
                "options": len(c.options),
            }
            for c in result.configs
        ],
        "architecture": {
            "resolved": (
                {
                    "family": result.arch.resolved.family,
                    "bits": result.arch.resolved.bits,
                    "endianness": result.arch.resolved.endianness,
                }
                if result.arch.resolved
                else None
            ),
            "guesses": [
                {
                    "family": g.family,
                    "bits": g.bits,
                    "endianness": g.endianness,
                    "evidence": g.evidence.value,
                    "detail": g.detail,
                }
                for g in result.arch.guesses
            ],
        },
        "warnings": result.inventory.warnings,
    }


def _cmd_scan(args: argparse.Namespace) -> int:
    options = PipelineOptions(min_directives=args.min_directives)
    results = {}
    status = 0
    for input_path in args.inputs:
        root = Path(input_path)
        try:
            result = analyze_tree(root, options)
        except OSError as exc:
            logger.error("%s: %s", input_path, exc)
            status = 1
            continue
        results[input_path] = _scan_result_dict(root, result)
    text = json.dumps(results, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return status


def _cmd_attribute(args: argparse.Namespace) -> int:
    options = PipelineOptions(
        nvd_dump=args.nvd_dump,
        cache_dir=args.cache_dir,
        out_dir=args.out_dir,
        offline=args.offline,
        workers=args.workers,
        report_format=args.report_format,
        build_log=args.build_log,
        witness_list=args.witness_list,
        min_directives=args.min_directives,
    )
    if not args.inputs:
        logger.info("no inputs, nothing to do")
        return 0
    if options.nvd_dump is None:
        logger.error("--nvd-dump or $%s is required", ENV_NVD_DUMP)
        return 2
    run = run_pipeline(args.inputs, options)
    manifest = Path(options.out_dir) / "run.json"
    manifest.parent.mkdir(parents=True, exist_ok=True)
    manifest.write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")
    for fw in run.firmware:
        for name, stage in fw.stages.items():
            if stage.status != "succeeded":
                logger.warning(
                    "%s: %s %s (%s)", fw.input_path, name, stage.status, stage.detail
                )
    return run.exit_code


def _cmd_stats(args: argparse.Namespace) -> int:
    run = None
    snapshot = None
    if args.run:
        run = run_from_dict(json.loads(Path(args.run).read_text()))
    if args.nvd_dump:
        snapshot = ingest_nvd_feed(args.nvd_dump)
    if run is None and snapshot is None:
        logger.error("stats needs --run and/or --nvd-dump")
        return 2
    stats = applicability_stats(run, snapshot)
    if args.json:
        payload = {
            "s1": {
                "firmware_total": stats.firmware_total,
                "counts": stats.s1_counts,
                "fractions": stats.s1_fractions,
            },
            "s2": {
                "cve_total": stats.cve_total,
                "counts": stats.s2_counts,
                "fractions": stats.s2_fractions,
            },
        }
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return 0
    if run is not None:
        sys.stdout.write(f"S1 stage success over {stats.firmware_total} firmware:\n")
        for stage in S1_STAGES:
            sys.stdout.write(
                f"  {stage:<16} {stats.s1_counts[stage]:>5}  "
                f"{stats.s1_fractions[stage]:.4f}\n"
            )
    if snapshot is not None:
        sys.stdout.write(
            f"S2 file-reference partition over {stats.cve_total} kernel CVEs:\n"
        )
        for key in ("full-path", "file-only", "no-reference"):
            sys.stdout.write(
                f"  {key:<16} {stats.s2_counts[key]:>5}  "
                f"{stats.s2_fractions[key]:.4f}\n"
            )
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    if args.command == "scan":
        return _cmd_scan(args)
    if args.command == "attribute":
        return _cmd_attribute(args)
    return _cmd_stats(args)


if __name__ == "__main__":
    sys.exit(main())
