import json
import random

import pytest

from kcve.attribution import (
    AttributionContext,
    VerdictClass,
    attribute,
    classify,
    render_report_csv,
    render_report_json,
    report_to_dict,
    summarize_corpus,
)
from kcve.build_witness import WitnessSet
from kcve.cve_store import CveRecord, VersionConstraint
from kcve.versions import KernelVersion

V = KernelVersion.parse
ANY_RANGE = [VersionConstraint(start=V("4.9.0"), end=V("4.9.71"))]


def record(cve_id: str, description: str) -> CveRecord:
    return CveRecord.build(cve_id, description, ANY_RANGE)


def witness(*paths: str) -> WitnessSet:
    return WitnessSet.from_paths(paths)


CONTEXT = AttributionContext(
    firmware_id="router-fw",
    kernel_version=V("4.9.60"),
    snapshot_date="2022-08-30",
    tool_version="test",
)


class TestClassify:
    def test_unwitnessed_full_path_filtered_out(self):
        # false-positive elimination: BPF compiled out of this build
        rec = record("CVE-2017-17863", "overflow in kernel/bpf/verifier.c here")
        verdict = classify(rec, witness("init/main.c", "net/socket.c"))
        assert verdict.classification is VerdictClass.NOT_APPLICABLE_HIGH
        assert verdict.matched_refs == ()

    def test_witnessed_full_path_is_high(self):
        rec = record("CVE-2017-17863", "overflow in kernel/bpf/verifier.c here")
        verdict = classify(rec, witness("kernel/bpf/verifier.c", "init/main.c"))
        assert verdict.classification is VerdictClass.APPLICABLE_HIGH
        assert verdict.matched_refs[0].witnessed == ("kernel/bpf/verifier.c",)
        assert verdict.matched_refs[0].via == "path"

    def test_no_refs_is_low(self):
        rec = record("CVE-2019-1000", "The Linux kernel allows DoS via packets.")
        verdict = classify(rec, witness("init/main.c"))
        assert verdict.classification is VerdictClass.APPLICABLE_LOW

    def test_file_only_with_duplicate_basenames_is_medium(self):
        rec = record("CVE-2018-5000", "a leak in verifier.c in the Linux kernel")
        witnesses = witness(
            "kernel/bpf/verifier.c", "drivers/gpu/drm/verifier.c", "mm/mmap.c"
        )
        verdict = classify(rec, witnesses)
        assert verdict.classification is VerdictClass.APPLICABLE_MEDIUM
        assert verdict.matched_refs[0].witnessed == (
            "drivers/gpu/drm/verifier.c",
            "kernel/bpf/verifier.c",
        )
        assert verdict.matched_refs[0].via == "basename"

    def test_mixed_refs_prefer_medium_over_filtering(self):
        rec = record(
            "CVE-2018-5001",
            "bug in kernel/bpf/syscall.c and also in mmap.c in the Linux kernel",
        )
        verdict = classify(rec, witness("mm/mmap.c", "init/main.c"))
        assert verdict.classification is VerdictClass.APPLICABLE_MEDIUM

    def test_full_path_basename_elsewhere_is_medium(self):
        # full path unwitnessed, but same basename compiled elsewhere
        rec = record("CVE-2018-5002", "bug in net/ipv4/output.c in the Linux kernel")
        verdict = classify(rec, witness("net/ipv6/output.c"))
        assert verdict.classification is VerdictClass.APPLICABLE_MEDIUM

    def test_header_with_colocated_sources_is_medium(self):
        rec = record("CVE-2018-5003", "bug in include/net/tcp.h in the Linux kernel")
        verdict = classify(rec, witness("include/net/seg6.c"))
        assert verdict.classification is VerdictClass.APPLICABLE_MEDIUM
        assert verdict.matched_refs[0].via == "header-directory"

    def test_header_without_colocated_sources_filtered(self):
        rec = record("CVE-2018-5004", "bug in include/net/tcp.h in the Linux kernel")
        verdict = classify(rec, witness("net/ipv4/tcp_input.c"))
        assert verdict.classification is VerdictClass.NOT_APPLICABLE_HIGH

    def test_one_witnessed_path_suffices_for_high(self):
        rec = record(
            "CVE-2018-5005",
            "bug in kernel/bpf/verifier.c and drivers/net/tun.c in the Linux kernel",
        )
        verdict = classify(rec, witness("drivers/net/tun.c"))
        assert verdict.classification is VerdictClass.APPLICABLE_HIGH

    def test_priority_high_beats_medium(self):
        rec = record(
            "CVE-2018-5006",
            "bug in mm/mmap.c and in mempolicy.c in the Linux kernel",
        )
        verdict = classify(rec, witness("mm/mmap.c", "mm/mempolicy.c"))
        assert verdict.classification is VerdictClass.APPLICABLE_HIGH


def independent_class(rec: CveRecord, witnesses: WitnessSet) -> VerdictClass:
    """Re-derivation of the taxonomy from its definitions, used as the
    exactly-one-class oracle."""
    full_paths = [r for r in rec.file_refs if "/" in r.raw]
    if any(r.normalized in witnesses.files for r in full_paths):
        return VerdictClass.APPLICABLE_HIGH
    if not rec.file_refs:
        return VerdictClass.APPLICABLE_LOW
    basenames = {r.normalized.rsplit("/", 1)[-1] for r in rec.file_refs}
    if basenames & set(witnesses.basenames):
        return VerdictClass.APPLICABLE_MEDIUM
    header_dirs = {
        r.normalized.rsplit("/", 1)[0]
        for r in full_paths
        if r.normalized.endswith(".h") and "/" in r.normalized
    }
    witnessed_dirs = {p.rsplit("/", 1)[0] for p in witnesses.files if "/" in p}
    if header_dirs & witnessed_dirs:
        return VerdictClass.APPLICABLE_MEDIUM
    return VerdictClass.NOT_APPLICABLE_HIGH


PATH_POOL = [
    "kernel/bpf/verifier.c", "kernel/bpf/syscall.c", "mm/mmap.c", "mm/shmem.c",
    "net/ipv4/tcp_input.c", "net/core/dev.c", "drivers/net/tun.c",
    "drivers/usb/core/hub.c", "fs/ext4/inode.c", "sound/core/timer.c",
    "include/net/tcp.h", "include/linux/skbuff.h", "arch/x86/entry/entry_64.S",
]


def random_case(rng: random.Random):
    refs = []
    for _ in range(rng.randint(0, 3)):
        path = rng.choice(PATH_POOL)
        refs.append(path if rng.random() < 0.7 else path.rsplit("/", 1)[-1])
    description = "A flaw involving " + " and ".join(refs) + "." if refs else "A flaw."
    rec = CveRecord.build(f"CVE-2020-{rng.randint(1000, 99999)}", description, ANY_RANGE)
    witnessed = {
        p for p in PATH_POOL if not p.endswith(".h") and rng.random() < 0.4
    }
    extra = {f"lib/gen{i}.c" for i in range(rng.randint(0, 3))}
    return rec, WitnessSet.from_paths(witnessed | extra)


class TestTaxonomyProperties:
    def test_exactly_one_class_and_monotonicity(self):
        applicable = {
            VerdictClass.APPLICABLE_HIGH,
            VerdictClass.APPLICABLE_MEDIUM,
            VerdictClass.APPLICABLE_LOW,
        }
        rng = random.Random(20220830)
        for _ in range(2000):
            rec, witnesses = random_case(rng)
            verdict = classify(rec, witnesses)
            assert verdict.classification is independent_class(rec, witnesses)
            grown = WitnessSet.from_paths(
                set(witnesses.files)
                | {rng.choice(PATH_POOL).replace(".h", ".c")}
            )
            regrade = classify(rec, grown)
            if verdict.classification in applicable:
                assert regrade.classification is not VerdictClass.NOT_APPLICABLE_HIGH


class TestAttribute:
    def test_three_candidates_consistent_counts(self):
        candidates = [
            record("CVE-2017-17863", "overflow in kernel/bpf/verifier.c"),
            record("CVE-2018-1111", "The Linux kernel allows DoS."),
            record("CVE-2019-2222", "leak in timer.c in the Linux kernel"),
        ]
        witnesses = witness("sound/core/timer.c", "init/main.c")
        report = attribute(candidates, witnesses, CONTEXT)
        assert report.candidates == 3
        assert sum(report.counts.values()) == 3
        assert report.counts[VerdictClass.NOT_APPLICABLE_HIGH] == 1
        assert report.counts[VerdictClass.APPLICABLE_LOW] == 1
        assert report.counts[VerdictClass.APPLICABLE_MEDIUM] == 1
        assert abs(sum(report.fractions.values()) - 1.0) < 1e-12

    def test_zero_candidates(self):
        report = attribute([], witness("init/main.c"), CONTEXT)
        assert report.candidates == 0
        assert all(count == 0 for count in report.counts.values())
        assert all(fraction == 0.0 for fraction in report.fractions.values())

    def test_ten_candidates_all_classes(self):
        witnesses = witness("kernel/bpf/verifier.c", "mm/mmap.c", "init/main.c")
        candidates = (
            [record(f"CVE-2016-{1000 + i}", "bug in kernel/bpf/verifier.c") for i in range(4)]
            + [record(f"CVE-2017-{1000 + i}", "bug in mmap.c in the kernel") for i in range(3)]
            + [record(f"CVE-2018-{1000 + i}", "a kernel flaw") for i in range(2)]
            + [record("CVE-2019-1000", "bug in drivers/net/tun.c")]
        )
        report = attribute(candidates, witnesses, CONTEXT)
        assert report.counts[VerdictClass.APPLICABLE_HIGH] == 4
        assert report.counts[VerdictClass.APPLICABLE_MEDIUM] == 3
        assert report.counts[VerdictClass.APPLICABLE_LOW] == 2
        assert report.counts[VerdictClass.NOT_APPLICABLE_HIGH] == 1

    def test_output_ordered_by_cve_id(self):
        candidates = [
            record("CVE-2019-99999", "x"),
            record("CVE-2017-17863", "y"),
            record("CVE-2019-1234", "z"),
        ]
        report = attribute(candidates, witness("init/main.c"), CONTEXT)
        assert [v.cve_id for v in report.verdicts] == [
            "CVE-2017-17863",
            "CVE-2019-1234",
            "CVE-2019-99999",
        ]

    def test_filtered_out_flags_only_not_applicable(self):
        candidates = [
            record("CVE-2017-17863", "overflow in kernel/bpf/verifier.c"),
            record("CVE-2018-1111", "no refs here"),
        ]
        report = attribute(candidates, witness("init/main.c"), CONTEXT)
        flags = {v.cve_id: v.filtered_out for v in report.verdicts}
        assert flags == {"CVE-2017-17863": True, "CVE-2018-1111": False}

    def test_baseline_recoverable_from_classes(self):
        # filtering only annotates; the union of the classes is the input
        candidates = [record(f"CVE-2015-{2000 + i}", "a kernel flaw") for i in range(7)]
        report = attribute(candidates, witness("init/main.c"), CONTEXT)
        assert sum(report.counts.values()) == len(candidates)
        assert {v.cve_id for v in report.verdicts} == {r.id for r in candidates}


class TestSummarizeCorpus:
    def make_report(self, not_applicable: int, high: int, low: int) -> object:
        candidates = (
            [record(f"CVE-2016-{1000 + i}", "bug in kernel/bpf/verifier.c") for i in range(high)]
            + [record(f"CVE-2017-{1000 + i}", "flaw in drivers/net/tun.c") for i in range(not_applicable)]
            + [record(f"CVE-2018-{1000 + i}", "a kernel flaw") for i in range(low)]
        )
        return attribute(candidates, witness("kernel/bpf/verifier.c"), CONTEXT)

    def test_single_report_medians_equal_fractions(self):
        report = self.make_report(2, 1, 1)
        summary = summarize_corpus([report])
        assert summary.median_fractions == report.fractions

    def test_median_of_three(self):
        reports = [self.make_report(6, 3, 1), self.make_report(68, 22, 10),
                   self.make_report(7, 2, 1)]
        fractions = sorted(
            r.fractions[VerdictClass.NOT_APPLICABLE_HIGH] for r in reports
        )
        summary = summarize_corpus(reports)
        assert summary.median_fractions[VerdictClass.NOT_APPLICABLE_HIGH] == fractions[1]

    def test_even_count_takes_lower_median(self):
        reports = [self.make_report(1, 1, 0), self.make_report(3, 1, 0)]
        values = sorted(
            r.fractions[VerdictClass.NOT_APPLICABLE_HIGH] for r in reports
        )
        summary = summarize_corpus(reports)
        assert summary.median_fractions[VerdictClass.NOT_APPLICABLE_HIGH] == values[0]

    def test_empty_corpus_is_error(self):
        with pytest.raises(ValueError):
            summarize_corpus([])


class TestReportRendering:
    def test_json_is_deterministic_and_loads(self):
        report = attribute(
            [record("CVE-2017-17863", "overflow in kernel/bpf/verifier.c")],
            witness("kernel/bpf/verifier.c"),
            CONTEXT,
        )
        first = render_report_json(report)
        second = render_report_json(report)
        assert first == second
        payload = json.loads(first)
        assert payload["schema"] == "kcve-report/1"
        assert payload["summary"]["counts"]["applicable-high"] == 1
        assert payload["verdicts"][0]["cve"] == "CVE-2017-17863"

    def test_counts_sum_matches_candidates(self):
        report = attribute(
            [record("CVE-2017-17863", "overflow in kernel/bpf/verifier.c"),
             record("CVE-2018-1111", "no refs")],
            witness("init/main.c"),
            CONTEXT,
        )
        payload = report_to_dict(report)
        assert sum(payload["summary"]["counts"].values()) == payload["candidates"]

    def test_csv_export(self):
        report = attribute(
            [record("CVE-2017-17863", "overflow in kernel/bpf/verifier.c")],
            witness("kernel/bpf/verifier.c"),
            CONTEXT,
        )
        text = render_report_csv(report)
        lines = text.strip().splitlines()
        assert lines[0].startswith("cve,verdict")
        assert lines[1].startswith("CVE-2017-17863,applicable-high,false,path")
