#!/usr/bin/env python3
"""Offline walk-through of the whole attribution pipeline.

Builds a synthetic firmware image (version banner + embedded build
config), a three-record NVD dump, and a canned dry-build log, then runs
`kcve attribute` on them twice: once with BPF compiled out of the build
and once with it compiled in. Shows how the same version-matched CVE
flips between not-applicable-high and applicable-high.

Usage: python3 scripts/demo_pipeline.py [workdir]
"""

from __future__ import annotations

import gzip
import json
import sys
import tempfile
from pathlib import Path

from kcve.cli import main as kcve_main

CONFIG_TEXT = (
    "#\n# Automatically generated file; DO NOT EDIT.\n"
    "# Linux/mips 4.9.60 Kernel Configuration\n#\n"
    "CONFIG_MIPS=y\nCONFIG_CPU_BIG_ENDIAN=y\nCONFIG_NET=y\n"
    "# CONFIG_BPF is not set\n"
)

BASE_LOG = """\
make[1]: Entering directory 'linux-4.9.60'
  gcc -Wp,-MD -c -o init/main.o init/main.c
  gcc -Wp,-MD -c -o net/socket.o net/socket.c
  gcc -Wp,-MD -c -o sound/core/timer.o sound/core/timer.c
"""

NVD_RECORDS = [
    ("CVE-2017-17863",
     "kernel/bpf/verifier.c in the Linux kernel 4.9.x through 4.9.71 allows an "
     "invalid memory access via an integer overflow.",
     {"versionStartIncluding": "4.9", "versionEndIncluding": "4.9.71"}),
    ("CVE-2018-9999",
     "The Linux kernel before 5.0 allows denial of service.",
     {"versionEndExcluding": "5.0"}),
    ("CVE-2019-8888",
     "A leak in timer.c in the Linux kernel before 5.0 allows local users to "
     "read kernel memory.",
     {"versionEndExcluding": "5.0"}),
]


def write_nvd_dump(path: Path) -> None:
    vulnerabilities = []
    for cve_id, description, bounds in NVD_RECORDS:
        match = {
            "vulnerable": True,
            "criteria": "cpe:2.3:o:linux:linux_kernel:*:*:*:*:*:*:*:*",
            **bounds,
        }
        vulnerabilities.append(
            {
                "cve": {
                    "id": cve_id,
                    "published": "2018-01-01T00:00:00.000",
                    "lastModified": "2022-08-30T00:00:00.000",
                    "descriptions": [{"lang": "en", "value": description}],
                    "configurations": [
                        {"nodes": [{"operator": "OR", "negate": False,
                                    "cpeMatch": [match]}]}
                    ],
                }
            }
        )
    document = {
        "format": "NVD_CVE",
        "version": "2.0",
        "timestamp": "2022-08-30T12:00:00.000",
        "vulnerabilities": vulnerabilities,
    }
    path.write_bytes(gzip.compress(json.dumps(document).encode()))


def write_firmware(root: Path) -> None:
    root.mkdir(parents=True)
    image = bytearray(b"\x00bootloader padding\x00" * 8)
    image += b"Linux version 4.9.60 (builder@vendor) (gcc version 5.3.0) #1 SMP\x00"
    image += b"\x00" * 32
    image += b"IKCFG_ST" + gzip.compress(CONFIG_TEXT.encode()) + b"IKCFG_ED"
    image += b"\x00trailer"
    (root / "kernel.img").write_bytes(bytes(image))


def show_reports(out_dir: Path) -> None:
    for report_path in sorted(out_dir.glob("demo-router/*.json")):
        payload = json.loads(report_path.read_text())
        print(f"\nreport: {report_path}")
        print(f"  kernel {payload['kernel_version']}, "
              f"arch {payload['architecture']['family']}, "
              f"candidates {payload['candidates']}")
        for verdict in payload["verdicts"]:
            flag = "  [filtered]" if verdict["filtered_out"] else ""
            print(f"  {verdict['cve']}: {verdict['verdict']}{flag}")


def main() -> int:
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(
        tempfile.mkdtemp(prefix="kcve-demo-")
    )
    print(f"working in {workdir}")
    firmware = workdir / "demo-router"
    write_firmware(firmware)
    dump = workdir / "nvd.json.gz"
    write_nvd_dump(dump)

    for label, extra_line in [
        ("BPF disabled in the vendor build", ""),
        ("BPF enabled in the vendor build",
         "  gcc -Wp,-MD -c -o kernel/bpf/verifier.o kernel/bpf/verifier.c\n"),
    ]:
        print(f"\n=== {label} ===")
        log = workdir / "dry-build.log"
        log.write_text(BASE_LOG + extra_line)
        out_dir = workdir / ("out-" + label.split()[1])
        status = kcve_main(
            [
                "attribute", str(firmware),
                "--nvd-dump", str(dump),
                "--build-log", str(log),
                "--out-dir", str(out_dir),
                "--cache-dir", str(workdir / "cache"),
            ]
        )
        if status != 0:
            return status
        show_reports(out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
