#!/usr/bin/env python3
"""Generate the pinned NVD kernel-CVE snapshot fixture.

Produces tests/fixtures/nvd_kernel_snapshot.json.gz: a deterministic
NVD JSON (API schema 2.0) dump of synthetic Linux kernel CVE records
whose file-reference mix mirrors public kernel-CVE statistics
(roughly 60% full-path, 4.5% file-only, 35.7% no reference), plus a
batch of non-kernel records that ingestion must filter out.

Regeneration is idempotent: the RNG seed is fixed.
"""

from __future__ import annotations

import gzip
import json
import random
from pathlib import Path

SEED = 20220830
N_FULL_PATH = 359
N_FILE_ONLY = 27
N_NO_REF = 214
N_NON_KERNEL = 60

OUT = Path(__file__).resolve().parent.parent / "tests/fixtures/nvd_kernel_snapshot.json.gz"

PATHS = [
    "kernel/bpf/verifier.c", "kernel/bpf/syscall.c", "kernel/events/core.c",
    "kernel/fork.c", "kernel/signal.c", "kernel/ptrace.c", "kernel/futex.c",
    "kernel/sched/core.c", "kernel/time/posix-timers.c", "kernel/trace/trace.c",
    "mm/mmap.c", "mm/memory.c", "mm/mempolicy.c", "mm/shmem.c", "mm/slub.c",
    "mm/huge_memory.c", "fs/ext4/inode.c", "fs/ext4/super.c", "fs/ext4/extents.c",
    "fs/xfs/xfs_attr_leaf.c", "fs/btrfs/ioctl.c", "fs/btrfs/inode.c",
    "fs/nfs/nfs4proc.c", "fs/nfsd/nfs4state.c", "fs/ocfs2/dlm/dlmdomain.c",
    "fs/cifs/smb2ops.c", "fs/cifs/connect.c", "fs/ceph/mds_client.c",
    "fs/f2fs/data.c", "fs/proc/task_mmu.c", "fs/namespace.c", "fs/exec.c",
    "fs/aio.c", "fs/eventpoll.c", "fs/pipe.c", "fs/splice.c", "fs/udf/inode.c",
    "fs/hfsplus/bnode.c", "fs/jfs/jfs_dmap.c", "fs/isofs/inode.c",
    "net/ipv4/tcp_input.c", "net/ipv4/tcp_output.c", "net/ipv4/udp.c",
    "net/ipv4/raw.c", "net/ipv4/route.c", "net/ipv4/ip_sockglue.c",
    "net/ipv6/ip6_output.c", "net/ipv6/udp.c", "net/ipv6/raw.c",
    "net/core/dev.c", "net/core/skbuff.c", "net/core/sock.c", "net/socket.c",
    "net/netfilter/nf_tables_api.c", "net/netfilter/nf_conntrack_core.c",
    "net/packet/af_packet.c", "net/unix/af_unix.c", "net/sctp/sm_make_chunk.c",
    "net/sctp/socket.c", "net/dccp/proto.c", "net/tipc/socket.c",
    "net/rds/rdma.c", "net/bluetooth/l2cap_core.c", "net/bluetooth/hci_sock.c",
    "net/wireless/nl80211.c", "net/mac80211/rx.c", "net/key/af_key.c",
    "net/xfrm/xfrm_user.c", "drivers/net/tun.c", "drivers/net/macsec.c",
    "drivers/net/ppp/ppp_generic.c", "drivers/usb/core/hub.c",
    "drivers/usb/gadget/function/f_fs.c", "drivers/usb/serial/ch341.c",
    "drivers/usb/misc/iowarrior.c", "drivers/gpu/drm/drm_ioctl.c",
    "drivers/gpu/drm/i915/i915_gem.c", "drivers/input/evdev.c",
    "drivers/input/joystick/xpad.c", "drivers/hid/hid-core.c",
    "drivers/hid/usbhid/hiddev.c", "drivers/scsi/sg.c",
    "drivers/scsi/libsas/sas_expander.c", "drivers/block/loop.c",
    "drivers/block/floppy.c", "drivers/char/ipmi/ipmi_msghandler.c",
    "drivers/char/virtio_console.c", "drivers/media/usb/uvc/uvc_driver.c",
    "drivers/media/v4l2-core/v4l2-ioctl.c", "drivers/tty/n_tty.c",
    "drivers/tty/vt/keyboard.c", "drivers/vhost/vhost.c", "drivers/md/dm.c",
    "drivers/mmc/core/block.c", "drivers/staging/android/ashmem.c",
    "drivers/acpi/acpica/dsopcode.c", "sound/core/timer.c",
    "sound/core/seq/seq_queue.c", "sound/usb/mixer.c",
    "sound/pci/hda/hda_codec.c", "crypto/af_alg.c",
    "crypto/asymmetric_keys/public_key.c", "security/keys/keyring.c",
    "security/keys/key.c", "security/selinux/hooks.c", "arch/x86/kvm/vmx.c",
    "arch/x86/kvm/emulate.c", "arch/x86/entry/entry_64.S",
    "arch/arm64/kernel/ptrace.c", "arch/mips/kernel/ptrace.c",
    "virt/kvm/kvm_main.c", "ipc/shm.c", "ipc/msg.c", "block/blk-core.c",
    "include/linux/skbuff.h", "include/net/tcp.h", "include/linux/sched.h",
]

FILENAMES = [
    "sockfs.c", "garbage.c", "binder.c", "main.c", "inode.c", "file.c",
    "super.c", "namei.c", "socket.c", "output.c", "input.c", "queue.c",
    "core.c", "ioctl.c", "mmap.c", "timer.c", "ctl.c", "dev.c",
]

FUNCTIONS = [
    "snd_timer_user_read", "tcp_v4_rcv", "bpf_check", "ext4_fill_super",
    "do_mmap", "keyring_search_aux", "af_alg_sendmsg", "packet_set_ring",
    "sctp_process_param", "vmx_handle_exit", "hid_input_field",
    "usb_parse_configuration", "loop_set_status", "nft_flush_table",
    "xfrm_state_lookup", "dccp_rcv_state_process", "l2cap_config_req",
    "perf_event_open", "futex_requeue", "do_shmat", "load_elf_binary",
    "inet_csk_clone_lock", "assoc_array_insert_into_terminal_node",
    "mpi_powm", "blk_rq_map_user_iov", "vcpu_run", "uvc_parse_standard_control",
]

CRASHES = [
    "NULL pointer dereference and system crash", "memory corruption",
    "use-after-free", "out-of-bounds read", "out-of-bounds write",
    "infinite loop", "deadlock", "stack-based buffer overflow",
    "double free", "slab corruption",
]

VECTORS = [
    "a crafted application", "a crafted system call", "crafted ioctl calls",
    "a crafted filesystem image", "a large speed value", "crafted ELF binaries",
    "a crafted USB device", "vectors involving a bind system call",
    "a crafted sendmsg system call", "crafted keyctl commands",
    "a crafted netlink message", "an mmap system call with unusual arguments",
]

VERBS = [
    "validate user-supplied offsets", "consider that execution contexts differ",
    "restrict the address calculated by a certain rounding operation",
    "initialize a certain data structure", "check whether a socket is bound",
    "maintain a reference count", "ensure that a filesystem has a valid tree height",
]

IMPACTS = [
    "gain privileges", "cause a denial of service",
    "obtain sensitive information from kernel memory",
    "cause a denial of service or possibly have unspecified other impact",
    "escalate their privileges on the system",
]

PROTOCOLS = ["TCP", "UDP", "SCTP", "ICMP", "IPv6", "DCCP", "802.11"]

SUBSYSTEMS = [
    "netfilter", "KVM", "sound", "perf", "memory management", "Bluetooth",
    "USB gadget", "TIPC protocol", "SCSI generic", "io_uring", "key management",
    "Infrared Data Association", "video4linux",
]

TOPICS = [
    "races between mmap and munmap", "object reuse after free",
    "overlapping memory regions", "reference counting of file descriptors",
    "signal delivery during core dumps", "handling of fragmented packets",
    "queue teardown during device removal",
]


def random_version(rng: random.Random) -> str:
    major, maxminor = rng.choice([(2, 6), (3, 19), (4, 20), (5, 4)])
    minor = rng.randint(0, maxminor)
    if rng.random() < 0.25:
        return f"{major}.{minor}"
    return f"{major}.{minor}.{rng.randint(0, 180)}"


def constraint_fields(rng: random.Random) -> dict:
    """One cpeMatch worth of version applicability."""
    roll = rng.random()
    if roll < 0.45:
        return {"versionEndExcluding": random_version(rng)}
    if roll < 0.70:
        return {"versionEndIncluding": random_version(rng)}
    if roll < 0.90:
        end = random_version(rng)
        major = int(end.split(".")[0])
        return {
            "versionStartIncluding": f"{major}.{rng.randint(0, int(end.split('.')[1]))}",
            "versionEndIncluding": end,
        }
    return {}  # exact version in the criteria itself


def kernel_cpe_match(rng: random.Random) -> dict:
    fields = constraint_fields(rng)
    version = "*" if fields else random_version(rng)
    match = {
        "vulnerable": True,
        "criteria": f"cpe:2.3:o:linux:linux_kernel:{version}:*:*:*:*:*:*:*",
        "matchCriteriaId": f"{rng.getrandbits(32):08X}-FIXT",
    }
    match.update(fields)
    return match


def full_path_description(rng: random.Random) -> str:
    path = rng.choice(PATHS)
    if rng.random() < 0.03:
        path = rng.choice(["linux/", f"linux-{random_version(rng)}/"]) + path
    fn = rng.choice(FUNCTIONS)
    v = random_version(rng)
    templates = [
        f"The {fn} function in {path} in the Linux kernel before {v} allows "
        f"local users to cause a denial of service ({rng.choice(CRASHES)}) via "
        f"{rng.choice(VECTORS)}.",
        f"Race condition in the {fn} function in {path} in the Linux kernel "
        f"before {v} allows local users to gain privileges via {rng.choice(VECTORS)}.",
        f"{path} in the Linux kernel through {v} does not properly "
        f"{rng.choice(VERBS)}, which allows local users to {rng.choice(IMPACTS)} "
        f"via {rng.choice(VECTORS)}.",
        f"An issue was discovered in the Linux kernel before {v}. {path} has a "
        f"{rng.choice(CRASHES)} related to {rng.choice(TOPICS)}.",
        f"Integer overflow in {path} in the Linux kernel allows local users to "
        f"{rng.choice(IMPACTS)} via {rng.choice(VECTORS)}.",
        f"Memory leak in the {fn} function in {path} in the Linux kernel before "
        f"{v} allows attackers to cause a denial of service (memory consumption) "
        f"via {rng.choice(VECTORS)}.",
        f"The {fn} function in {path} and {rng.choice(PATHS)} in the Linux "
        f"kernel before {v} mishandles {rng.choice(TOPICS)}, leading to a "
        f"{rng.choice(CRASHES)}.",
        f"A flaw in the Linux kernel before {v} allows denial of service via "
        f"crafted requests to {path}.",
    ]
    return rng.choice(templates)


def file_only_description(rng: random.Random) -> str:
    name = rng.choice(FILENAMES)
    fn = rng.choice(FUNCTIONS)
    v = random_version(rng)
    templates = [
        f"A vulnerability was found in the Linux kernel in the {fn} function "
        f"in {name} that allows a local attacker to {rng.choice(IMPACTS)}.",
        f"Memory leak in {name} in the Linux kernel before {v} allows local "
        f"users to cause a denial of service (memory consumption) via "
        f"{rng.choice(VECTORS)}.",
        f"An out-of-bounds read in {name} in the Linux kernel through {v} "
        f"allows attackers to {rng.choice(IMPACTS)}.",
    ]
    return rng.choice(templates)


def no_ref_description(rng: random.Random) -> str:
    v = random_version(rng)
    templates = [
        f"The Linux kernel before {v} allows remote attackers to cause a denial "
        f"of service via a crafted {rng.choice(PROTOCOLS)} packet.",
        f"A use-after-free flaw was found in the Linux kernel's "
        f"{rng.choice(SUBSYSTEMS)} subsystem in how a user triggers "
        f"{rng.choice(TOPICS)}. This flaw allows a local user to crash or "
        f"escalate their privileges on the system.",
        f"An issue was discovered in the Linux kernel through {v}. A local "
        f"attacker can trigger {rng.choice(TOPICS)} leading to a kernel panic.",
        f"Improper input validation in the {rng.choice(SUBSYSTEMS)} subsystem "
        f"in the Linux kernel before {v} allows an authenticated user to "
        f"potentially enable escalation of privilege via local access.",
        f"The {rng.choice(SUBSYSTEMS)} implementation in the Linux kernel "
        f"before {v} does not properly restrict {rng.choice(TOPICS)}, which "
        f"allows local users to bypass intended access restrictions.",
    ]
    return rng.choice(templates)


def make_record(rng: random.Random, cve_id: str, description: str, kernel: bool) -> dict:
    year = int(cve_id.split("-")[1])
    month, day = rng.randint(1, 12), rng.randint(1, 28)
    published = f"{year}-{month:02d}-{day:02d}T{rng.randint(0, 23):02d}:{rng.randint(0, 59):02d}:00.000"
    if kernel:
        matches = [kernel_cpe_match(rng) for _ in range(rng.choice([1, 1, 1, 2]))]
    else:
        product = rng.choice(
            ["openssl:openssl", "busybox:busybox", "gnu:glibc", "dnsmasq:dnsmasq"]
        )
        matches = [
            {
                "vulnerable": True,
                "criteria": f"cpe:2.3:a:{product}:{random_version(rng)}:*:*:*:*:*:*:*",
                "matchCriteriaId": f"{rng.getrandbits(32):08X}-FIXT",
            }
        ]
    return {
        "cve": {
            "id": cve_id,
            "published": published,
            "lastModified": "2022-08-30T00:00:00.000",
            "descriptions": [
                {"lang": "en", "value": description},
                {"lang": "es", "value": "(traducción omitida)"},
            ],
            "configurations": [
                {"nodes": [{"operator": "OR", "negate": False, "cpeMatch": matches}]}
            ],
        }
    }


def main() -> None:
    rng = random.Random(SEED)
    ids = set()

    def fresh_id() -> str:
        while True:
            year = rng.randint(2005, 2022)
            seq = rng.randint(1000, 99999)
            cve_id = f"CVE-{year}-{seq}"
            if cve_id not in ids:
                ids.add(cve_id)
                return cve_id

    vulnerabilities = []
    worked_example = {
        "cve": {
            "id": "CVE-2017-17863",
            "published": "2017-12-27T17:08:00.000",
            "lastModified": "2022-08-30T00:00:00.000",
            "descriptions": [
                {
                    "lang": "en",
                    "value": (
                        "kernel/bpf/verifier.c in the Linux kernel 4.9.x through "
                        "4.9.71 mishandles states_equal comparisons between the "
                        "pointer data type and the UNKNOWN_VALUE data type, which "
                        "allows local users to obtain potentially sensitive address "
                        "information, aka a \"pointer leak\", and cause an invalid "
                        "memory access via an integer overflow."
                    ),
                }
            ],
            "configurations": [
                {
                    "nodes": [
                        {
                            "operator": "OR",
                            "negate": False,
                            "cpeMatch": [
                                {
                                    "vulnerable": True,
                                    "criteria": "cpe:2.3:o:linux:linux_kernel:*:*:*:*:*:*:*:*",
                                    "versionStartIncluding": "4.9",
                                    "versionEndIncluding": "4.9.71",
                                    "matchCriteriaId": "8B63C7F0-FIXT",
                                }
                            ],
                        }
                    ]
                }
            ],
        }
    }
    ids.add("CVE-2017-17863")
    vulnerabilities.append(worked_example)

    for _ in range(N_FULL_PATH - 1):  # the worked example is full-path too
        vulnerabilities.append(
            make_record(rng, fresh_id(), full_path_description(rng), kernel=True)
        )
    for _ in range(N_FILE_ONLY):
        vulnerabilities.append(
            make_record(rng, fresh_id(), file_only_description(rng), kernel=True)
        )
    for _ in range(N_NO_REF):
        vulnerabilities.append(
            make_record(rng, fresh_id(), no_ref_description(rng), kernel=True)
        )
    for _ in range(N_NON_KERNEL):
        vulnerabilities.append(
            make_record(rng, fresh_id(), no_ref_description(rng), kernel=False)
        )
    rng.shuffle(vulnerabilities)

    document = {
        "resultsPerPage": len(vulnerabilities),
        "startIndex": 0,
        "totalResults": len(vulnerabilities),
        "format": "NVD_CVE",
        "version": "2.0",
        "timestamp": "2022-08-30T12:00:00.000",
        "vulnerabilities": vulnerabilities,
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(document, indent=1).encode()
    OUT.write_bytes(gzip.compress(payload, mtime=0))
    kernel_total = N_FULL_PATH + N_FILE_ONLY + N_NO_REF
    print(f"wrote {OUT} ({len(vulnerabilities)} records, {kernel_total} kernel)")
    print(
        f"intended partition: full-path {N_FULL_PATH / kernel_total:.4f}, "
        f"file-only {N_FILE_ONLY / kernel_total:.4f}, "
        f"no-reference {N_NO_REF / kernel_total:.4f}"
    )


if __name__ == "__main__":
    main()
