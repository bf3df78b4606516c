import gzip
import logging
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import (
    IKCFG_ED,
    IKCFG_ST,
    build_elf,
    embed_config,
    random_option_map,
    render_option_map,
)
from kcve.ikconfig import (
    CandidateKind,
    ConfigValue,
    IkconfigExtractionError,
    SourceKind,
    Tristate,
    ValueKind,
    classify_candidate,
    extract_plaintext_config,
    find_ikconfig,
    parse_config,
    serialize_config,
)

DEBIAN_STYLE_HEADER = """\
#
# Automatically generated file; DO NOT EDIT.
# Linux/arm64 4.9.60 Kernel Configuration
#
"""


class TestClassifyCandidate:
    def test_text_goes_plaintext(self):
        assert classify_candidate(b"CONFIG_X=y", "text/plain") is CandidateKind.PLAIN_TEXT

    def test_elf_module_goes_kernel_binary(self):
        blob = build_elf(183, bits=64, e_type=1)  # relocatable, .ko-shaped
        assert (
            classify_candidate(blob, "application/x-object")
            is CandidateKind.KERNEL_BINARY
        )

    def test_compressed_image_goes_kernel_binary(self):
        assert (
            classify_candidate(gzip.compress(b"x"), "application/gzip")
            is CandidateKind.KERNEL_BINARY
        )

    def test_jpeg_terminates(self):
        assert classify_candidate(b"\xff\xd8\xff", "image/jpeg") is CandidateKind.OTHER


class TestParseConfig:
    def test_tristate_yes(self):
        config = parse_config("CONFIG_BPF=y")
        assert config.options == {"CONFIG_BPF": ConfigValue.yes()}

    def test_not_set(self):
        config = parse_config("# CONFIG_BPF is not set")
        assert config.options == {"CONFIG_BPF": ConfigValue.not_set()}

    def test_string_quotes_stripped(self):
        config = parse_config('CONFIG_CMDLINE="console=ttyS0"')
        value = config.options["CONFIG_CMDLINE"]
        assert value.kind is ValueKind.STRING
        assert value.value == "console=ttyS0"

    def test_module_int_hex(self):
        config = parse_config("CONFIG_A=m\nCONFIG_B=42\nCONFIG_C=0x1A\n")
        assert config.options["CONFIG_A"].value is Tristate.M
        assert config.options["CONFIG_B"] == ConfigValue.integer(42)
        assert config.options["CONFIG_C"] == ConfigValue.hexadecimal(26)

    def test_duplicate_overwrites_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            config = parse_config("CONFIG_X=y\nCONFIG_X=m\n")
        assert config.options["CONFIG_X"].value is Tristate.M
        assert any("duplicate" in r.message for r in caplog.records)

    def test_junk_line_skipped_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            config = parse_config("CONFIG_X=y\nthis is not a directive\n")
        assert list(config.options) == ["CONFIG_X"]
        assert any("unparseable" in r.message for r in caplog.records)

    def test_plain_comments_ignored(self):
        config = parse_config("#\n# General setup\n#\nCONFIG_Y=y\n")
        assert list(config.options) == ["CONFIG_Y"]

    @settings(max_examples=50)
    @given(st.randoms(use_true_random=False))
    def test_serialize_reparse_identity(self, rng):
        options = random_option_map(rng, rng.randint(1, 40))
        parsed = parse_config(render_option_map(options))
        again = parse_config(serialize_config(parsed))
        assert again.options == parsed.options


class TestExtractPlaintext:
    def test_debian_style_config_accepted(self):
        body = "\n".join(f"CONFIG_OPT{i}=y" for i in range(10))
        config = extract_plaintext_config(DEBIAN_STYLE_HEADER + body)
        assert config is not None
        assert len(config.options) == 10
        assert config.source_kind is SourceKind.PLAINTEXT

    def test_empty_string_absent(self):
        assert extract_plaintext_config("") is None

    def test_threshold_of_fifty_synthetic_options(self):
        text = "\n".join(f"CONFIG_SYN{i}=y" for i in range(50))
        config = extract_plaintext_config(text)
        assert config is not None
        assert len(config.options) == 50

    def test_below_threshold_without_header_absent(self):
        text = "\n".join(f"CONFIG_SYN{i}=y" for i in range(49))
        assert extract_plaintext_config(text) is None

    def test_threshold_is_tunable(self):
        text = "CONFIG_ONE=y\nCONFIG_TWO=y\n"
        assert extract_plaintext_config(text, min_directives=2) is not None

    @given(st.integers(1, 30), st.integers(0, 30))
    def test_threshold_monotonicity(self, accepted_count, extra):
        # if a text is accepted, any superset of its directive lines is too
        base = [f"CONFIG_A{i}=y" for i in range(accepted_count)]
        text = "\n".join(base)
        threshold = accepted_count
        assert extract_plaintext_config(text, min_directives=threshold) is not None
        superset = "\n".join(base + [f"CONFIG_B{i}=m" for i in range(extra)])
        assert extract_plaintext_config(superset, min_directives=threshold) is not None


class TestFindIkconfig:
    CONFIG_TEXT = "CONFIG_BPF=y\nCONFIG_NET=y\n# CONFIG_PCI is not set\n"

    def test_inline_marker_roundtrip(self):
        blob = b"\x01preamble\x02" + embed_config(self.CONFIG_TEXT) + b"\x03tail\x04"
        config = find_ikconfig(blob)
        assert config is not None
        assert config.source_kind is SourceKind.INLINE_STRING
        assert config.options == parse_config(self.CONFIG_TEXT).options

    def test_no_marker_no_container_absent(self):
        assert find_ikconfig(b"\x00" * 256) is None

    def test_gzip_compressed_image_with_embedded_marker(self):
        image = b"vmlinux-ish" + embed_config(self.CONFIG_TEXT) + b"\x00rest"
        blob = b"BOOT" + gzip.compress(image) + b"\xff\xff"
        config = find_ikconfig(blob)
        assert config is not None
        assert config.source_kind is SourceKind.EMBEDDED_CONTAINER
        assert config.options == parse_config(self.CONFIG_TEXT).options

    def test_missing_end_marker_raises_naming_offset(self):
        blob = b"\x00" * 17 + IKCFG_ST + gzip.compress(b"CONFIG_A=y")
        with pytest.raises(IkconfigExtractionError, match="offset 17"):
            find_ikconfig(blob)

    def test_corrupt_container_continues_to_next(self, caplog):
        # a fake gzip header that fails, then a real container that works
        bad = b"\x1f\x8b\x08\xff garbage that is not a gzip stream"
        good = gzip.compress(b"padding" + embed_config(self.CONFIG_TEXT))
        with caplog.at_level(logging.WARNING):
            config = find_ikconfig(bad + good)
        assert config is not None
        assert config.options == parse_config(self.CONFIG_TEXT).options

    def test_marker_safety_payload_is_inter_marker_span(self):
        # bytes after the end marker would corrupt the stream if read
        payload = gzip.compress(self.CONFIG_TEXT.encode())
        blob = IKCFG_ST + payload + IKCFG_ED + payload[::-1] + IKCFG_ED
        config = find_ikconfig(blob)
        assert config is not None
        assert config.options == parse_config(self.CONFIG_TEXT).options

    def test_raw_text_payload(self):
        blob = IKCFG_ST + self.CONFIG_TEXT.encode() + IKCFG_ED
        config = find_ikconfig(blob)
        assert config is not None
        assert config.options == parse_config(self.CONFIG_TEXT).options

    def test_xz_payload(self):
        import lzma

        blob = IKCFG_ST + lzma.compress(self.CONFIG_TEXT.encode()) + IKCFG_ED
        config = find_ikconfig(blob)
        assert config is not None

    def test_bzip2_payload(self):
        import bz2

        blob = IKCFG_ST + bz2.compress(self.CONFIG_TEXT.encode()) + IKCFG_ED
        config = find_ikconfig(blob)
        assert config is not None

    def test_lzma_alone_payload(self):
        import lzma

        payload = lzma.compress(self.CONFIG_TEXT.encode(), format=lzma.FORMAT_ALONE)
        assert payload[0] == 0x5D
        config = find_ikconfig(IKCFG_ST + payload + IKCFG_ED)
        assert config is not None

    def test_roundtrip_randomized(self):
        rng = random.Random(1234)
        for _ in range(20):
            options = random_option_map(rng, rng.randint(1, 60))
            text = render_option_map(options)
            padding_a = bytes(rng.randrange(256) for _ in range(rng.randint(0, 300)))
            padding_b = bytes(rng.randrange(256) for _ in range(rng.randint(0, 300)))
            blob = padding_a + embed_config(text) + padding_b
            config = find_ikconfig(blob)
            assert config is not None
            assert config.options == parse_config(text).options
