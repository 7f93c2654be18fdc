"""Shared fixtures: one synthesized source model and one finished conversion.

The whole directory is skipped when the converter package is not
installed, so the rest of the repository's suite runs without it.
"""

import pytest

pytest.importorskip("bsbconvert", reason="converter package is not installed")

from bsbconvert import ConversionManifest, convert, synthesize_toy_source  # noqa: E402

REFERENCE_SENTENCES = (
    "kedi süt içiyor",
    "küçük köpek bahçede koşuyor",
    "bu kitap çok eski",
)


@pytest.fixture(scope="session")
def source_dir(tmp_path_factory):
    return synthesize_toy_source(tmp_path_factory.mktemp("src") / "toy", seed=7)


@pytest.fixture(scope="session")
def conversion(source_dir, tmp_path_factory):
    """(manifest, result) for a default-policy conversion of the toy source."""
    out = tmp_path_factory.mktemp("converted")
    manifest = ConversionManifest(
        source=str(source_dir),
        out_checkpoint=str(out / "model.ckpt"),
        out_vocab=str(out / "vocab.txt"),
        reference_sentences=REFERENCE_SENTENCES,
    )
    return manifest, convert(manifest)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from secondary_report import LINES
    if LINES:
        terminalreporter.section("converter criteria")
        for line in LINES:
            terminalreporter.write_line(line)
