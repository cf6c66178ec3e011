"""Session corpora produced by the generator command-line tool.

The client is exercised purely against files; its only contact with the
generator is running the installed `viewrel` executable.
"""

import pytest

from support import run_cli


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Four scenes, four viewpoints each: quick to copy and corrupt."""
    root = tmp_path_factory.mktemp("small")
    run_cli("synth", "--out", root / "scenes", "--scenes", "4", "--seed", "21",
            "--instances", "7", "--pose-count", "6")
    run_cli("generate", "--scenes", root / "scenes", "--out", root / "dataset",
            "--viewpoints", "4")
    return root


@pytest.fixture(scope="session")
def big_corpus(tmp_path_factory):
    """Enough scenes and viewpoints for a five-digit sample count."""
    root = tmp_path_factory.mktemp("big")
    run_cli("synth", "--out", root / "scenes", "--scenes", "100", "--seed", "500",
            "--instances", "8", "--pose-count", "12")
    run_cli("generate", "--scenes", root / "scenes", "--out", root / "dataset",
            "--viewpoints", "12")
    return root
