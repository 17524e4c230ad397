import dataclasses

import pytest

from diagcap.core import DiagramKind
from diagcap.export import BuildConfig, build_all
from diagcap.synth import GenConfig, generate


def make_diagrams(n, kind=None, base=None, **overrides):
    """``n`` diagrams from consecutive seeds; alternates kinds unless ``kind`` is given."""
    base = base or GenConfig()
    out = []
    for i in range(n):
        k = kind or (DiagramKind.FLOWCHART if i % 2 == 0 else DiagramKind.SEQUENCE)
        cfg = dataclasses.replace(base, seed=i, kind=k, **overrides)
        out.append(generate(cfg, f"t{i:04d}"))
    return out


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = build_all(BuildConfig(), root)
    return root / manifest.corpus_id


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
