import numpy as np
import pytest

from distiller.data import TaskSpec, make_splits


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_splits():
    return make_splits(TaskSpec(seq_len=8), 120, 0, 60, seed=3)


@pytest.fixture(scope="session")
def tiny_tag_splits():
    return make_splits(TaskSpec(task_kind="tagging", seq_len=8), 80, 0, 40, seed=4)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_splits):
    from distiller.nn import EncoderSpec
    from distiller.pipeline import train_teacher
    spec = EncoderSpec(n_layers=2, h_units=8, h_mid=16, n_heads=2, vocab_size=64, n_classes=3)
    return train_teacher(tiny_splits["train"], spec, epochs=2, seed=0)


@pytest.fixture(scope="session")
def student_spec():
    from distiller.nn import EncoderSpec
    return EncoderSpec(n_layers=1, h_units=4, h_mid=8, n_heads=2, vocab_size=64, n_classes=3)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number n")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], "PASS" if rep.passed else "FAIL",
                              props.get("title", ""), props.get("detail", "")))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n, status, title, detail in sorted(lines):
            terminalreporter.write_line(f"[{status}] criterion {n:>2}: {title} | {detail}")
