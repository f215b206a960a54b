import pytest

from kbca.config import ModelConfig
from kbca.data import Dataset
from kbca.synthetic import SyntheticSpec, gen_synthetic

TINY_SPEC = dict(n_items=120, dim=8, n_layers=2, vocab_size=40, emotional_per_class=4, words=(4, 10), seed=2)


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    return gen_synthetic(SyntheticSpec(**TINY_SPEC), tmp_path_factory.mktemp("tiny"))


@pytest.fixture(scope="session")
def tiny_ds(tiny_root):
    return Dataset.load(tiny_root)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(d=8, heads=2, max_epochs=2, batch_size=16)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): acceptance criterion covered by the test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    n, name = mark.args
    detail = getattr(item, "criterion_detail", "")
    prev = item.config._criteria.get(n, (name, True, []))
    item.config._criteria[n] = (name, prev[1] and rep.passed, prev[2] + ([detail] if detail else []))


def pytest_terminal_summary(terminalreporter, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        name, ok, details = crit[n]
        extra = f"  ({'; '.join(details)})" if details else ""
        terminalreporter.write_line(f"criterion {n:2d} {name}: {'PASS' if ok else 'FAIL'}{extra}")
