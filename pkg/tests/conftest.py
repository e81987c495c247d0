import numpy as np
import pytest
import torch

from srl_handover.dataio import SynthConfig, synth_corpus
from srl_handover.kinematics import synthetic_skeleton

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def skeleton():
    return synthetic_skeleton()


@pytest.fixture(scope="session")
def small_corpus():
    """Eight short clips over four participant pairs."""
    return synth_corpus(SynthConfig(n_pairs=4, clips_per_pair=2), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def full_corpus():
    """Default synthetic corpus: ten pairs, 200 handover segments."""
    return synth_corpus(SynthConfig(), seed=0)


# --- acceptance reporting -------------------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, name = mark.args
    entry = _CRITERIA.setdefault(n, {"name": name, "ok": True, "details": []})
    entry["ok"] &= rep.passed
    entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]
    if rep.failed:
        entry["details"].append(f"{item.name} failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"criterion {n:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['name']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
