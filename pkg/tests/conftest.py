import numpy as np
import pytest

from nwpco.diffusion import ModelSpec, extract_pairs, simulate_ensemble


@pytest.fixture(scope="session")
def ou_model():
    return ModelSpec.default("ou")


@pytest.fixture(scope="session")
def ou_pairs_1000(ou_model):
    ens = simulate_ensemble(ou_model, 1000, 1000, 0.02, seed=7)
    return extract_pairs(ens, 0.0, 10.0, 1.0)


def random_pairs(n_copies, n_time, seed, t=1.0):
    """Tiny synthetic pair sample; values need not come from a diffusion."""
    from nwpco.diffusion import PairSample

    rng = np.random.default_rng(seed)
    return PairSample(rng.normal(size=(n_copies, n_time)), rng.normal(size=(n_copies, n_time)),
                      0.0, 1.0, t, 0.25)


_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion_") or report.when == "teardown":
        return
    if report.when == "setup" and report.passed:
        return
    k = int(name.split("_")[2])
    entry = _CRITERIA.setdefault(k, {"ok": True, "details": []})
    entry["ok"] &= report.passed
    entry["details"].extend(v for key, v in report.user_properties if key == "detail")
    if not report.passed:
        entry["details"].append(f"{name.split('[')[-1].rstrip(']')}: FAILED"
                                if "[" in name else f"{name}: FAILED")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        e = _CRITERIA[k]
        tr.write_line(f"criterion {k}: {'PASS' if e['ok'] else 'FAIL'}")
        for d in e["details"]:
            tr.write_line(f"    {d}")
