import numpy as np
import pytest

import voxtrain as vt
from voxtrain.synthetic import generate


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and "::test_criterion" in nodeid:
                lines.append((nodeid.split("::")[-1], "PASS" if status == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    """Small shared synthetic dataset (12^3 volumes, 24 patients)."""
    root = tmp_path_factory.mktemp("synthetic")
    generate(root, n=24, shape=(12, 12, 12), seed=7)
    return root


@pytest.fixture(scope="session")
def synthetic_cfg(synthetic_root):
    return vt.load_config(synthetic_root / "config.yaml")


@pytest.fixture(scope="session")
def synthetic_manifest(synthetic_root, synthetic_cfg):
    return vt.load_manifest(synthetic_cfg["data.csv_path"],
                            synthetic_cfg["data.data_root"], synthetic_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def random_prediction_table(rng, n, with_ties=False):
    """(preds, labels) pair for metric oracle checks."""
    preds = rng.random(n)
    if with_ties:
        preds = np.round(preds, 1)
    labels = (rng.random(n) < 0.5).astype(float)
    return preds, labels
