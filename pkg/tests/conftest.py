"""
測試共用設定 - 路徑、slow 標記與常用夾具
"""
import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from services.metric_service import MetricService, MetricSpec, build_preset  # noqa: E402
from services.operator_service import OperatorService  # noqa: E402
from utils.numerics.grid import Grid1D  # noqa: E402
from utils.radial import profiles as prof  # noqa: E402

RUN_SLOW = os.getenv("WAVETAIL_RUN_SLOW") == "1"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance runs (set WAVETAIL_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set WAVETAIL_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def metric_service():
    return MetricService()


@pytest.fixture(scope="session")
def operator_service():
    return OperatorService()


@pytest.fixture(scope="session")
def flat_metric():
    return build_preset("flat")


@pytest.fixture(scope="session")
def k2_metric():
    return build_preset("family_k2")


@pytest.fixture(scope="session")
def k2_normalized(metric_service, k2_metric):
    return metric_service.normalize(k2_metric)


@pytest.fixture(scope="session")
def k2_coeffs(operator_service, k2_normalized):
    return operator_service.build_operator(k2_normalized)


@pytest.fixture(scope="session")
def shift_metric():
    """帶 f^{tr} = 0.02⟨r⟩^{-2}χ 的度規，P¹ 不為零"""
    f_tr = prof.bracket_power(-2.0, amplitude=0.02, cutoff_scale=4.0, name="f_tr")
    return MetricSpec(kappa=2, f_dual={"tr": f_tr}, name="shift_k2")


@pytest.fixture(scope="session")
def shift_coeffs(operator_service, metric_service, shift_metric):
    return operator_service.build_operator(metric_service.normalize(shift_metric))


@pytest.fixture(scope="session")
def flat_coeffs(operator_service, metric_service, flat_metric):
    return operator_service.build_operator(metric_service.normalize(flat_metric))


@pytest.fixture
def small_grid():
    return Grid1D(h=0.05, r_max=64.0, order=4)
