import sys

import numpy as np
import pytest
from hypothesis import settings

from prop3d.energy import ClassModel
from prop3d.geometry import CameraCalib

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

CAR = (3.9, 1.56, 1.6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def calib():
    return CameraCalib.kitti_default()


@pytest.fixture
def car_model():
    return ClassModel("car", (-1.0, -1.0, -1.0, 0.0), [CAR], 0.78, 0.05, 0.0, 0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = list(getattr(mod, "RESULTS", []))
    if not lines:
        return
    if not any(ln.startswith("criterion 10") for ln in lines):
        lines.append("criterion 10: SKIP  KITTI training data not found (set PROP3D_KITTI_ROOT)")
    terminalreporter.section("acceptance criteria")
    for ln in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(ln)
