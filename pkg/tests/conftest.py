"""Shared fixtures: tiny hand-made sequences and small simulated ones."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings
from scipy import ndimage

from eventvel.dataio import LanderState, RangeReading, Sequence, Split, write_sequence
from eventvel.events import EventStream
from eventvel.geometry import EulerAngles
from eventvel.simulator import DescentProfile, SceneConfig, SimulationConfig, generate_sequence

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


def texture(seed: int, size: int = 128, sigma: float = 2.0) -> np.ndarray:
    """Smooth random image in [0, 1]."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return (img - img.min()) / (img.max() - img.min())


def tiny_sequence(split: Split = Split.TRAIN, events=((0, 1, 2, 1), (500_000, 3, 4, -1))) -> Sequence:
    """Two events, two states one second apart, two range readings."""
    t, x, y, p = (np.array(c, dtype=np.int64) for c in zip(*events)) if events else ([], [], [], [])
    stream = EventStream(8, 6, t, x, y, p)
    vel = [np.array([1.0, -2.0, -3.0]), np.array([1.5, -2.0, -2.5])]
    if split is Split.TEST:
        vel = [np.full(3, np.nan)] * 2
    states = [
        LanderState(0.0, np.array([0.0, 0.0, 50.0]) if split is Split.TRAIN else np.full(3, np.nan), vel[0], EulerAngles(0.01, -0.02, 0.3), np.zeros(3)),
        LanderState(1.0, np.array([1.2, -2.0, 47.2]) if split is Split.TRAIN else np.full(3, np.nan), vel[1], EulerAngles(0.01, -0.02, 0.35), np.array([0.0, 0.0, 0.05])),
    ]
    ranges = [RangeReading(0.0, 50.0), RangeReading(1.0, 47.2)]
    return Sequence("tiny", stream, states, ranges, split)


@pytest.fixture
def tiny_dir(tmp_path) -> Path:
    d = tmp_path / "tiny"
    write_sequence(tiny_sequence(), d)
    return d


def small_sim(seed: int = 7, duration: float = 0.5, size: int = 96, velocity=(1.0, -0.5, -2.0), split=Split.TRAIN):
    """Short constant-velocity nadir descent on a small sensor."""
    prof = DescentProfile(
        initial_pos=(0.0, 0.0, 8.0),
        velocity_points=((0.0, *velocity),),
        attitude_points=((0.0, 0.0, 0.0, 0.2),),
        duration=duration,
    )
    cfg = SimulationConfig(prof, SceneConfig(texture_seed=seed), size, size, None, f"small{seed}")
    return cfg, *generate_sequence(cfg, split)


@pytest.fixture(scope="session")
def small_sim_seq():
    """(config, sequence) of a short simulated descent, shared across tests."""
    cfg, seq, _ = small_sim()
    return cfg, seq


@pytest.fixture(scope="session")
def small_sim_dir(tmp_path_factory, small_sim_seq):
    d = tmp_path_factory.mktemp("sim") / "small"
    write_sequence(small_sim_seq[1], d)
    return d


@pytest.fixture(scope="session")
def static_profile_json(tmp_path_factory) -> Path:
    p = tmp_path_factory.mktemp("profiles") / "static.json"
    doc = {
        "sequence_id": "static",
        "sensor_width": 64,
        "sensor_height": 64,
        "initial_pos": [0.0, 0.0, 20.0],
        "velocity_points": [[0.0, 0.0, 0.0, 0.0]],
        "attitude_points": [[0.0, 0.0, 0.0, 0.0]],
        "duration": 0.5,
    }
    p.write_text(json.dumps(doc))
    return p


# acceptance reporting ---------------------------------------------------------

_VERDICTS = pytest.StashKey[dict]()


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    """Fold each phase of an acceptance test into its criterion's verdict."""
    report = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None and (report.when == "call" or not report.passed):
        number, text = mark.args
        verdicts = item.config.stash.setdefault(_VERDICTS, {})
        ok = report.passed and verdicts.get(number, (True, text))[0]
        verdicts[number] = (ok, text)
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = config.stash.get(_VERDICTS, {})
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        ok, text = verdicts[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}")
