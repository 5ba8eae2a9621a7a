import re

import numpy as np
import pytest
from hypothesis import settings

from grtrack.config import Config, EncoderConfig
from grtrack.model import TrackerNet

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def tiny_encoder(**kw) -> EncoderConfig:
    """A very small model for gradient checks: 4 template and 4 search tokens."""
    base = dict(depth=3, dim=8, heads=2, patch_size_px=4, template_size_px=8, search_size_px=8,
                relevance_layers=[1, 2, 3], keep_ratios=[0.9, 0.8, 0.7], mlp_ratio=2, ranking_hidden=[4, 3],
                filter_blocks=1, head_channels=[4, 3])
    base.update(kw)
    cfg = EncoderConfig(**base)
    cfg.validate()
    return cfg


@pytest.fixture
def desk_cfg() -> Config:
    return Config.desk()


@pytest.fixture(scope="session")
def desk_model() -> TrackerNet:
    return TrackerNet(EncoderConfig.desk(), seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# -- acceptance verdict lines ------------------------------------------------------

_VERDICTS: dict[int, str] = {}
_OUTCOMES: dict[int, str] = {}


def _criterion_number(name: str) -> int | None:
    m = re.match(r"test_criterion_(\d+)_", name)
    return int(m.group(1)) if m else None


@pytest.fixture
def verdict():
    """Record the measured detail for one acceptance criterion."""
    def record(number: int, detail: str) -> None:
        _VERDICTS[number] = detail
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    number = _criterion_number(item.name)
    if number is not None and (report.when == "call" or report.failed):
        _OUTCOMES[number] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        terminalreporter.write_line(f"criterion {number:2d}: {_OUTCOMES[number]}  {_VERDICTS.get(number, '')}")
