"""Shared builders for the test suite."""

import pytest

from rvtag import emulator
from rvtag.pipeline import build_image
from rvtag.tagplan import make_config


def build(source, config, tagged=True, **kwargs):
    return build_image(source, config, tagged=tagged, **kwargs)


def run(image, mode="compat", max_insns=1_000_000):
    return emulator.run(image, mode=mode, max_insns=max_insns)


@pytest.fixture
def lui_n3():
    return make_config(carrier="lui", coverage=3)


@pytest.fixture
def cfi_n3():
    return make_config(carrier="lui", coverage=3, policy="cfi")
