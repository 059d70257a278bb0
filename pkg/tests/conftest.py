"""Shared fixtures: schedules, priors, and operator inputs built once."""

import numpy as np
import pytest

from nsrestore.formats import write_mask
from nsrestore.gmm import image_pattern_prior, make_prior
from nsrestore.rng import RngStream
from nsrestore.schedule import build_schedule


@pytest.fixture(scope="session")
def sched1000():
    return build_schedule(1000)


@pytest.fixture(scope="session")
def rgb16_prior():
    return image_pattern_prior((3, 16, 16), 8, 0.05, seed=11)


@pytest.fixture(scope="session")
def gray16_prior():
    return image_pattern_prior((1, 16, 16), 6, 0.05, seed=13)


@pytest.fixture(scope="session")
def tiny_gauss_prior():
    rng = RngStream(7)
    return make_prior([1.0], rng.gaussian((1, 4)).reshape(1, 4), [0.3])


@pytest.fixture(scope="session")
def mask16_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("masks") / "m16.pgm"
    keep = RngStream(21).uniform(256).reshape(16, 16) > 0.35
    write_mask(path, keep)
    return str(path)


@pytest.fixture(scope="session")
def mask4_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("masks") / "m4.pgm"
    keep = RngStream(22).uniform(16).reshape(4, 4) > 0.3
    write_mask(path, keep)
    return str(path)


def max_abs(x) -> float:
    return float(np.abs(np.asarray(x)).max())
