from __future__ import annotations

import random

import pytest

from quorumseal.ceremony import run_ceremony
from quorumseal.sharing import ThresholdConfig
from quorumseal.vss import TOY_GROUP, generate_group


@pytest.fixture(scope="session")
def production_group():
    # One full-size group for the whole run; generation is the slow part.
    return generate_group(random.Random("test-production-group"), p_bits=2048, q_bits=256)


@pytest.fixture(scope="session")
def production_deployment(production_group):
    return run_ceremony(
        ThresholdConfig(2, 3),
        random.Random("test-production-ceremony"),
        params=production_group,
    )


@pytest.fixture()
def toy_deployment():
    return run_ceremony(
        ThresholdConfig(2, 3), random.Random("test-toy-ceremony"), params=TOY_GROUP
    )
