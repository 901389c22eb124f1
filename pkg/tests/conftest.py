import os
import random

import pytest

from eads.hashing import KeyPair


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture(scope="session")
def keypair():
    return KeyPair.from_seed(7)


@pytest.fixture
def random_entries(rng):
    def make(n, lo=16, hi=48):
        return [rng.randbytes(rng.randint(lo, hi)) for _ in range(n)]

    return make


@pytest.fixture
def entries_l():
    return [f"l{i}".encode() for i in range(8)]
