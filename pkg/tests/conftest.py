import os

import hypothesis
import numpy as np
import pytest

from app.protocols import KMaj, KNeighbRand, RandKMaj

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(autouse=True)
def lab_environment(tmp_path, monkeypatch):
    """Keep logs and outputs of every test inside its own temporary directory."""
    for name in list(os.environ):
        if name.startswith("CONSENSUS_LAB_"):
            monkeypatch.delenv(name)
    monkeypatch.setenv("CONSENSUS_LAB_BASE_DIR", str(tmp_path))
    monkeypatch.setenv("CONSENSUS_LAB_THREADS", "1")
    return tmp_path


@pytest.fixture
def kmaj3():
    return KMaj(3)


@pytest.fixture(params=["kmaj", "rand_kmaj", "k_neighb_rand"])
def builtin_protocol(request):
    return {
        "kmaj": KMaj(3),
        "rand_kmaj": RandKMaj(((3, 0.5), (5, 0.5))),
        "k_neighb_rand": KNeighbRand(5, ((2, 0.25), (3, 0.5), (4, 0.25))),
    }[request.param]
