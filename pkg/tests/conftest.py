import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ssvepnet.dataio import SubjectSpec, SynthConfig, synth_dataset

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def random_spd(rng, n=7, spread=1.0):
    a = rng.standard_normal((n, n))
    q, _ = np.linalg.qr(a)
    w = np.exp(spread * rng.standard_normal(n))
    return (q * w) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SynthConfig(subjects=(SubjectSpec("S01", 5),), line_noise_amp=0.5, pink_noise_amp=0.5,
                      alpha_burst_amp=0.5, seed=7)
    return synth_dataset(cfg)
