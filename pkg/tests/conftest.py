import math

import numpy as np
import pytest
from hypothesis import settings

from dtcmr.core import AcquisitionProtocol
from dtcmr.phantom import NoiseProfile, PhantomConfig, generate_phantom, simulate_dwi

settings.register_profile("dtcmr", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("dtcmr")


@pytest.fixture
def small_protocol():
    return AcquisitionProtocol(image_size=(64, 64))


@pytest.fixture
def small_phantom():
    return generate_phantom(PhantomConfig(image_size=(64, 64)))


@pytest.fixture
def noiseless_stack(small_phantom, small_protocol):
    truth, _, _ = small_phantom
    return simulate_dwi(truth, small_protocol, NoiseProfile(snr=math.inf))


def random_spd(rng, n=None, scale=1e-3):
    """Random symmetric positive definite matrices with spread eigenvalues."""
    shape = () if n is None else (n,)
    a = rng.normal(size=shape + (3, 3))
    q, _ = np.linalg.qr(a)
    lam = rng.uniform(0.1, 3.0, size=shape + (3,)) * scale
    return np.einsum("...ij,...j,...kj->...ik", q, lam, q)


SMALL_COHORT = {"phantom": {"image_size": [64, 64]}, "protocol": {"image_size": [64, 64]}}


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    """Ten 64x64 noisy subjects on disk plus their preprocessed data."""
    from dtcmr.harness.cohort import CohortConfig, generate_cohort, load_cohort, preprocess_cohort

    path = tmp_path_factory.mktemp("cohort") / "c10"
    generate_cohort(CohortConfig.from_dict(SMALL_COHORT), path, 10, seed=3)
    return path, preprocess_cohort(load_cohort(path))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
