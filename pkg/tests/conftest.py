import pathlib

import numpy as np
import pytest

from lmmkit import build_spec, fit
from lmmkit.cli import ingest_csv

DATA_DIR = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def sleepstudy_path():
    return DATA_DIR / "sleepstudy.csv"


@pytest.fixture(scope="session")
def sleepstudy(sleepstudy_path):
    return ingest_csv(sleepstudy_path)


@pytest.fixture(scope="session")
def sleep_fit(sleepstudy):
    """REML fit of the random-slope model; shared by many tests."""
    return fit("Reaction ~ Days + (Days|Subject)", sleepstudy)


@pytest.fixture(scope="session")
def sleep_spec(sleepstudy):
    return build_spec("Reaction ~ Days + (Days|Subject)", sleepstudy)


def random_sparse_spd(rng, n, density=0.3):
    """Random sparse symmetric positive-semidefinite matrix (lower CSC)."""
    from lmmkit.sparse import from_dense

    mask = rng.random((n, n)) < density
    B = np.where(mask, rng.standard_normal((n, n)), 0.0)
    A = B @ B.T
    return from_dense(np.tril(A)), A
