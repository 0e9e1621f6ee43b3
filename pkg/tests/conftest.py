import pytest
from threadpoolctl import threadpool_limits


@pytest.fixture(autouse=True, scope="session")
def _single_threaded_blas():
    # BLAS thread-sync overhead dominates at the matrix sizes used here
    with threadpool_limits(limits=1):
        yield
