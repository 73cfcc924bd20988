import numpy as np
from hypothesis import HealthCheck, settings

from tleseq import kernels

# jit compilation on first call would otherwise be charged to whichever
# hypothesis example happens to run first
settings.register_profile(
    "tleseq",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("tleseq")


def pytest_sessionstart(session):
    a = np.array([0, 1], dtype=np.int64)
    b = np.array([1, 0, 1], dtype=np.int64)
    kernels.levenshtein(a, b)
    kernels.prefix_row(a, b)
    kernels.delta_row(np.array([0, 1, 1, 2], dtype=np.int64), b, 2)
    kernels.delta_matrix(b, a, 2)
    kernels.lev_batch(np.array([[0, 1]], dtype=np.int64),
                      np.array([2], dtype=np.int64), b)
