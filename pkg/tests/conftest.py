import pytest
from hypothesis import HealthCheck, settings

from openbook.geometry import build_periodic_flat_book

settings.register_profile("repo", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def book3():
    return build_periodic_flat_book(3)


def square_forms(n: int, a: float = 1.0, b: float = 1.0):
    """P1 forms on an ``n x n`` structured grid of the rectangle [0,a]x[0,b], Neumann."""
    import numpy as np

    from openbook.femcore import AssembledForms, _scatter, triangle_p1

    x, y = np.meshgrid(np.linspace(0, a, n + 1), np.linspace(0, b, n + 1), indexing="ij")
    P = np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])
    idx = np.arange(P.shape[0]).reshape(n + 1, n + 1)
    v00, v10, v11, v01 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    T = np.vstack([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    Ke, Me, _ = triangle_p1(P[T])
    K, M = _scatter(T, Ke, Me, P.shape[0])
    return AssembledForms(K, M, np.arange(P.shape[0]))
