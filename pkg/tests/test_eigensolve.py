import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse

from conftest import square_forms
from openbook.eigensolve import (
    CutoffOnEigenvalue,
    DegenerateInput,
    SizeLimit,
    SolverStalled,
    cluster,
    dense_reference,
    max_rayleigh_on_span,
    rayleigh_quotient,
    smallest_eigenpairs,
    spectral_subspace,
)
from openbook.femcore import AssembledForms, assemble_surface
from openbook.meshing import mesh_surface
from openbook.spectra_oracle import neumann_box_spectrum


@pytest.fixture(scope="module")
def sq():
    return square_forms(24)  # n = 625


@pytest.fixture(scope="module")
def sq_small():
    return square_forms(20)  # n = 441


def test_identity_pencil():
    n = 400
    A = sparse.identity(n, format="csr") * 2.0 + sparse.diags(np.linspace(0, 1, n), format="csr")
    forms = AssembledForms(A, A.copy(), np.arange(n))
    r = smallest_eigenpairs(forms, 6)
    assert np.allclose(r.values, 1.0, atol=1e-10)


def test_two_by_two_dense():
    K = sparse.csr_matrix(np.array([[2.0, 0.0], [0.0, 0.0]]))
    M = sparse.identity(2, format="csr")
    r = dense_reference(AssembledForms(K, M, np.arange(2)))
    assert np.allclose(r.values, [0.0, 2.0])


def test_unit_square_in_h2_envelope():
    exact = neumann_box_spectrum((1.0, 1.0), 4).values()
    assert np.allclose(exact, [0, math.pi**2, math.pi**2, 2 * math.pi**2])
    errs = []
    for n in (16, 32):
        h = 1.0 / n
        vals = smallest_eigenpairs(square_forms(n), 4).values
        err = vals - exact
        assert abs(vals[0]) < 1e-8
        # conforming Galerkin: from above, within C lam^2 h^2
        assert np.all(err[1:] >= -1e-8)
        assert np.all(err[1:] <= exact[1:] ** 2 * h * h)
        errs.append(err[1:])
    ratio = errs[0] / errs[1]
    assert np.all((ratio > 3.0) & (ratio < 5.0))


def test_sparse_matches_dense(sq_small, book3):
    for forms in (sq_small, assemble_surface(mesh_surface(book3, 0.125))):
        assert forms.n <= 600
        ref = dense_reference(forms)
        r = smallest_eigenpairs(forms, 8, tol=1e-9)
        assert r.iterations > 0
        assert np.all(np.abs(r.values - ref.values[:8]) <= 1e-8 * np.maximum(np.abs(ref.values[:8]), 1.0))


def test_result_invariants(sq):
    r = smallest_eigenpairs(sq, 8)
    assert np.all(np.diff(r.values) >= 0)
    assert r.values[0] >= -r.tol
    G = r.vectors.T @ (sq.M @ r.vectors)
    assert np.abs(G - np.eye(8)).max() < 1e-8
    assert np.all(r.residuals <= r.tol)
    # the diagonal split keeps only a transposition symmetry, so only the first pair is forced
    assert r.multiplicities()[:3] == [1, 2, 1]
    d = json.loads(r.to_json())
    assert set(d) >= {"values", "residuals", "iterations"}


def test_deterministic_given_seed(sq):
    a = smallest_eigenpairs(sq, 6, seed=11)
    b = smallest_eigenpairs(sq, 6, seed=11)
    assert a.iterations == b.iterations
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.vectors, b.vectors)


def test_dense_permutation_invariance(sq_small):
    perm = np.random.default_rng(0).permutation(sq_small.n)
    P = sparse.csr_matrix((np.ones(sq_small.n), (np.arange(sq_small.n), perm)))
    pf = AssembledForms(P @ sq_small.K @ P.T, P @ sq_small.M @ P.T, np.arange(sq_small.n))
    a = dense_reference(sq_small).values
    b = dense_reference(pf).values
    assert np.allclose(a, b, rtol=0, atol=1e-12 * max(1.0, a.max()))


def test_stall_reports_partial(sq):
    with pytest.raises(SolverStalled) as info:
        smallest_eigenpairs(sq, 6, maxiter=2)
    assert not info.value.partial.converged
    assert info.value.partial.values.shape == (6,)


def test_error_paths(sq):
    with pytest.raises(DegenerateInput):
        rayleigh_quotient(sq, np.zeros(sq.n))
    with pytest.raises(ValueError):
        smallest_eigenpairs(sq, 0)
    big = square_forms(45)
    with pytest.raises(SizeLimit):
        dense_reference(big)
    r = smallest_eigenpairs(sq, 6)
    with pytest.raises(CutoffOnEigenvalue):
        spectral_subspace(r, float(r.values[1]))
    with pytest.raises(CutoffOnEigenvalue):
        spectral_subspace(r, 1e6)


def test_spectral_subspace(sq):
    r = smallest_eigenpairs(sq, 6)
    sub = spectral_subspace(r, 15.0)
    assert sub.dim == 3
    assert np.all(sub.values < 15.0)
    assert sub.gap > 1.0


def test_rayleigh_quotient_of_eigenvectors(sq):
    r = smallest_eigenpairs(sq, 6)
    for lam, u in zip(r.values, r.vectors.T):
        assert rayleigh_quotient(sq, u) == pytest.approx(lam, abs=1e-7 * (1 + lam))
    assert rayleigh_quotient(sq, np.ones(sq.n)) == pytest.approx(0.0, abs=1e-12)


def test_cluster_groups():
    assert cluster(np.array([0.0, 1.0, 1.0 + 1e-9, 2.0])) == [[0], [1, 2], [3]]


@pytest.fixture(scope="module")
def sq_pairs(sq):
    return smallest_eigenpairs(sq, 8, tol=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_rayleigh_lower_bound(sq, sq_pairs, seed):
    u = np.random.default_rng(seed).standard_normal(sq.n)
    assert rayleigh_quotient(sq, u) >= sq_pairs.values[0] - 1e-8


@given(n=st.integers(1, 8))
def test_courant_fischer_on_computed_span(sq, sq_pairs, n):
    top = max_rayleigh_on_span(sq, sq_pairs.vectors[:, :n])
    assert top == pytest.approx(sq_pairs.values[n - 1], abs=1e-8 * (1 + sq_pairs.values[n - 1]))


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
def test_random_subspace_never_beats_min_max(sq, sq_pairs, seed, n):
    W = np.random.default_rng(seed).standard_normal((sq.n, n))
    assert max_rayleigh_on_span(sq, W) >= sq_pairs.values[n - 1] - 1e-8
