"""Smallest eigenpairs of sparse symmetric-definite pencils ``K u = lam M u``.

``smallest_eigenpairs`` is a blocked Rayleigh-quotient minimizer (LOBPCG with
a Jacobi preconditioner, basis orthonormalized by SVQB). ``dense_reference``
is the LAPACK route used as an oracle for small problems.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .femcore import AssembledForms

DENSE_LIMIT = 2000


class SolverStalled(RuntimeError):
    def __init__(self, msg, partial: "EigenResult"):
        super().__init__(msg)
        self.partial = partial


class SizeLimit(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class CutoffOnEigenvalue(ValueError):
    pass


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray  # (n, m), M-orthonormal columns
    residuals: np.ndarray
    iterations: int
    tol: float
    converged: bool = True

    def multiplicities(self, rel_gap: float = 1e-6) -> list[int]:
        return [len(c) for c in cluster(self.values, rel_gap)]

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "residuals": [float(r) for r in self.residuals],
            "iterations": int(self.iterations),
            "tol": float(self.tol),
            "converged": bool(self.converged),
            "multiplicities": self.multiplicities(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def cluster(values, rel_gap: float = 1e-6) -> list[list[int]]:
    """Group sorted eigenvalues whose relative spacing is below ``rel_gap``."""
    groups: list[list[int]] = []
    for i, v in enumerate(values):
        if groups:
            prev = values[groups[-1][-1]]
            if abs(v - prev) <= rel_gap * max(abs(v), abs(prev), 1.0):
                groups[-1].append(i)
                continue
        groups.append([i])
    return groups


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Make the first clearly nonzero entry of every column positive."""
    thresh = 1e-8 * np.abs(V).max(axis=0)
    first = np.argmax(np.abs(V) > thresh, axis=0)
    s = np.sign(V[first, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def _residual_norms(K, M, X, theta, minv):
    R = K @ X - (M @ X) * theta
    return np.sqrt(np.sum(R * R * minv[:, None], axis=0)) / (np.abs(theta) + 1.0)


def _svqb(U: np.ndarray, MU: np.ndarray, drop: float = 1e-12):
    """M-orthonormalize the columns of U (dropping near-dependent directions)."""
    G = U.T @ MU
    G = 0.5 * (G + G.T)
    dg = np.sqrt(np.abs(np.diag(G)))
    dg[dg == 0] = 1.0
    Gs = G / dg[:, None] / dg[None, :]
    w, V = np.linalg.eigh(Gs)
    keep = w > drop * max(w.max(), 1e-300)
    T = (V[:, keep] / np.sqrt(w[keep])) / dg[:, None]
    return U @ T, MU @ T


def dense_reference(forms: AssembledForms) -> EigenResult:
    n = forms.n
    if n > DENSE_LIMIT:
        raise SizeLimit(f"dense reference limited to n <= {DENSE_LIMIT} (got {n})")
    K = forms.K.toarray()
    M = forms.M.toarray()
    w, V = sla.eigh(K, M)
    V = _fix_signs(V)
    minv = 1.0 / np.asarray(forms.M.sum(axis=1)).ravel()
    res = _residual_norms(forms.K, forms.M, V, w, minv)
    return EigenResult(w, V, res, 0, 0.0)


def rayleigh_quotient(forms: AssembledForms, u: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    den = float(u @ (forms.M @ u))
    if not np.any(u) or den <= 0:
        raise DegenerateInput("Rayleigh quotient of the zero vector")
    return float(u @ (forms.K @ u)) / den


def smallest_eigenpairs(
    forms: AssembledForms,
    m: int,
    tol: float = 1e-7,
    seed: int = 0,
    maxiter: int = 20000,
) -> EigenResult:
    """The ``m`` smallest eigenpairs, residual measured as
    ``||K u - lam M u||_{D^-1} / (|lam| + 1)`` with ``D`` the lumped mass.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    K, M = forms.K, forms.M
    n = forms.n
    bs = m + max(5, m // 2)
    minv = 1.0 / np.asarray(M.sum(axis=1)).ravel()
    if n < 5 * bs:
        ref = dense_reference(forms)
        return EigenResult(ref.values[:m], ref.vectors[:, :m], ref.residuals[:m], 0, tol)

    prec = 1.0 / K.diagonal()
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, bs))
    X, MX = _svqb(X, M @ X)
    KX = K @ X
    theta, C = np.linalg.eigh(0.5 * (X.T @ KX + KX.T @ X))
    X, KX, MX = X @ C, KX @ C, MX @ C
    P = KP = MP = None
    res = np.full(bs, np.inf)
    it = 0
    for it in range(1, maxiter + 1):
        R = KX - MX * theta
        res = np.sqrt(np.sum(R * R * minv[:, None], axis=0)) / (np.abs(theta) + 1.0)
        if np.all(res[:m] <= tol):
            break
        active = res > tol
        W = R[:, active] * prec[:, None]
        blocks = [W] if P is None else [W, P[:, active]]
        S = np.hstack(blocks)
        for _ in range(2):
            S = S - X @ (MX.T @ S)
        S, MS = _svqb(S, M @ S)
        S = S - X @ (MX.T @ S)
        S, MS = _svqb(S, M @ S)
        KS = K @ S
        B = np.hstack([X, S])
        KB = np.hstack([KX, KS])
        MB = np.hstack([MX, MS])
        GK = B.T @ KB
        GM = B.T @ MB
        w, C = sla.eigh(0.5 * (GK + GK.T), 0.5 * (GM + GM.T))
        C = C[:, :bs]
        theta = w[:bs]
        Cs = C[bs:]
        P, KP, MP = S @ Cs, KS @ Cs, MS @ Cs
        X, KX, MX = B @ C, KB @ C, MB @ C
    X = _fix_signs(X)
    res = _residual_norms(K, M, X, theta, minv)
    out = EigenResult(theta[:m].copy(), X[:, :m].copy(), res[:m], it, tol, bool(np.all(res[:m] <= tol)))
    if not out.converged:
        raise SolverStalled(f"no convergence after {it} iterations (max residual {res[:m].max():.2e})", out)
    return out


@dataclass
class SpectralSubspace:
    cutoff: float
    values: np.ndarray
    basis: np.ndarray  # M-orthonormal columns with eigenvalue < cutoff
    gap: float = field(default=np.inf)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def spectral_subspace(result: EigenResult, Lambda: float, tol: float | None = None) -> SpectralSubspace:
    """Span of the computed eigenvectors below ``Lambda`` (discrete P_Lambda range)."""
    tol = result.tol if tol is None else tol
    tol = max(tol, 1e-12)
    gap = float(np.min(np.abs(result.values - Lambda)))
    if gap < 10 * tol * (abs(Lambda) + 1):
        raise CutoffOnEigenvalue(f"cutoff {Lambda} within {gap:.2e} of an eigenvalue")
    if result.values.max() < Lambda:
        raise CutoffOnEigenvalue(f"computed spectrum ends at {result.values.max():.4g} < cutoff {Lambda}")
    sel = result.values < Lambda
    return SpectralSubspace(Lambda, result.values[sel], result.vectors[:, sel], gap)


def max_rayleigh_on_span(forms: AssembledForms, W: np.ndarray) -> float:
    """max of u'Ku/u'Mu over span(W), via the projected pencil."""
    GK = W.T @ (forms.K @ W)
    GM = W.T @ (forms.M @ W)
    return float(sla.eigh(0.5 * (GK + GK.T), 0.5 * (GM + GM.T), eigvals_only=True)[-1])


def is_sparse(A) -> bool:
    return sparse.issparse(A)
