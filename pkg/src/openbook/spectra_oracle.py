"""Closed-form reference spectra.

On a periodic flat book the limit operator separates: transverse profiles
solve the Neumann/Kirchhoff problem on a star graph with ``E`` edges of length
``ell``, and the binding direction contributes Fourier modes ``2 pi m / L``.
See ``docs/star_graph.md`` for the star-graph derivation.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
import warnings

from scipy.sparse.linalg import LinearOperator, lobpcg, splu


@dataclass(frozen=True)
class SpectrumEntry:
    value: float
    multiplicity: int
    k: float  # transverse wavenumber (or first box index)
    m: int  # binding Fourier index (or second box index)


@dataclass(frozen=True)
class AnalyticSpectrum:
    entries: tuple[SpectrumEntry, ...]
    count: int

    def values(self, count: int | None = None) -> np.ndarray:
        count = self.count if count is None else count
        out = np.repeat([e.value for e in self.entries], [e.multiplicity for e in self.entries])
        return out[:count]

    def clusters(self, rel_gap: float = 1e-9) -> list[tuple[float, int]]:
        """(value, total multiplicity) with coincident entries merged."""
        out: list[list] = []
        for e in self.entries:
            if out and abs(e.value - out[-1][0]) <= rel_gap * max(e.value, 1.0):
                out[-1][1] += e.multiplicity
            else:
                out.append([e.value, e.multiplicity])
        return [(v, m) for v, m in out]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "multiplicity", "k", "m"])
        for e in self.entries:
            w.writerow([f"{e.value:.12g}", e.multiplicity, f"{e.k:.12g}", e.m])
        return buf.getvalue()


def _truncate(entries: list[SpectrumEntry], count: int) -> AnalyticSpectrum:
    entries.sort(key=lambda e: (e.value, e.k, e.m))
    kept, total = [], 0
    for e in entries:
        if total >= count:
            break
        kept.append(e)
        total += e.multiplicity
    return AnalyticSpectrum(tuple(kept), count)


def _star_modes(E: int, ell: float, kmax: float):
    """(k, multiplicity) for all star-graph wavenumbers k <= kmax."""
    out = []
    n = 0
    while n * math.pi / ell <= kmax:
        out.append((n * math.pi / ell, 1))
        n += 1
    if E > 1:
        n = 0
        while (n + 0.5) * math.pi / ell <= kmax:
            out.append(((n + 0.5) * math.pi / ell, E - 1))
            n += 1
    return out


def star_graph_spectrum(E: int, ell: float, count: int) -> AnalyticSpectrum:
    if E < 1 or ell <= 0:
        raise ValueError("need E >= 1 and ell > 0")
    kmax = (count + 1) * math.pi / ell
    entries = [SpectrumEntry(k * k, mult, k, 0) for k, mult in _star_modes(E, ell, kmax)]
    return _truncate(entries, count)


def book_limit_spectrum(E: int, ell: float, L: float, count: int) -> AnalyticSpectrum:
    """Spectrum of the limit operator on the periodic flat book with equal pages."""
    if E < 1 or ell <= 0 or L <= 0:
        raise ValueError("need E >= 1 and positive lengths")
    bound = 1.0
    while True:
        star = _star_modes(E, ell, math.sqrt(bound))
        entries = []
        mmax = int(math.floor(math.sqrt(bound) * L / (2 * math.pi)))
        for (k, mult), m in itertools.product(star, range(mmax + 1)):
            lam = k * k + (2 * math.pi * m / L) ** 2
            if lam <= bound:
                entries.append(SpectrumEntry(lam, mult * (1 if m == 0 else 2), k, m))
        if sum(e.multiplicity for e in entries) >= count:
            return _truncate(entries, count)
        bound *= 2


def neumann_box_spectrum(sides, count: int) -> AnalyticSpectrum:
    """Neumann Laplacian on a 2D rectangle or 3D box; labels hold the first two indices."""
    sides = [float(a) for a in sides]
    if len(sides) not in (2, 3) or min(sides) <= 0:
        raise ValueError("need 2 or 3 positive side lengths")
    bound = 1.0
    while True:
        ranges = [range(int(math.floor(math.sqrt(bound) * a / math.pi)) + 1) for a in sides]
        entries = []
        for idx in itertools.product(*ranges):
            lam = math.pi**2 * sum((p / a) ** 2 for p, a in zip(idx, sides))
            if lam <= bound:
                entries.append(SpectrumEntry(lam, 1, float(idx[0]), int(idx[1])))
        if len(entries) >= count:
            return _merge(_truncate(entries, count))
        bound *= 2


def _merge(spec: AnalyticSpectrum) -> AnalyticSpectrum:
    """Fold exactly coincident box eigenvalues into single entries."""
    out: list[SpectrumEntry] = []
    for e in spec.entries:
        if out and abs(e.value - out[-1].value) <= 1e-12 * max(e.value, 1.0):
            p = out[-1]
            out[-1] = SpectrumEntry(p.value, p.multiplicity + 1, p.k, p.m)
        else:
            out.append(e)
    return AnalyticSpectrum(tuple(out), spec.count)


def flat_cylinder_spectrum(width: float, L: float, count: int) -> AnalyticSpectrum:
    """Neumann in the width direction, periodic (period L) along the binding."""
    return book_limit_spectrum(1, width, L, count)


# ---------------------------------------------------------------------------
# brute-force certification
# ---------------------------------------------------------------------------


def star_graph_fem(E: int, ell: float, h: float, count: int) -> np.ndarray:
    """Smallest eigenvalues of the star graph by P1 FEM (shared centre node).

    Independent of the closed form: continuity at the centre is built into the
    DOF numbering, Kirchhoff and the Neumann ends are natural. Solved with
    scipy's block LOBPCG preconditioned by an exact ``(K + M)`` solve; a block
    method is needed because the spectrum has ``E - 1``-fold clusters that a
    single-vector Krylov run tends to undercount.
    """
    ne = int(math.ceil(ell / h))
    he = ell / ne
    n = 1 + E * ne
    rows, cols, kv, mv = [], [], [], []
    ke = np.array([[1, -1], [-1, 1]]) / he
    me = np.array([[2, 1], [1, 2]]) * he / 6
    for e in range(E):
        nodes = [0] + [1 + e * ne + i for i in range(ne)]
        for a, b in zip(nodes, nodes[1:]):
            for i, p in enumerate((a, b)):
                for j, q in enumerate((a, b)):
                    rows.append(p)
                    cols.append(q)
                    kv.append(ke[i, j])
                    mv.append(me[i, j])
    K = sparse.csc_matrix((kv, (rows, cols)), shape=(n, n))
    M = sparse.csc_matrix((mv, (rows, cols)), shape=(n, n))
    lu = splu((K + M).tocsc())
    prec = LinearOperator((n, n), matvec=lu.solve, matmat=lu.solve)
    X = np.random.default_rng(0).standard_normal((n, min(n, count + E + 2)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        w, _ = lobpcg(K, X, B=M, M=prec, largest=False, tol=1e-9, maxiter=1000)
    return np.sort(w)[:count]


def weyl_count_slope(area: float) -> float:
    """Leading slope of the 2D eigenvalue counting function N(lam) ~ area * lam / (4 pi)."""
    return area / (4 * math.pi)
