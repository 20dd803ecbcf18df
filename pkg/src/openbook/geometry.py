"""Open book structures: pages glued along bindings.

The pipeline supports one geometry class, the *periodic flat book*: ``E`` flat
rectangular pages of extent ``ell_k`` (away from the binding) and width ``L``
(along it), attached to the ``z``-axis at dihedral angles ``theta_k``. The
binding is periodic with period ``L`` so that the structure has no corners.

Curved structures (e.g. two intersecting spheres) can be described at the
level of page/binding counts and local angles for validation, but they are
flagged ``flat=False`` and rejected by the meshing code.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

THETA_MIN = math.radians(20.0)


class GeometryError(ValueError):
    pass


class TransversalityViolation(GeometryError):
    pass


class EmptyStructure(GeometryError):
    pass


@dataclass(frozen=True)
class PageSpec:
    length: float
    angle: float
    binding_id: int = 0


@dataclass(frozen=True)
class BindingSpec:
    length: float
    periodic: bool = True
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class OpenBookStructure:
    pages: tuple[PageSpec, ...]
    bindings: tuple[BindingSpec, ...]
    epsilon0: float
    flat: bool = True

    @property
    def incidence(self) -> dict[int, tuple[int, ...]]:
        inc = {m: [] for m in range(len(self.bindings))}
        for k, p in enumerate(self.pages):
            inc.setdefault(p.binding_id, []).append(k)
        return {m: tuple(v) for m, v in inc.items()}

    @property
    def n_pages(self) -> int:
        return len(self.pages)

    @property
    def angles(self) -> np.ndarray:
        return np.array([p.angle for p in self.pages])

    @property
    def lengths(self) -> np.ndarray:
        return np.array([p.length for p in self.pages])

    @property
    def binding_length(self) -> float:
        return self.bindings[0].length

    @property
    def area(self) -> float:
        return float(sum(p.length * self.bindings[p.binding_id].length for p in self.pages))

    def directions(self) -> np.ndarray:
        """Unit in-plane page directions, shape (E, 2)."""
        a = self.angles
        return np.column_stack([np.cos(a), np.sin(a)])

    def min_angular_gap(self, binding_id: int = 0) -> float:
        idx = self.incidence.get(binding_id, ())
        return angular_gaps([self.pages[k].angle for k in idx]).min(initial=2 * math.pi)

    def junction_radius(self, eps: float) -> float:
        """Distance from the binding beyond which fattened pages no longer overlap."""
        gap = self.min_angular_gap()
        if gap >= math.pi:
            return eps
        return eps / math.sin(gap / 2)

    def scaled(self, s: float) -> "OpenBookStructure":
        pages = tuple(PageSpec(p.length * s, p.angle, p.binding_id) for p in self.pages)
        bindings = tuple(BindingSpec(b.length * s, b.periodic, b.axis) for b in self.bindings)
        return OpenBookStructure(pages, bindings, self.epsilon0 * s, self.flat)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        if len(self.bindings) != 1:
            raise GeometryError("JSON form only covers single-binding books")
        b = self.bindings[0]
        return {
            "pages": [{"length": p.length, "angle_deg": math.degrees(p.angle)} for p in self.pages],
            "binding": {"length": b.length, "periodic": b.periodic},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "OpenBookStructure":
        b = d["binding"]
        pages = d["pages"]
        return build_periodic_flat_book(
            len(pages),
            ell=[p["length"] for p in pages],
            L=b["length"],
            angles=[math.radians(p["angle_deg"]) for p in pages],
        )

    @classmethod
    def from_json(cls, text: str) -> "OpenBookStructure":
        return cls.from_dict(json.loads(text))


def angular_gaps(angles) -> np.ndarray:
    """Cyclic gaps between sorted angles (radians); empty for fewer than 2 pages."""
    a = np.sort(np.mod(np.asarray(angles, dtype=float), 2 * math.pi))
    if a.size < 2:
        return np.array([])
    return np.diff(np.append(a, a[0] + 2 * math.pi))


def build_periodic_flat_book(E: int, ell=1.0, L: float = 1.0, angles=None) -> OpenBookStructure:
    """E flat pages around one periodic straight binding of length ``L``.

    ``ell`` may be a scalar or a per-page sequence. ``angles`` (radians) default
    to ``2*pi*j/E``; given angles must be sorted with cyclic gaps >= 20 degrees.
    """
    if E < 1:
        raise EmptyStructure("an open book needs at least one page")
    lengths = np.broadcast_to(np.asarray(ell, dtype=float), (E,))
    if np.any(lengths <= 0) or L <= 0:
        raise GeometryError("page and binding lengths must be positive")
    if angles is None:
        angles = [2 * math.pi * j / E for j in range(E)]
    angles = [float(a) for a in angles]
    if len(angles) != E:
        raise GeometryError(f"expected {E} angles, got {len(angles)}")
    if any(a < 0 or a >= 2 * math.pi for a in angles):
        raise GeometryError("page angles must lie in [0, 2pi)")
    if any(b < a for a, b in zip(angles, angles[1:])):
        raise GeometryError("page angles must be sorted")
    gaps = angular_gaps(angles)
    if gaps.size and gaps.min() < THETA_MIN - 1e-12:
        raise TransversalityViolation(
            f"angular gap {math.degrees(gaps.min()):.3g} deg below {math.degrees(THETA_MIN):.0f} deg"
        )
    pages = tuple(PageSpec(float(lk), a, 0) for lk, a in zip(lengths, angles))
    draft = OpenBookStructure(pages, (BindingSpec(float(L), True),), epsilon0=1.0)
    return OpenBookStructure(pages, draft.bindings, compute_epsilon0(draft))


def compute_epsilon0(s: OpenBookStructure) -> float:
    """Admissible fattening bound for a flat book.

    Two constraints: ``eps <= min(ell)/4``, and the overlap of neighbouring
    fattened pages (which reaches ``eps / sin(gap/2)`` from the binding) must
    stay within half of the shortest page.
    """
    ell = float(s.lengths.min())
    bound = ell / 4
    gap = s.min_angular_gap()
    if gap < math.pi:
        bound = min(bound, 0.5 * ell * math.sin(gap / 2))
    return bound


def overlap_extent_sampled(s: OpenBookStructure, eps: float, n_samples: int = 10**6, seed: int = 0) -> float:
    """Monte Carlo estimate of how far from the binding two fattened pages overlap.

    Samples the cross-section bounding box uniformly and returns the largest
    distance to the binding among points that lie within ``eps`` of two
    distinct page segments (0 if no such sample).
    """
    rng = np.random.default_rng(seed)
    d = s.directions()
    ell = s.lengths
    R = float(ell.max() + eps)
    far = 0.0
    chunk = 200_000
    for start in range(0, n_samples, chunk):
        n = min(chunk, n_samples - start)
        p = rng.uniform(-R, R, size=(n, 2))
        t = np.clip(p @ d.T, 0.0, ell)  # (n, E) projection onto each segment
        dist2 = (p[:, None, 0] - t * d[None, :, 0]) ** 2 + (p[:, None, 1] - t * d[None, :, 1]) ** 2
        hits = (dist2 <= eps * eps).sum(axis=1)
        multi = hits >= 2
        if multi.any():
            far = max(far, float(np.sqrt((p[multi] ** 2).sum(axis=1)).max()))
    return far


def certify_epsilon0(s: OpenBookStructure, eps: float, n_samples: int = 10**6, seed: int = 0) -> bool:
    """Sampling check that fattened pages overlap only inside the junction collar."""
    reach = overlap_extent_sampled(s, eps, n_samples, seed)
    return eps <= s.lengths.min() / 4 and reach <= 0.5 * s.lengths.min() + 1e-12


@dataclass
class ValidationReport:
    checks: dict[str, bool] = field(default_factory=dict)
    n_pages: int = 0
    n_bindings: int = 0
    min_gap_deg: float = 360.0
    epsilon0: float = 0.0
    connected: bool = False

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]


def validate_structure(s: OpenBookStructure) -> ValidationReport:
    rep = ValidationReport(n_pages=len(s.pages), n_bindings=len(s.bindings), epsilon0=s.epsilon0)
    rep.checks["nonempty"] = len(s.pages) >= 1 and len(s.bindings) >= 1
    rep.checks["pages_attached"] = all(0 <= p.binding_id < len(s.bindings) for p in s.pages)
    rep.checks["bindings_used"] = all(len(v) >= 1 for v in s.incidence.values())
    rep.checks["positive_lengths"] = all(p.length > 0 for p in s.pages) and all(
        b.length > 0 for b in s.bindings
    )
    rep.checks["angles_in_range"] = all(0 <= p.angle < 2 * math.pi for p in s.pages)

    # pages and bindings form a bipartite graph; connected iff one component
    seen_b, frontier = {0}, [0]
    inc = s.incidence
    while frontier and s.bindings:
        m = frontier.pop()
        for k in inc.get(m, ()):
            b = s.pages[k].binding_id
            if b not in seen_b:
                seen_b.add(b)
                frontier.append(b)
    rep.connected = bool(s.bindings) and len(seen_b) == len(s.bindings)
    rep.checks["connected"] = rep.connected

    gaps = [s.min_angular_gap(m) for m in range(len(s.bindings))]
    rep.min_gap_deg = math.degrees(min(gaps, default=2 * math.pi))
    rep.checks["transversal"] = rep.min_gap_deg >= math.degrees(THETA_MIN) - 1e-9
    ell_min = min((p.length for p in s.pages), default=0.0)
    rep.checks["epsilon0"] = 0 < s.epsilon0 <= ell_min / 4 + 1e-15
    return rep


def two_spheres(r1: float, r2: float, d: float) -> OpenBookStructure:
    """Count-level descriptor of two intersecting spheres (centres ``d`` apart).

    The intersection circle is the single (periodic) binding; the four spherical
    caps it cuts off are the pages. Local page angles are the tangent directions
    of the two meridians at the binding. Not meshable (``flat=False``).
    """
    cos_phi = (r1 * r1 + r2 * r2 - d * d) / (2 * r1 * r2)
    if not (abs(r1 - r2) < d < r1 + r2):
        # tangential contact or disjoint spheres: report a degenerate angle
        cos_phi = float(np.clip(cos_phi, -1.0, 1.0))
    phi = math.acos(float(np.clip(cos_phi, -1.0, 1.0)))
    # circle of intersection: distance a from centre 1 along the axis, radius rho
    a = (d * d + r1 * r1 - r2 * r2) / (2 * d)
    rho = math.sqrt(max(r1 * r1 - a * a, 0.0))
    alpha1 = math.acos(float(np.clip(a / r1, -1, 1)))  # polar angle of circle seen from centre 1
    alpha2 = math.acos(float(np.clip((d - a) / r2, -1, 1)))
    lengths = [
        r1 * (math.pi - alpha1),  # outer part of sphere 1
        r1 * alpha1,  # part of sphere 1 inside sphere 2
        r2 * alpha2,  # part of sphere 2 inside sphere 1
        r2 * (math.pi - alpha2),  # outer part of sphere 2
    ]
    angles = sorted(np.mod([0.0, phi, math.pi, math.pi + phi], 2 * math.pi))
    pages = tuple(PageSpec(lk, float(a_), 0) for lk, a_ in zip(lengths, angles))
    draft = OpenBookStructure(pages, (BindingSpec(2 * math.pi * rho, True),), 1.0, flat=False)
    return OpenBookStructure(pages, draft.bindings, compute_epsilon0(draft), flat=False)
