"""Experiment driver: limit spectra, fattened spectra, convergence in eps."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .eigensolve import EigenResult, SolverStalled, cluster, smallest_eigenpairs
from .femcore import assemble_surface, assemble_volume
from .geometry import OpenBookStructure, build_periodic_flat_book, validate_structure
from .meshing import fattened_mesh, mesh_surface
from .spectra_oracle import book_limit_spectrum
from .transfer import TransferDefectReport, build_transfer, defects_csv, measure_defects

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    E: int = 3
    ell: float = 1.0
    L: float = 1.0
    angles_deg: list[float] | None = None
    eps_list: list[float] = field(default_factory=lambda: [0.2, 0.1, 0.05])
    h_list: list[float] = field(default_factory=lambda: [0.08, 0.04])
    surface_h_list: list[float] = field(default_factory=lambda: [0.05, 0.025])
    m: int = 8
    tol: float = 1e-7
    Lambda: float = 15.0
    out: str = "out"
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def structure(self) -> OpenBookStructure:
        angles = None if self.angles_deg is None else [math.radians(a) for a in self.angles_deg]
        return build_periodic_flat_book(self.E, self.ell, self.L, angles)

    def n_z(self, h: float) -> int:
        return max(4, int(math.ceil(self.L / h - 1e-9)))

    def validate(self) -> OpenBookStructure:
        try:
            s = self.structure()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        rep = validate_structure(s)
        if not rep.ok:
            raise ConfigError(f"structure fails checks: {rep.failures()}")
        for name, seq in (("eps_list", self.eps_list), ("h_list", self.h_list), ("surface_h_list", self.surface_h_list)):
            if any(b >= a for a, b in zip(seq, seq[1:])):
                raise ConfigError(f"{name} must be strictly decreasing")
            if not seq or min(seq) <= 0:
                raise ConfigError(f"{name} must be non-empty and positive")
        if len(self.h_list) < 2 or len(self.surface_h_list) < 2:
            raise ConfigError("h-extrapolation needs at least two mesh sizes")
        if max(self.eps_list) >= s.epsilon0:
            raise ConfigError(f"eps must stay below epsilon0 = {s.epsilon0:.4g}")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        return s


# ---------------------------------------------------------------------------
# numerical helpers
# ---------------------------------------------------------------------------


def richardson(coarse, fine, ratio: float = 2.0, order: float = 2.0):
    """Two-point extrapolation assuming error ~ C h^order."""
    q = ratio**order
    return (q * np.asarray(fine) - np.asarray(coarse)) / (q - 1)


def observed_order(v1, v2, v3, ratio: float = 2.0):
    """Convergence order estimated from three successive refinements."""
    num = np.abs(np.asarray(v1) - np.asarray(v2))
    den = np.abs(np.asarray(v2) - np.asarray(v3))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(num / den) / math.log(ratio)


def fit_rate(eps, gaps):
    """Least-squares fit of gap ~ c * eps^alpha on log-log axes; (alpha, c)."""
    eps = np.asarray(eps, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if eps.size < 2 or np.any(gaps == 0):
        return math.nan, math.nan
    sign = np.sign(gaps[-1])
    A = np.column_stack([np.log(eps), np.ones_like(eps)])
    (alpha, logc), *_ = np.linalg.lstsq(A, np.log(np.abs(gaps)), rcond=None)
    return float(alpha), float(sign * math.exp(logc))


def _extrapolate(hs, values_by_h):
    """Richardson on the two finest sizes; values_by_h aligned with hs."""
    hc, hf = hs[-2], hs[-1]
    return richardson(values_by_h[-2], values_by_h[-1], ratio=hc / hf)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


@dataclass
class LimitRun:
    h_list: list[float]
    results: list[EigenResult]
    extrapolated: np.ndarray
    oracle: np.ndarray | None
    order: np.ndarray | None = None

    def multiplicities(self, rel_gap: float = 1e-6) -> list[int]:
        return [len(c) for c in cluster(self.results[-1].values, rel_gap)]


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def run_limit(config: ExperimentConfig) -> LimitRun:
    s = config.validate()

    def solve(h):
        forms = assemble_surface(mesh_surface(s, h))
        return smallest_eigenpairs(forms, config.m, config.tol, config.seed)

    results = _map(solve, config.surface_h_list, config.threads)
    vals = [r.values for r in results]
    ext = _extrapolate(config.surface_h_list, vals)
    order = None
    if len(vals) >= 3:
        order = observed_order(vals[-3], vals[-2], vals[-1], config.surface_h_list[-2] / config.surface_h_list[-1])
    oracle = None
    if np.allclose(s.lengths, s.lengths[0]):
        oracle = book_limit_spectrum(s.n_pages, float(s.lengths[0]), s.binding_length, config.m).values()
    return LimitRun(list(config.surface_h_list), results, ext, oracle, order)


@dataclass
class FattenedRun:
    eps: float
    h_list: list[float]
    results: list[EigenResult]
    extrapolated: np.ndarray
    failures: list[str] = field(default_factory=list)


def run_fattened(config: ExperimentConfig) -> list[FattenedRun]:
    """Stalled solves are kept (partial eigenpairs) and named in ``failures``."""
    s = config.validate()
    jobs = [(eps, h) for eps in config.eps_list for h in config.h_list]

    def solve(job):
        eps, h = job
        t0 = time.perf_counter()
        forms = assemble_volume(fattened_mesh(s, eps, h, config.n_z(h)))
        try:
            res = smallest_eigenpairs(forms, config.m, config.tol, config.seed)
        except SolverStalled as exc:
            log.warning("eps=%g h=%g: %s", eps, h, exc)
            return exc.partial
        log.info("eps=%g h=%g n=%d iters=%d (%.1fs)", eps, h, forms.n, res.iterations, time.perf_counter() - t0)
        return res

    res = dict(zip(jobs, _map(solve, jobs, config.threads)))
    out = []
    for eps in config.eps_list:
        rs = [res[(eps, h)] for h in config.h_list]
        bad = [f"eps={eps:g} h={h:g}: stalled after {r.iterations} iterations" for h, r in zip(config.h_list, rs) if not r.converged]
        ext = _extrapolate(config.h_list, [r.values for r in rs])
        out.append(FattenedRun(eps, list(config.h_list), rs, ext, bad))
    return out


def run_transfer_defects(
    config: ExperimentConfig, limit: LimitRun | None = None, fattened: list[FattenedRun] | None = None
) -> list[TransferDefectReport]:
    """Defects at the finest surface and volume meshes for every eps."""
    s = config.validate()
    hs = config.surface_h_list[-1]
    surf = mesh_surface(s, hs)
    f2 = assemble_surface(surf)
    e2 = limit.results[-1] if limit is not None else smallest_eigenpairs(f2, config.m, config.tol, config.seed)
    h = config.h_list[-1]
    known = {f.eps: f.results[-1] for f in fattened or []}

    def one(eps):
        vol = fattened_mesh(s, eps, h, config.n_z(h))
        f3 = assemble_volume(vol)
        e3 = known.get(eps) or smallest_eigenpairs(f3, config.m, config.tol, config.seed)
        maps = build_transfer(surf, vol, eps)
        rep = measure_defects(f2, f3, maps, config.Lambda, e3, e2)
        rep.sandwich = _sandwich(rep, e2.values, e3.values, config)
        return rep

    return _map(one, config.eps_list, config.threads)


def _sandwich(rep: TransferDefectReport, lam2, lam3, config) -> bool:
    """Discrete min-max sandwich: |lam_n - lam_n^eps| <= max(dJ lam^eps, dK lam) for lam < Lambda."""
    ok = True
    for n in range(min(rep.dim2, rep.dim3)):
        a, b = lam2[n], lam3[n]
        bound = max(rep.combined_J(b) * b, rep.combined_K(a) * a) + 10 * config.tol * (1 + max(a, b))
        ok &= abs(a - b) <= bound
    return bool(ok)


# ---------------------------------------------------------------------------
# convergence report
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    config: ExperimentConfig
    lambda_limit: np.ndarray  # reference used for gaps (oracle if available)
    lambda_limit_fem: np.ndarray
    eps: list[float]
    lambda_eps: np.ndarray  # (n_eps, m), h-extrapolated
    gaps: np.ndarray  # (n_eps, m), |lambda_eps - lambda_limit|
    alpha: np.ndarray  # (m,)
    c: np.ndarray  # (m,)
    warnings: list[str]
    defects: list[TransferDefectReport]
    runtime: dict
    failures: list[str] = field(default_factory=list)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "lambda_limit", "eps", "lambda_eps", "gap", "alpha_fit"])
        for n in range(len(self.lambda_limit)):
            for i, e in enumerate(self.eps):
                w.writerow(
                    [
                        n,
                        _num(self.lambda_limit[n]),
                        f"{e:.6g}",
                        _num(self.lambda_eps[i, n]),
                        _num(self.gaps[i, n]),
                        "nan" if math.isnan(self.alpha[n]) else f"{self.alpha[n]:.6f}",
                    ]
                )
        return buf.getvalue()

    def to_dict(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        return {
            "config": asdict(self.config),
            "lambda_limit": self.lambda_limit.tolist(),
            "lambda_limit_fem": self.lambda_limit_fem.tolist(),
            "eps": self.eps,
            "lambda_eps": self.lambda_eps.tolist(),
            "gaps": self.gaps.tolist(),
            "alpha": [clean(float(a)) for a in self.alpha],
            "c": [clean(float(a)) for a in self.c],
            "warnings": self.warnings,
            "failures": self.failures,
            "defects": [
                {
                    "eps": r.eps,
                    "Lambda": r.Lambda,
                    "dim": r.dim3,
                    "dJ_iso": r.dJ_iso,
                    "dJ_en": r.dJ_en,
                    "dK_iso": r.dK_iso,
                    "dK_en": r.dK_en,
                    "rayleigh_ok": r.rayleigh_ok,
                    "sandwich_ok": getattr(r, "sandwich", None),
                }
                for r in self.defects
            ],
            "runtime": self.runtime,
        }


def run_convergence(config: ExperimentConfig, with_defects: bool = True) -> ConvergenceReport:
    t0 = time.time()
    limit = run_limit(config)
    t1 = time.time()
    fat = run_fattened(config)
    t2 = time.time()
    ref = limit.oracle if limit.oracle is not None else limit.extrapolated
    lam_eps = np.array([f.extrapolated for f in fat])
    gaps = np.abs(lam_eps - ref[None, :])
    alpha = np.full(config.m, math.nan)
    c = np.full(config.m, math.nan)
    warnings = []
    for n in range(config.m):
        g = gaps[:, n]
        if np.all(g > 10 * config.tol * (1 + ref[n])):
            alpha[n], c[n] = fit_rate(config.eps_list, lam_eps[:, n] - ref[n])
        if np.any(np.diff(g) >= 0) and ref[n] > 0:
            warnings.append(f"WARN n={n}: gap sequence not decreasing: {np.round(g, 6).tolist()}")
    defects = run_transfer_defects(config, limit, fat) if with_defects else []
    t3 = time.time()
    runtime = {
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0)),
        "limit_s": round(t1 - t0, 3),
        "fattened_s": round(t2 - t1, 3),
        "defects_s": round(t3 - t2, 3),
        "iterations": {f"{f.eps:g}": [r.iterations for r in f.results] for f in fat},
    }
    failures = [msg for f in fat for msg in f.failures]
    return ConvergenceReport(
        config, ref, limit.extrapolated, list(config.eps_list), lam_eps, gaps, alpha, c, warnings, defects, runtime, failures
    )


def _num(x: float, digits: int = 9) -> str:
    s = f"{x:.{digits}f}"
    return s[1:] if s.startswith("-") and float(s) == 0 else s


def write_report(report: ConvergenceReport, out: Path) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / "converge.csv",
        "json": out / "converge.json",
        "defects": out / "defects.csv",
        "svg_lambda": out / "lambda_vs_eps.svg",
        "svg_defects": out / "defects_loglog.svg",
    }
    paths["csv"].write_text(report.csv_text())
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2))
    paths["defects"].write_text(defects_csv(report.defects))
    _plot(report, paths["svg_lambda"], paths["svg_defects"])
    return paths


def _plot(report: ConvergenceReport, p_lam: Path, p_def: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "openbook"
    eps = np.array(report.eps)
    fig, ax = plt.subplots(figsize=(6, 4))
    for n in range(len(report.lambda_limit)):
        (line,) = ax.plot(eps, report.lambda_eps[:, n], "o-", label=f"n={n}")
        ax.axhline(report.lambda_limit[n], color=line.get_color(), ls=":", lw=0.8)
    ax.set_xlabel("eps")
    ax.set_ylabel("lambda_n(eps)")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(p_lam, metadata={"Date": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    if report.defects:
        de = np.array([r.eps for r in report.defects])
        for name in ("dJ_iso", "dJ_en", "dK_iso", "dK_en"):
            v = np.array([getattr(r, name) for r in report.defects])
            if np.all(v > 0):
                ax.loglog(de, v, "o-", label=name)
        ax.legend()
    ax.set_xlabel("eps")
    ax.set_ylabel("defect")
    fig.tight_layout()
    fig.savefig(p_def, metadata={"Date": None})
    plt.close(fig)


def limit_csv(run: LimitRun) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n"] + [f"h={h:g}" for h in run.h_list] + ["extrapolated", "oracle"])
    for n in range(len(run.extrapolated)):
        row = [n] + [f"{r.values[n]:.9f}" for r in run.results] + [f"{run.extrapolated[n]:.9f}"]
        row.append("" if run.oracle is None else f"{run.oracle[n]:.9f}")
        w.writerow(row)
    return buf.getvalue()


def fattened_csv(runs: list[FattenedRun]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "h", "n", "lambda"])
    for f in runs:
        for h, r in zip(f.h_list, f.results):
            for n, v in enumerate(r.values):
                w.writerow([f"{f.eps:g}", f"{h:g}", n, f"{v:.9f}"])
        for n, v in enumerate(f.extrapolated):
            w.writerow([f"{f.eps:g}", "extrapolated", n, f"{v:.9f}"])
    return buf.getvalue()
