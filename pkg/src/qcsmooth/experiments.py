"""End-to-end runs: the R-sweep comparing the classical and quantum constants,
the occupation-time scaling study, coherent-state probes, and report files.
"""
from __future__ import annotations

import csv
import json
import math
import os
import platform
import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classical_flow import SearchConfig, batch_occupation_times, classical_constant, sample_energy_shell
from .potential import ConfigurationError, PhasePoint, PotentialModel
from .quantum import (band_report, build_hamiltonian, eigendecompose, gram_operator, quantum_constant)
from .wavepacket import ProbeRejected, probe_lower_bound
from .weyl import build_grid

ILL_CONDITIONED = 1e-4
FIT_SLACK = 1e-12


@dataclass
class RunConfig:
    potential: PotentialModel = field(default_factory=PotentialModel)
    n: int = 512
    L: float = 24.0
    T: float = 2 * math.pi
    nu: float = 1.0
    R_list: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    search: SearchConfig = field(default_factory=lambda: SearchConfig(E_max=200.0))
    nq: int = 64
    method: str = "power_iteration"
    probes: list = field(default_factory=list)
    escape_energies: list = field(default_factory=lambda: [10.0, 100.0, 1000.0, 10000.0])
    escape_radius: float = 1.0
    escape_samples: int = 64
    assumption_box: list = field(default_factory=lambda: [10.0, 201])
    assumption_order: int = 2
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.nu > 0.5:
            raise ConfigurationError(f"nu must exceed 1/2, got {self.nu}")
        R = [float(r) for r in self.R_list]
        if any(r < 1 for r in R):
            raise ConfigurationError(f"R values must be >= 1, got {R}")
        if any(b <= a for a, b in zip(R, R[1:])):
            raise ConfigurationError(f"R_list must be strictly ascending, got {R}")
        self.R_list = R
        if not self.T >= 0 or not math.isfinite(self.T):
            raise ConfigurationError(f"horizon T must be finite and non-negative, got {self.T}")
        if self.nq < 16:
            raise ConfigurationError("quadrature needs at least 16 nodes")
        if self.method not in ("power_iteration", "dense"):
            raise ConfigurationError(f"unknown eigenvalue method {self.method!r}")
        build_grid(self.potential.dimension, self.n, self.L)
        for p in self.probes:
            _probe_center(p, self.potential.dimension)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("run config must be a JSON object")
        try:
            return cls._from_dict(dict(data))
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid run config: {exc}") from exc

    @classmethod
    def _from_dict(cls, data: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__) | {"grid"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        grid = data.pop("grid", {})
        for key in grid:
            if key not in ("n", "L"):
                raise ConfigurationError(f"unknown grid key {key!r}")
        data.update(grid)
        if "potential" in data:
            data["potential"] = PotentialModel.from_dict(data["potential"])
        search = dict(data.pop("search", {}))
        search.setdefault("E_max", 200.0)
        if "seed" in data:
            search.setdefault("seed", int(data["seed"]))
        data["search"] = SearchConfig.from_dict(search)
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["potential"] = self.potential.to_dict()
        out["search"] = asdict(self.search)
        out.pop("n")
        out.pop("L")
        out["grid"] = {"n": self.n, "L": self.L}
        return out

    def with_overrides(self, grid_n=None, seed=None) -> "RunConfig":
        data = self.to_dict()
        if grid_n is not None:
            data["grid"]["n"] = int(grid_n)
        if seed is not None:
            data["seed"] = int(seed)
            data["search"]["seed"] = int(seed)
        return RunConfig.from_dict(data)


def _probe_center(p, d) -> PhasePoint:
    if isinstance(p, str):
        if p != "argmax":
            raise ConfigurationError(f"probe {p!r}: expected a center or 'argmax'")
        return None
    if isinstance(p, dict) and "energy" in p:
        if set(p) - {"energy", "count"} or not float(p["energy"]) >= 0 or int(p.get("count", 1)) < 1:
            raise ConfigurationError(f"probe {p!r}: expected {{'energy': E >= 0, 'count': k >= 1}}")
        return None
    try:
        c = PhasePoint(np.asarray(p["x"], float), np.asarray(p["xi"], float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"probe {p!r}: expected {{'x': [...], 'xi': [...]}}") from exc
    if c.dimension != d:
        raise ConfigurationError(f"probe {p!r} has dimension {c.dimension}, potential has {d}")
    return c


# ---------------------------------------------------------------------------
# R-sweep


@dataclass
class ConstantsRow:
    R: float
    C0: float
    Q0: float
    band_ok: bool
    ill_conditioned: bool = False
    argmax: PhasePoint | None = None
    argmax_energy: float = float("nan")
    cutoff_saturated: bool = False
    refinement_converged: bool = True
    method: str = ""
    iterations: int = 0
    top_band_mass: float = 0.0
    Q0_power: float = float("nan")

    @property
    def ratio(self) -> float:
        return self.Q0 / self.C0 if self.C0 > 0 else float("nan")

    @property
    def deviation(self) -> float:
        return abs(self.ratio - 1.0)

    @property
    def included(self) -> bool:
        return self.band_ok and not self.ill_conditioned


@dataclass
class ConstantsReport:
    rows: list = field(default_factory=list)
    c: float = float("nan")
    inequalities_pass: bool = False
    notes: list = field(default_factory=list)

    @property
    def excluded(self) -> list:
        return [r.R for r in self.rows if not r.included]

    @property
    def classical_monotone(self) -> bool:
        C = [r.C0 for r in self.rows]
        return all(b >= a * (1 - 1e-9) for a, b in zip(C, C[1:]))

    @property
    def deviation_monotone(self) -> bool:
        dev = [r.deviation for r in self.rows if r.included]
        return all(b <= a for a, b in zip(dev, dev[1:]))

    @property
    def all_pass(self) -> bool:
        return bool(self.rows) and self.inequalities_pass and not self.excluded and self.classical_monotone


def fit_correction(rows) -> float:
    """Smallest c >= 0 with C0/(1+c/R) <= Q0 <= C0 (1+c/R) on every row."""
    if not rows:
        return float("nan")
    c = 0.0
    for r in rows:
        c = max(c, r.R * max(r.C0 / r.Q0 - 1.0, r.Q0 / r.C0 - 1.0))
    return c


def inequalities_hold(rows, c: float, slack: float = FIT_SLACK) -> bool:
    if not rows or not math.isfinite(c):
        return False
    for r in rows:
        k = 1.0 + c / r.R
        if not (r.C0 / k <= r.Q0 * (1 + slack) and r.Q0 <= r.C0 * k * (1 + slack)):
            return False
    return True


def setup_quantum(config: RunConfig):
    model = config.potential
    grid = build_grid(model.dimension, config.n, config.L)
    if max(config.R_list) > config.L / 2:
        raise ConfigurationError(f"largest R={max(config.R_list):g} exceeds half the box half-width L/2={config.L / 2:g}")
    if max(config.R_list) ** 2 > grid.band_energy:
        raise ConfigurationError("largest R^2 exceeds the resolved kinetic band; refine the grid")
    spec = eigendecompose(build_hamiltonian(model, grid))
    return model, grid, spec


def run_correspondence(config: RunConfig, log=None) -> ConstantsReport:
    """Classical and quantum constants for every R, with the fitted correction c.

    ``Q0`` is the dense top eigenvalue of the compressed Gram operator; with
    ``method="power_iteration"`` the power-iteration value is computed as a
    cross-check and stored as ``Q0_power``. Each classical search is seeded with the previous R's argmax, so the
    computed sequence is non-decreasing whenever the true one is.
    """
    model, grid, spec = setup_quantum(config)
    report = ConstantsReport()
    seed_pts = None
    for R in config.R_list:
        est = classical_constant(model, config.T, config.nu, R, config.search, initial_points=seed_pts)
        seed_pts = est.argmax.as_array()[None, :]
        G = gram_operator(model, grid, spec, config.T, config.nu, R, config.nq)
        q = quantum_constant(G, "dense_eig")
        q_power, iterations = float("nan"), 0
        if config.method == "power_iteration":
            qp = quantum_constant(G, "power_iteration", seed=config.seed)
            q_power, iterations = qp.value, qp.iterations
            if qp.note:
                report.notes.append(f"R={R:g}: {qp.note}")
            gap = abs(qp.value - q.value) / max(q.value, 1e-300)
            if gap > 1e-8:
                report.notes.append(f"R={R:g}: power iteration differs from dense by {gap:.2e}")
        band = band_report(spec, q.maximizer) if q.value > 0 else None
        ill = min(est.value, q.value) <= ILL_CONDITIONED * R
        row = ConstantsRow(R, est.value, q.value, band_ok=bool(band and band.band_ok), ill_conditioned=bool(ill),
                           argmax=est.argmax, argmax_energy=est.argmax_energy,
                           cutoff_saturated=est.cutoff_saturated, refinement_converged=est.refinement_converged,
                           method=config.method, iterations=iterations,
                           top_band_mass=band.top_fraction_mass if band else float("nan"), Q0_power=q_power)
        if not row.band_ok:
            warnings.warn(f"R={R:g}: quantum maximiser reaches the top of the resolved band; row excluded")
            report.notes.append(f"R={R:g}: band check failed; excluded from fit")
        if ill:
            report.notes.append(f"R={R:g}: constants below {ILL_CONDITIONED:g}*R; ratio ill-conditioned, excluded")
        if est.cutoff_saturated:
            report.notes.append(f"R={R:g}: classical argmax at the energy cutoff; raise E_max")
        report.rows.append(row)
        if log:
            log(f"R={R:g}  C0={est.value:.10g}  Q0={q.value:.10g}  ratio={row.ratio:.8f}  band_ok={row.band_ok}")
    included = [r for r in report.rows if r.included]
    report.c = fit_correction(included)
    report.inequalities_pass = inequalities_hold(included, report.c)
    return report


# ---------------------------------------------------------------------------
# Occupation-time scaling


@dataclass
class EscapeReport:
    energies: list
    times: list
    r: float
    slope: float = float("nan")
    intercept: float = float("nan")
    C_prime: float = float("nan")
    spread: float = float("nan")
    notes: list = field(default_factory=list)


def run_escape_scaling(config: RunConfig, h: float | None = None) -> EscapeReport:
    """Longest stay in B_r over shell samples, against energy, with a log-log fit.

    The step is refined at high energy, ``h_E = min(h, r / (50 sqrt(2E)))``,
    so that a passage through the ball spans at least ~100 steps.
    """
    E = [float(e) for e in config.escape_energies]
    if len(E) < 2 or max(E) / min(E) < 100:
        raise ConfigurationError("escape energies must span at least two decades")
    r = float(config.escape_radius)
    model = config.potential
    h = h or config.search.h
    if r == 0:
        rep = EscapeReport(E, [0.0] * len(E), r)
        rep.notes.append("r = 0: occupation times vanish; fit skipped")
        return rep
    rng = np.random.default_rng(config.seed)
    times = []
    for e in E:
        pts = sample_energy_shell(model, e, config.escape_samples, rng)
        d = model.dimension
        step = min(h, r / (50.0 * math.sqrt(2.0 * e)))
        t = batch_occupation_times(model, pts[:, :d], pts[:, d:], config.T, r, step, drift_tol=None)
        times.append(float(np.max(t)))
    rep = EscapeReport(E, times, r)
    if min(times) <= 0:
        rep.notes.append("some shells never enter B_r within T; fit skipped")
        return rep
    slope, intercept = np.polyfit(np.log(E), np.log(times), 1)
    cp = [t * math.sqrt(e) / r for t, e in zip(times, E)]
    rep.slope, rep.intercept = float(slope), float(intercept)
    rep.C_prime = float(max(cp))
    rep.spread = float(max(cp) / min(cp))
    return rep


# ---------------------------------------------------------------------------
# Probes


@dataclass
class ProbeRow:
    center: list
    R: float
    S: float = float("nan")
    A: float = float("nan")
    A_smoothed: float = float("nan")
    Q0: float = float("nan")
    status: str = "ok"

    @property
    def ratio(self) -> float:
        return self.S / self.A if self.A else float("nan")

    @property
    def below_constant(self) -> bool:
        return bool(self.S <= self.Q0 + 1e-9)


def run_probes(config: RunConfig, correspondence: ConstantsReport | None = None) -> list:
    """ProbeReport rows for every declared centre and every R.

    The entry ``"argmax"`` stands for the classical argmax of each R, taken
    from ``correspondence`` (computed if not supplied); ``{"energy": E,
    "count": k}`` draws k centres on the shell p = E with the run seed.
    """
    if not config.probes:
        return []
    model, grid, spec = setup_quantum(config)
    need_argmax = any(p == "argmax" for p in config.probes)
    if need_argmax and correspondence is None:
        correspondence = run_correspondence(config)
    by_R = {r.R: r for r in correspondence.rows} if correspondence else {}
    rng = np.random.default_rng(config.seed)
    entries = []
    for p in config.probes:
        if isinstance(p, dict) and "energy" in p:
            pts = sample_energy_shell(model, float(p["energy"]), int(p.get("count", 1)), rng)
            d = model.dimension
            entries += [PhasePoint(q[:d], q[d:]) for q in pts]
        else:
            entries.append(p)
    rows = []
    for R in config.R_list:
        if R in by_R:
            Q0 = by_R[R].Q0
        else:
            Q0 = quantum_constant(gram_operator(model, grid, spec, config.T, config.nu, R, config.nq),
                                  "dense_eig").value
        for p in entries:
            if isinstance(p, PhasePoint):
                center = p
            else:
                center = by_R[R].argmax if p == "argmax" else _probe_center(p, model.dimension)
            label = [float(v) for v in center.as_array()]
            try:
                rep = probe_lower_bound(model, grid, spec, center, config.T, config.nu, R, config.nq,
                                        quantum_value=Q0)
            except ProbeRejected as exc:
                rows.append(ProbeRow(label, R, Q0=Q0, status=f"rejected: {exc}"))
                continue
            rows.append(ProbeRow(label, R, rep.S, rep.A, rep.A_smoothed, Q0))
    return rows


# ---------------------------------------------------------------------------
# Output


@contextmanager
def locked_output(outdir):
    """Create ``outdir`` and hold an exclusive lock file for the duration."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".qcsmooth.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise RuntimeError(f"{out}: output directory is in use (remove {lock} if stale)") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _versions() -> dict:
    import matplotlib
    import scipy
    from . import __version__
    return {"qcsmooth": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "python": platform.python_version()}


def _f(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def report_dict(report: ConstantsReport | None, config: RunConfig | None = None,
                escape: EscapeReport | None = None, probes: list | None = None) -> dict:
    out = {"config": config.to_dict() if config else None, "seed": config.seed if config else None,
           "versions": _versions()}
    if report is not None:
        out["constants"] = {
            "rows": [{"R": r.R, "C0": r.C0, "Q0": r.Q0, "ratio": r.ratio, "band_ok": r.band_ok,
                      "ill_conditioned": r.ill_conditioned,
                      "argmax": list(map(float, r.argmax.as_array())) if r.argmax is not None else None,
                      "argmax_energy": r.argmax_energy, "cutoff_saturated": r.cutoff_saturated,
                      "method": r.method, "iterations": r.iterations, "top_band_mass": r.top_band_mass,
                      "Q0_power_iteration": r.Q0_power,
                      "power_gap": abs(r.Q0_power - r.Q0) / r.Q0 if r.Q0 > 0 else None}
                     for r in report.rows],
            "c": report.c,
            "inequalities_pass": report.inequalities_pass,
            "classical_monotone": report.classical_monotone,
            "deviation_monotone": report.deviation_monotone,
            "excluded": report.excluded,
            "all_pass": report.all_pass,
            "notes": report.notes,
        }
    if escape is not None:
        out["escape"] = asdict(escape)
    if probes is not None:
        out["probes"] = [dict(asdict(p), ratio=p.ratio, below_constant=p.below_constant) for p in probes]
    return _jsonable(out)


def emit_report(report: ConstantsReport | None, outdir, config: RunConfig | None = None,
                escape: EscapeReport | None = None, probes: list | None = None, plots: bool = True) -> list:
    """Write constants.csv, report.json and SVG plots; returns the written paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if report is not None:
        path = out / "constants.csv"
        _write_csv(path, ["R", "C0", "Q0", "ratio", "band_ok"],
                   [[_f(r.R), _f(r.C0), _f(r.Q0), _f(r.ratio), str(r.band_ok).lower()] for r in report.rows])
        written.append(path)
    if escape is not None:
        path = out / "escape.csv"
        _write_csv(path, ["E", "occupation_time", "C_prime"],
                   [[_f(e), _f(t), _f(t * math.sqrt(e) / escape.r) if escape.r else "nan"]
                    for e, t in zip(escape.energies, escape.times)])
        written.append(path)
    if probes is not None:
        path = out / "probes.csv"
        _write_csv(path, ["center", "R", "S", "A", "A_smoothed", "S_over_A", "Q0", "S_le_Q0", "status"],
                   [[" ".join(_f(c) for c in p.center), _f(p.R), _f(p.S), _f(p.A), _f(p.A_smoothed),
                     _f(p.ratio), _f(p.Q0), str(p.below_constant).lower(), p.status] for p in probes])
        written.append(path)
    path = out / "report.json"
    try:
        path.write_text(json.dumps(report_dict(report, config, escape, probes), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc
    written.append(path)
    if plots:
        written += _plots(out, report, escape)
    return written


def _plots(out: Path, report, escape) -> list:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "qcsmooth", "svg.fonttype": "none"}):
        if report is not None and report.rows:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            R = [r.R for r in report.rows]
            ax.plot(R, [r.ratio for r in report.rows], "o-", label="Q0 / C0")
            if math.isfinite(report.c):
                Rs = np.geomspace(min(R), max(R), 50)
                ax.plot(Rs, 1 + report.c / Rs, "k--", lw=0.8, label="1 + c/R")
                ax.plot(Rs, 1 / (1 + report.c / Rs), "k:", lw=0.8, label="1 / (1 + c/R)")
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel("R")
            ax.set_ylabel("ratio")
            ax.legend(frameon=False)
            fig.tight_layout()
            p = out / "ratio_vs_R.svg"
            fig.savefig(p, metadata={"Date": None})
            plt.close(fig)
            paths.append(p)
        if escape is not None and escape.r > 0 and min(escape.times) > 0:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            ax.loglog(escape.energies, escape.times, "o", label="max occupation time")
            if math.isfinite(escape.slope):
                Es = np.geomspace(min(escape.energies), max(escape.energies), 50)
                ax.loglog(Es, np.exp(escape.intercept) * Es ** escape.slope, "k--", lw=0.8,
                          label=f"slope {escape.slope:.3f}")
            ax.set_xlabel("E")
            ax.set_ylabel(f"time in B_{escape.r:g}")
            ax.legend(frameon=False)
            fig.tight_layout()
            p = out / "occupation_vs_E.svg"
            fig.savefig(p, metadata={"Date": None})
            plt.close(fig)
            paths.append(p)
    return paths
