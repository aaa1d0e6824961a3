"""Parameter studies and emissivity/reflectivity calibration.

The workflow: scan (epsilon, R) at the observed melting power, follow the
zero of peak_T - T_melt through the grid (the neutral line), then rank the
pairs on that line against measured evaporation rates.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import CaseConfig
from .fem import SolverError, solve_steady
from .postprocess import RatePoint

WORKERS_ENV = "TLESIM_WORKERS"
SWEEP_PARAMETERS = ("kappa", "rho", "c", "omega", "epsilon", "R")
DEFAULT_EPSILONS = tuple(round(0.05 * k, 2) for k in range(1, 13))  # 0.05 .. 0.60
DEFAULT_REFLECTIVITIES = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))  # 0.50 .. 0.95


class CalibrationError(RuntimeError):
    pass


class NoSignChange(CalibrationError):
    pass


class NoBracket(CalibrationError):
    pass


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# ----------------------------------------------------------- solve fan-out


def _steady_point(case: CaseConfig) -> RatePoint:
    res = solve_steady(case.problem(), case.controls)
    return RatePoint(case.laser.power, res.mass_rate, res.peak_temperature,
                     res.peak_temperature >= case.material.melting_point)


def _safe_point(case):
    try:
        return _steady_point(case)
    except (SolverError, ValueError) as exc:
        return exc


def solve_many(cases, workers: int | None = None) -> list:
    """Steady RatePoints for independent cases, in input order.

    Failed solves come back as the exception instance.
    """
    cases = list(cases)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(cases) <= 1:
        return [_safe_point(c) for c in cases]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_safe_point, cases))


# ------------------------------------------------------------------ sweeps


@dataclass
class SweepPoint:
    value: float
    peak_T: float
    mass_rate: float


def sensitivity_sweep(case: CaseConfig, parameter: str, values, workers=None) -> list:
    """One steady solve per value of ``parameter``, everything else fixed."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"parameter must be one of {SWEEP_PARAMETERS}")
    values = [float(v) for v in values]
    results = solve_many([case.vary(parameter, v) for v in values], workers)
    out = []
    for v, r in zip(values, results):
        if isinstance(r, Exception):
            raise CalibrationError(f"{parameter} = {v:g}: {r}") from r
        out.append(SweepPoint(v, r.peak_T, r.mass_rate))
    return out


# ------------------------------------------------------------ (eps, R) scan


@dataclass
class ScanGrid:
    epsilon_values: np.ndarray
    reflectivity_values: np.ndarray
    delta_T: np.ndarray  # (n_eps, n_R), NaN where the solve failed
    melting_point: float
    power: float
    errors: dict = field(default_factory=dict)  # (i, j) -> message

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epsilon \\ R"] + [repr(float(r)) for r in self.reflectivity_values])
            for e, row in zip(self.epsilon_values, self.delta_T):
                w.writerow([repr(float(e))] + [repr(float(v)) for v in row])


def scan_epsilon_reflectivity(case: CaseConfig, epsilon_values=DEFAULT_EPSILONS,
                              reflectivity_values=DEFAULT_REFLECTIVITIES, workers=None) -> ScanGrid:
    eps = np.array(sorted(float(e) for e in epsilon_values))
    refl = np.array(sorted(float(r) for r in reflectivity_values))
    if not len(eps) or not len(refl):
        raise ValueError("scan grid must be non-empty")
    cells = [(i, j) for i in range(len(eps)) for j in range(len(refl))]
    results = solve_many([case.with_pair(eps[i], refl[j]) for i, j in cells], workers)
    dT = np.full((len(eps), len(refl)), np.nan)
    errors = {}
    T_melt = case.material.melting_point
    for (i, j), r in zip(cells, results):
        if isinstance(r, Exception):
            errors[(i, j)] = str(r)
        else:
            dT[i, j] = r.peak_T - T_melt
    return ScanGrid(eps, refl, dT, T_melt, case.laser.power, errors)


def _bracketed_root(f, lo, hi, f_lo, f_hi, tol, max_iter=60):
    """Root of a monotone f on [lo, hi] with |f| <= tol.

    Illinois false position; a bisection step is forced whenever the bracket
    fails to halve, so the worst case is plain bisection. Returns
    (x, f(x), history of brackets).
    """
    history = [(lo, hi)]
    side = 0
    width = hi - lo
    x, fx = lo, f_lo
    for k in range(max_iter):
        if abs(f_lo) <= tol:
            return lo, f_lo, history
        if abs(f_hi) <= tol:
            return hi, f_hi, history
        if k % 3 == 2 and hi - lo > 0.5 * width:
            x = 0.5 * (lo + hi)
        else:
            x = hi - f_hi * (hi - lo) / (f_hi - f_lo)
            if not lo < x < hi:
                x = 0.5 * (lo + hi)
        if k % 3 == 2:
            width = hi - lo
        fx = f(x)
        if abs(fx) <= tol:
            return x, fx, history
        if (fx > 0) == (f_lo > 0):
            lo, f_lo = x, fx
            if side == -1:
                f_hi *= 0.5
            side = -1
        else:
            hi, f_hi = x, fx
            if side == 1:
                f_lo *= 0.5
            side = 1
        history.append((lo, hi))
    raise CalibrationError(f"root search did not reach |f| <= {tol} (last {fx:.3g} at {x:.6g})")


@dataclass
class NeutralPoint:
    epsilon: float
    reflectivity: float
    delta_T: float
    evaluations: int = 0

    @property
    def pair(self):
        return (self.epsilon, self.reflectivity)


def extract_neutral_line(grid: ScanGrid, evaluate=None, tol: float = 2.0):
    """(epsilon, R) pairs where peak_T equals the melting point.

    ``evaluate(epsilon, R)`` returns peak_T - T_melt from a fresh solve and
    refines each bracketing grid cell; without it the zero is taken from
    linear interpolation of the grid. Rows without a sign change are
    skipped; :class:`NoSignChange` is raised if no row has one.
    """
    line = []
    for e, row in zip(grid.epsilon_values, grid.delta_T):
        ok = np.flatnonzero(np.isfinite(row))
        r_vals, d_vals = grid.reflectivity_values[ok], row[ok]
        bracket = None
        for k in range(len(d_vals) - 1):
            if d_vals[k] == 0:
                bracket = (k, k)
                break
            if d_vals[k] * d_vals[k + 1] < 0:
                bracket = (k, k + 1)
                break
        if bracket is None:
            if len(d_vals) and d_vals[-1] == 0:
                line.append(NeutralPoint(float(e), float(r_vals[-1]), 0.0))
            continue
        a, b = bracket
        if a == b:
            line.append(NeutralPoint(float(e), float(r_vals[a]), 0.0))
            continue
        if evaluate is None:
            R = r_vals[a] - d_vals[a] * (r_vals[b] - r_vals[a]) / (d_vals[b] - d_vals[a])
            line.append(NeutralPoint(float(e), float(R), 0.0))
            continue
        calls = [0]

        def f(R, e=e):
            calls[0] += 1
            return evaluate(float(e), float(R))

        R, dT, _ = _bracketed_root(f, r_vals[a], r_vals[b], d_vals[a], d_vals[b], tol)
        line.append(NeutralPoint(float(e), float(R), float(dT), calls[0]))
    if not line:
        raise NoSignChange("no epsilon row crosses the melting point; widen the R range")
    return line


def neutral_line_evaluator(case: CaseConfig):
    """Fresh-solve evaluator of peak_T - T_melt for :func:`extract_neutral_line`."""
    T_melt = case.material.melting_point

    def evaluate(epsilon, R):
        return _steady_point(case.with_pair(epsilon, R)).peak_T - T_melt

    return evaluate


# ----------------------------------------------------------- melting power


@dataclass
class MeltingPowerResult:
    power: float
    peak_T: float
    history: list  # bracket (P_lo, P_hi) per iteration


def find_melting_power(case: CaseConfig, T_target: float | None = None, P_max: float = 1000.0,
                       tol: float = 5.0) -> MeltingPowerResult:
    """Laser power at which the steady peak temperature equals ``T_target``."""
    T_target = case.material.melting_point if T_target is None else T_target

    def f(P):
        return _steady_point(case.vary("power", P)).peak_T - T_target

    f_lo = case.chamber.ambient_temperature - T_target  # P = 0 is at ambient
    if abs(f_lo) <= tol:
        return MeltingPowerResult(0.0, case.chamber.ambient_temperature, [(0.0, 0.0)])
    if f_lo > 0:
        raise NoBracket("target temperature is below ambient")
    f_hi = f(P_max)
    if f_hi < -tol:
        raise NoBracket(f"peak temperature at P_max = {P_max:g} W is still {-f_hi:.0f} K below target")
    P, dT, history = _bracketed_root(f, 0.0, P_max, f_lo, f_hi, tol)
    return MeltingPowerResult(float(P), float(dT + T_target), history)


# ------------------------------------------------------------ rate fitting


@dataclass
class ExperimentSeries:
    element: str
    diameter: float  # m
    wavelength: float  # m
    powers: np.ndarray  # W
    rates: np.ndarray  # kg/s
    sigmas: np.ndarray | None = None

    def __post_init__(self):
        self.powers = np.asarray(self.powers, float)
        self.rates = np.asarray(self.rates, float)
        if len(self.powers) != len(self.rates):
            raise ValueError("powers and rates differ in length")
        if np.any(np.diff(self.powers) <= 0):
            raise ValueError("powers must be strictly ascending")
        if np.any(self.rates < 0):
            raise ValueError("rates must be >= 0")


def load_experiment_csv(path) -> ExperimentSeries:
    """Read ``# key: value`` metadata lines and a ``power_W,rate_kg_per_s[,sigma_kg_per_s]`` table."""
    meta, rows, header = {}, [], None
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, _, value = s[1:].partition(":")
            meta[key.strip()] = value.strip()
            continue
        parts = [p.strip() for p in s.split(",")]
        if header is None:
            header = parts
            if header[:2] != ["power_W", "rate_kg_per_s"]:
                raise ValueError(f"{path}:{n}: header must start with power_W,rate_kg_per_s")
            continue
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ValueError(f"{path}:{n}: non-numeric value in {s!r}") from None
    if header is None:
        raise ValueError(f"{path}: no data header")
    for key in ("element", "diameter_mm", "wavelength_nm"):
        if key not in meta:
            raise ValueError(f"{path}: missing metadata line '# {key}: ...'")
    data = np.array(rows, float).reshape(-1, len(header))
    sig = data[:, 2] if len(header) > 2 else None
    return ExperimentSeries(meta["element"], float(meta["diameter_mm"]) * 1e-3,
                            float(meta["wavelength_nm"]) * 1e-9, data[:, 0], data[:, 1], sig)


def write_experiment_csv(series: ExperimentSeries, path) -> None:
    lines = [f"# element: {series.element}", f"# diameter_mm: {series.diameter * 1e3!r}",
             f"# wavelength_nm: {series.wavelength * 1e9!r}"]
    if series.sigmas is None:
        lines.append("power_W,rate_kg_per_s")
        lines += [f"{p!r},{r!r}" for p, r in zip(series.powers.tolist(), series.rates.tolist())]
    else:
        lines.append("power_W,rate_kg_per_s,sigma_kg_per_s")
        lines += [f"{p!r},{r!r},{s!r}" for p, r, s in
                  zip(series.powers.tolist(), series.rates.tolist(), series.sigmas.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class FitResult:
    epsilon: float
    reflectivity: float
    residual: float  # mean squared log10 misfit
    simulated: np.ndarray  # kg/s at the data powers


def simulate_rate_curve(case: CaseConfig, epsilon: float, reflectivity: float, powers, workers=None):
    base = case.with_pair(epsilon, reflectivity)
    results = solve_many([base.vary("power", float(P)) for P in powers], workers)
    return np.array([np.nan if isinstance(r, Exception) else r.mass_rate for r in results])


def log_residual(simulated, measured) -> float:
    simulated, measured = np.asarray(simulated, float), np.asarray(measured, float)
    ok = (simulated > 0) & (measured > 0) & np.isfinite(simulated)
    if not ok.any():
        return math.inf
    return float(np.mean((np.log10(simulated[ok]) - np.log10(measured[ok])) ** 2))


def rank_candidates(candidates, curves, data: ExperimentSeries) -> list:
    """Rank pre-simulated curves against measured rates (ascending residual)."""
    fits = [FitResult(float(e), float(r), log_residual(c, data.rates), np.asarray(c))
            for (e, r), c in zip(candidates, curves)]
    return sorted(fits, key=lambda f: (f.residual, f.epsilon))


def fit_rate_curves(candidates, data: ExperimentSeries, case: CaseConfig, workers=None) -> list:
    """Simulate each (epsilon, R) candidate at the measured powers and rank by log misfit."""
    candidates = [tuple(c.pair) if isinstance(c, NeutralPoint) else tuple(c) for c in candidates]
    if not candidates:
        raise ValueError("empty candidate list")
    if np.count_nonzero(data.rates > 0) < 2:
        raise ValueError("need at least two data points with positive rates")
    curves = [simulate_rate_curve(case, e, r, data.powers, workers) for e, r in candidates]
    if all(not np.any(np.isfinite(c)) for c in curves):
        raise CalibrationError("no data point could be simulated")
    return rank_candidates(candidates, curves, data)


# ------------------------------------------------------- full calibration


@dataclass
class CalibrationResult:
    element: str
    diameter: float
    wavelength: float
    melting_power: float
    grid: ScanGrid
    neutral_line: list
    fits: list

    @property
    def best(self) -> FitResult:
        return self.fits[0]

    def table_row(self) -> dict:
        """One row in the Element / Diameter / lambda / R / epsilon table layout."""
        return {
            "element": self.element,
            "diameter_mm": round(self.diameter * 1e3, 3),
            "wavelength_nm": round(self.wavelength * 1e9, 1),
            "R": round(self.best.reflectivity, 2),
            "epsilon": round(self.best.epsilon, 2),
        }

    def summary(self) -> dict:
        return {
            "table_row": self.table_row(),
            "melting_power_W": self.melting_power,
            "neutral_line": [
                {"epsilon": p.epsilon, "R": p.reflectivity, "delta_T_K": p.delta_T} for p in self.neutral_line
            ],
            "fits": [
                {"epsilon": f.epsilon, "R": f.reflectivity, "residual": f.residual,
                 "simulated_kg_s": [float(v) for v in f.simulated]}
                for f in self.fits
            ],
            "scan_errors": {f"{i},{j}": msg for (i, j), msg in self.grid.errors.items()},
        }

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        self.grid.write_csv(outdir / "scan_grid.csv")
        (outdir / "calibration.json").write_text(json.dumps(self.summary(), indent=2))


def calibrate(case: CaseConfig, data: ExperimentSeries, melting_power: float,
              epsilon_values=DEFAULT_EPSILONS, reflectivity_values=DEFAULT_REFLECTIVITIES,
              tol: float = 2.0, workers=None) -> CalibrationResult:
    """Scan -> neutral line -> rate fit for one element at its observed melting power."""
    at_melt = case.vary("power", melting_power)
    grid = scan_epsilon_reflectivity(at_melt, epsilon_values, reflectivity_values, workers)
    line = extract_neutral_line(grid, neutral_line_evaluator(at_melt), tol)
    fits = fit_rate_curves(line, data, case, workers)
    return CalibrationResult(data.element, data.diameter, data.wavelength, melting_power, grid, line, fits)
