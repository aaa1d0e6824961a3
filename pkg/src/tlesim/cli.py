"""Command-line driver.

Exit status: 0 success, 1 usage error, 2 solver failure, 3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import (
    DEFAULT_EPSILONS,
    DEFAULT_REFLECTIVITIES,
    CalibrationError,
    ScanGrid,
    calibrate,
    extract_neutral_line,
    find_melting_power,
    fit_rate_curves,
    load_experiment_csv,
    neutral_line_evaluator,
    scan_epsilon_reflectivity,
    sensitivity_sweep,
    solve_many,
)
from .config import CaseConfig, ConfigError
from .fem import LaserSchedule, SolverError, TemperatureField, advance_transient, solve_steady, spot_vertex
from .materials import MaterialError, default_database_path, load_material_database
from .mesh import MeshError, generate_cylinder_mesh, mesh_quality_report, write_gmsh_mesh
from .physics import ChamberSpec, LaserSpec, optical_depth
from .postprocess import export_vtk, melt_pool, write_rate_table

log = logging.getLogger("tlesim")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

# parameter -> (CSV column name, lab-unit to SI factor)
SWEEP_UNITS = {
    "kappa": ("kappa_W_mK", 1.0),
    "rho": ("rho_kg_m3", 1.0),
    "c": ("c_J_kgK", 1.0),
    "omega": ("omega_um", 1e-6),
    "epsilon": ("epsilon", 1.0),
    "R": ("R", 1.0),
    "power": ("power_W", 1.0),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _range(text: str):
    """start:stop:step, stop inclusive."""
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("range needs step > 0 and stop >= start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(n)]


def _outdir(case: CaseConfig, args) -> Path:
    out = Path(args.output_dir) if getattr(args, "output_dir", None) else Path(case.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest(out: Path, case: CaseConfig | None, args, extra=None) -> None:
    doc = {
        "tlesim_version": __version__,
        "command": args.command,
        "arguments": {k: v for k, v in vars(args).items() if not k.startswith("_") and k != "func"},
        "config": case.to_dict() if case is not None else None,
    }
    if extra:
        doc.update(extra)
    _write_json(out / "run_manifest.json", doc)


def _load_case(args) -> CaseConfig:
    if not args.config:
        raise UsageError(f"{args.command}: --config is required")
    return CaseConfig.from_file(args.config)


# ---------------------------------------------------------------- commands


def cmd_mesh(args):
    if args.config:
        case = _load_case(args)
        mesh = case.mesh()
        out = _outdir(case, args)
    else:
        if None in (args.diameter_mm, args.length_mm, args.refinement):
            raise UsageError("mesh: give --config or all of --diameter-mm, --length-mm, --refinement")
        mesh = generate_cylinder_mesh(args.diameter_mm * 1e-3, args.length_mm * 1e-3, args.refinement)
        out = Path(args.output_dir or ".")
        out.mkdir(parents=True, exist_ok=True)
        case = None
    write_gmsh_mesh(mesh, out / "mesh.msh")
    report = mesh_quality_report(mesh).as_dict()
    _write_json(out / "mesh_quality.json", report)
    _manifest(out, case, args)
    print(json.dumps(report, indent=2))


def cmd_steady(args):
    case = _load_case(args)
    out = _outdir(case, args)
    res = solve_steady(case.problem(), case.controls)
    pool, area = melt_pool(res.field, case.mesh(), case.material.melting_point)
    doc = res.as_dict()
    doc.update({
        "power_W": case.laser.power,
        "melting_point_K": case.material.melting_point,
        "melted": res.peak_temperature >= case.material.melting_point,
        "melt_pool_area_mm2": area * 1e6,
        "melt_pool_facets": int(len(pool)),
    })
    _write_json(out / "steady_result.json", doc)
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "dt_s", "max_rate_K_s", "relative_imbalance", "newton_iterations"])
        w.writerows(res.history)
    export_vtk(res.field, case.mesh(), out / "field.vtk")
    _manifest(out, case, args)
    print(f"peak T = {res.peak_temperature:.1f} K, mass rate = {res.mass_rate * 6e7:.4g} mg/min")


def cmd_transient(args):
    case = _load_case(args)
    out = _outdir(case, args)
    problem = case.problem()
    t_off = args.t_off_s if args.t_off_s is not None else float("inf")
    t_end = args.t_end_s
    sched = LaserSchedule(t_off=t_off)
    init = TemperatureField.uniform(problem.mesh, case.chamber.ambient_temperature)
    res = advance_transient(problem, init, t_end, case.controls, power=sched)
    with open(out / "transient.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "spot_T_K", "peak_T_K", "laser_on"])
        for t, s, p in zip(res.times, res.spot_temperature, res.peak_temperature):
            w.writerow([repr(float(t)), repr(float(s)), repr(float(p)), int(sched(t) > 0 and t > 0)])
    export_vtk(res.final, problem.mesh, out / "field_final.vtk")
    _manifest(out, case, args, {"spot_vertex": spot_vertex(problem)})
    print(f"{res.steps} steps to t = {res.times[-1]:g} s; final spot T = {res.spot_temperature[-1]:.1f} K")


def cmd_sweep(args):
    case = _load_case(args)
    out = _outdir(case, args)
    column, factor = SWEEP_UNITS[args.parameter]
    values = [v * factor for v in args.values]
    if args.parameter == "power":
        points = solve_many([case.vary("power", v) for v in values])
        bad = [(v, p) for v, p in zip(values, points) if isinstance(p, Exception)]
        if bad:
            raise SolverError(f"power = {bad[0][0]:g} W: {bad[0][1]}")
        write_rate_table(points, out / "rates.csv")
    else:
        points = sensitivity_sweep(case, args.parameter, values)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([column, "peak_T_K", "mass_rate_kg_s", "mass_rate_mg_min"])
            for p in points:
                w.writerow([repr(p.value / factor), repr(p.peak_T), repr(p.mass_rate), repr(p.mass_rate * 6e7)])
    _manifest(out, case, args)
    print(f"{len(values)} solves written to {out}")


def _grid_from_csv(path, melting_point, power) -> ScanGrid:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    refl = np.array([float(v) for v in rows[0][1:]])
    eps = np.array([float(r[0]) for r in rows[1:]])
    dT = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return ScanGrid(eps, refl, dT, melting_point, power)


def _scan(case, args):
    at = case.vary("power", args.power_W) if args.power_W is not None else case
    grid = scan_epsilon_reflectivity(at, args.epsilons, args.reflectivities)
    return at, grid


def cmd_scan(args):
    case = _load_case(args)
    out = _outdir(case, args)
    at, grid = _scan(case, args)
    grid.write_csv(out / "scan_grid.csv")
    line = extract_neutral_line(grid) if np.any(np.diff(np.sign(np.nan_to_num(grid.delta_T)), axis=1)) else []
    _write_json(out / "scan.json", {
        "power_W": at.laser.power,
        "melting_point_K": grid.melting_point,
        "neutral_line_interpolated": [{"epsilon": p.epsilon, "R": p.reflectivity} for p in line],
        "errors": {f"{i},{j}": m for (i, j), m in grid.errors.items()},
    })
    _manifest(out, at, args)
    print(f"scan of {grid.delta_T.size} cells written to {out / 'scan_grid.csv'}")


def cmd_neutral_line(args):
    case = _load_case(args)
    out = _outdir(case, args)
    at = case.vary("power", args.power_W) if args.power_W is not None else case
    if args.grid:
        grid = _grid_from_csv(args.grid, at.material.melting_point, at.laser.power)
    else:
        at, grid = _scan(case, args)
        grid.write_csv(out / "scan_grid.csv")
    line = extract_neutral_line(grid, neutral_line_evaluator(at), args.tol_K)
    _write_json(out / "neutral_line.json", {
        "power_W": at.laser.power,
        "tolerance_K": args.tol_K,
        "neutral_line": [{"epsilon": p.epsilon, "R": p.reflectivity, "delta_T_K": p.delta_T} for p in line],
    })
    _manifest(out, at, args)
    for p in line:
        print(f"epsilon = {p.epsilon:.3f}  R = {p.reflectivity:.4f}")


def cmd_melt_power(args):
    case = _load_case(args)
    out = _outdir(case, args)
    res = find_melting_power(case, args.target_K, args.p_max_W, args.tol_K)
    _write_json(out / "melt_power.json", {
        "power_W": res.power, "peak_T_K": res.peak_T,
        "target_K": args.target_K if args.target_K is not None else case.material.melting_point,
        "brackets_W": [list(b) for b in res.history],
    })
    _manifest(out, case, args)
    print(f"melting power = {res.power:.2f} W (peak T {res.peak_T:.1f} K)")


def cmd_fit(args):
    case = _load_case(args)
    out = _outdir(case, args)
    data = load_experiment_csv(args.data)
    if args.candidates:
        doc = json.loads(Path(args.candidates).read_text())
        pairs = [(p["epsilon"], p["R"]) for p in doc["neutral_line"]]
        fits = fit_rate_curves(pairs, data, case)
        summary = {"fits": [{"epsilon": f.epsilon, "R": f.reflectivity, "residual": f.residual} for f in fits]}
        _write_json(out / "fit.json", summary)
        best = fits[0]
    else:
        if args.melting_power_W is None:
            raise UsageError("fit: give --candidates or --melting-power-W")
        result = calibrate(case, data, args.melting_power_W, args.epsilons, args.reflectivities, args.tol_K)
        result.write(out)
        best = result.best
        _write_json(out / "table_row.json", result.table_row())
    _manifest(out, case, args)
    print(f"best fit: epsilon = {best.epsilon:.3f}, R = {best.reflectivity:.4f} (residual {best.residual:.3g})")


def cmd_optical_depth(args):
    db = load_material_database(args.database or default_database_path())
    if args.element not in db:
        raise ConfigError(f"--element: {args.element!r} not in database (have {sorted(db)})")
    mat = db[args.element]
    laser = LaserSpec(0.0, args.wavelength_nm * 1e-9, args.omega_um * 1e-6)
    chamber = ChamberSpec(300.0, args.beam_path_mm * 1e-3)
    rows = [(T, optical_depth(mat, T, laser, chamber, args.source_radius_mm * 1e-3)) for T in args.temps]
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["T_K", "tau"])
        for T, tau in rows:
            w.writerow([repr(T), repr(tau)])
    finally:
        if args.output:
            fh.close()


def cmd_materials(args):
    db = load_material_database(args.database or default_database_path())
    print(f"{'name':<4} {'T_melt/K':>9} {'kappa':>7} {'rho':>8} {'c':>6} {'eps':>5}  R@wavelength")
    for name, m in db.items():
        refl = ", ".join(f"{v:.2f}@{wl * 1e9:.0f}nm" for wl, v in m.reflectivity)
        print(f"{name:<4} {m.melting_point:>9.1f} {m.thermal_conductivity:>7.1f} {m.density:>8.0f} "
              f"{m.specific_heat:>6.0f} {m.emissivity:>5.2f}  {refl}")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tlesim", description="Laser-heated source simulation and calibration")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def with_config(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="case JSON file")
        s.add_argument("--output-dir", help="overrides output_dir from the config")
        s.set_defaults(func=func, _parser=s)
        return s

    def with_grid(s):
        s.add_argument("--epsilons", type=_floats, default=list(DEFAULT_EPSILONS))
        s.add_argument("--reflectivities", type=_floats, default=list(DEFAULT_REFLECTIVITIES))
        s.add_argument("--power-W", type=float, help="calibration (melting) power; default: config power")
        return s

    s = with_config("mesh", cmd_mesh, "generate a cylinder mesh and report its quality")
    s.add_argument("--diameter-mm", type=float)
    s.add_argument("--length-mm", type=float)
    s.add_argument("--refinement", type=int)

    with_config("steady", cmd_steady, "run to steady state")

    s = with_config("transient", cmd_transient, "heating (and cooling) transient")
    s.add_argument("--t-end-s", type=float, required=True)
    s.add_argument("--t-off-s", type=float, help="switch the laser off at this time")

    s = with_config("sweep", cmd_sweep, "one-parameter sensitivity sweep")
    s.add_argument("--parameter", choices=sorted(SWEEP_UNITS), required=True)
    s.add_argument("--values", type=_floats, required=True, help="comma-separated, lab units (omega in um)")

    with_grid(with_config("scan", cmd_scan, "(epsilon, R) parameter-space scan"))

    s = with_grid(with_config("neutral-line", cmd_neutral_line, "pairs that melt at the calibration power"))
    s.add_argument("--grid", help="reuse a scan_grid.csv instead of scanning")
    s.add_argument("--tol-K", type=float, default=2.0)

    s = with_config("melt-power", cmd_melt_power, "laser power that reaches the melting point")
    s.add_argument("--target-K", type=float)
    s.add_argument("--p-max-W", type=float, default=1000.0)
    s.add_argument("--tol-K", type=float, default=5.0)

    s = with_config("fit", cmd_fit, "rank (epsilon, R) pairs against measured rates")
    with_grid(s)
    s.add_argument("--data", required=True, help="experiment CSV")
    s.add_argument("--candidates", help="neutral_line.json from the neutral-line command")
    s.add_argument("--melting-power-W", type=float, help="run the full scan/neutral-line/fit pipeline")
    s.add_argument("--tol-K", type=float, default=2.0)

    s = sub.add_parser("optical-depth", help="vapor optical depth versus temperature")
    s.add_argument("--element", required=True)
    s.add_argument("--temps", type=_range, required=True, help="start:stop:step in K")
    s.add_argument("--wavelength-nm", type=float, default=1030.0)
    s.add_argument("--omega-um", type=float, default=750.0)
    s.add_argument("--beam-path-mm", type=float, default=500.0)
    s.add_argument("--source-radius-mm", type=float, default=1.5)
    s.add_argument("--database")
    s.add_argument("--output", help="CSV file (default: stdout)")
    s.set_defaults(func=cmd_optical_depth)

    s = sub.add_parser("materials", help="list the material database")
    s.add_argument("--database")
    s.set_defaults(func=cmd_materials)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        sub = getattr(locals().get("args"), "_parser", None)
        if sub is not None:
            sub.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, CalibrationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ConfigError, MaterialError, MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
