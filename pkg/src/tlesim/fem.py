"""P1 finite-element heat conduction with radiative/evaporative boundaries.

Backward Euler in time, Newton-Raphson for the boundary nonlinearity.
The conduction and capacity operators are linear and assembled once per
problem; only the boundary terms are re-evaluated at each iterate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import physics
from .materials import Material
from .mesh import Mesh, Region
from .physics import ChamberSpec, LaserSpec

log = logging.getLogger(__name__)

try:  # CHOLMOD is much faster than SuperLU on these SPD systems
    from sksparse.cholmod import CholmodError, analyze as _cholmod_analyze
except ImportError:  # pragma: no cover - depends on the environment
    _cholmod_analyze = None

T_FLOOR = 1.0  # K
P0_RESIDUAL_TOL = 1e-10  # W, absolute tolerance when there is no laser load
MAX_HALVINGS = 8
MIN_DT = 1e-9  # s


class SolverError(RuntimeError):
    """Base class for solver failures."""


class NonConvergence(SolverError):
    """Newton iteration did not reach the residual tolerance."""


class SingularSystem(SolverError):
    pass


class TimeStepUnderflow(SolverError):
    pass


class NotSteady(SolverError):
    """max_time elapsed before both steadiness criteria held."""


@dataclass
class SolverControls:
    dt_initial: float = 1e-3
    dt_max: float = 1.0
    dt_growth: float = 1.5
    newton_tol: float = 1e-8
    newton_max_iter: int = 25
    steady_rate_tol: float = 1e-3  # K/s
    steady_balance_tol: float = 1e-2
    max_time: float = 600.0

    def __post_init__(self):
        for name in ("dt_initial", "dt_max", "dt_growth", "newton_tol", "steady_rate_tol",
                     "steady_balance_tol", "max_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SolverControls.{name} must be positive")
        if self.dt_growth < 1:
            raise ValueError("SolverControls.dt_growth must be >= 1")
        if int(self.newton_max_iter) < 1:
            raise ValueError("SolverControls.newton_max_iter must be >= 1")


@dataclass
class TemperatureField:
    mesh: Mesh
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError("one temperature per mesh vertex required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("temperature field contains NaN or Inf")
        if np.any(self.values < T_FLOOR):
            raise ValueError(f"temperature below the {T_FLOOR} K floor")

    @classmethod
    def uniform(cls, mesh: Mesh, T: float, time: float = 0.0) -> "TemperatureField":
        return cls(mesh, np.full(mesh.n_vertices, float(T)), time)


# Triangle rules in barycentric coordinates, weights sum to 1.
_TRI3 = (
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
)
_a, _b = 0.445948490915965, 0.091576213509771
_TRI6 = (
    np.array([
        [1 - 2 * _a, _a, _a], [_a, 1 - 2 * _a, _a], [_a, _a, 1 - 2 * _a],
        [1 - 2 * _b, _b, _b], [_b, 1 - 2 * _b, _b], [_b, _b, 1 - 2 * _b],
    ]),
    np.array([0.223381589678011] * 3 + [0.109951743655322] * 3),
)


def _tet_gradients(mesh: Mesh):
    """Basis-function gradients (m, 4, 3) and volumes (m,)."""
    p = mesh.vertices[mesh.tetrahedra]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)  # rows = edges
    Jinv = np.linalg.inv(J)  # columns are gradients of barycentric coords 1..3
    g123 = np.transpose(Jinv, (0, 2, 1))
    g0 = -g123.sum(axis=1, keepdims=True)
    vol = np.linalg.det(J) / 6.0
    return np.concatenate([g0, g123], axis=1), vol


@dataclass
class BalanceReport:
    absorbed: float  # W
    radiated: float  # W
    evaporated: float  # W

    @property
    def imbalance(self) -> float:
        """|absorbed - losses| relative to absorbed (to 1 W when nothing is absorbed)."""
        scale = self.absorbed if self.absorbed > 0 else 1.0
        return abs(self.absorbed - self.radiated - self.evaporated) / scale

    def as_dict(self) -> dict:
        return {
            "absorbed_W": self.absorbed,
            "radiated_W": self.radiated,
            "evaporated_W": self.evaporated,
            "relative_imbalance": self.imbalance,
        }


class HeatProblem:
    """Discrete operators for one mesh, material, laser and chamber."""

    def __init__(self, mesh: Mesh, mat: Material, laser: LaserSpec, chamber: ChamberSpec | None = None):
        self.mesh = mesh
        self.mat = mat
        self.laser = laser
        self.chamber = chamber or ChamberSpec()
        try:
            self.reflectivity = mat.reflectivity_at(laser.wavelength)
        except ValueError:
            if laser.power > 0:
                raise
            self.reflectivity = 0.0  # irrelevant without laser power
        n = mesh.n_vertices
        tets = mesh.tetrahedra

        grads, vol = _tet_gradients(mesh)
        ke = np.einsum("eik,ejk->eij", grads, grads) * vol[:, None, None]
        rows = np.repeat(tets, 4, axis=1).ravel()
        cols = np.tile(tets, (1, 4)).ravel()
        self.stiffness = sp.csr_matrix((mat.thermal_conductivity * ke.ravel(), (rows, cols)), shape=(n, n))
        # nodal (vertex) quadrature for the capacity term -> diagonal mass
        self.lumped_mass = np.bincount(tets.ravel(), np.repeat(vol / 4.0, 4), minlength=n)
        self.capacity = mat.density * mat.specific_heat * self.lumped_mass

        facets = mesh.facets
        self._facets = facets
        self._areas = mesh.facet_areas()
        self._frows = np.repeat(facets, 3, axis=1).ravel()
        self._fcols = np.tile(facets, (1, 3)).ravel()
        self.top_nodes = np.unique(mesh.facets_with(Region.TOP_SURFACE))
        self.source_radius = float(np.hypot(mesh.vertices[:, 0], mesh.vertices[:, 1]).max())
        self.base_load = self._laser_load()
        self._symbolic = None

    # ---------------------------------------------------------------- laser

    def _laser_load(self) -> np.ndarray:
        """Laser load vector for tau = 0."""
        mesh, laser = self.mesh, self.laser
        load = np.zeros(mesh.n_vertices)
        if laser.power == 0 or self.reflectivity >= 1.0:
            return load
        top = self._facets[self.mesh.facet_tags == Region.TOP_SURFACE]
        area = self._areas[self.mesh.facet_tags == Region.TOP_SURFACE]
        p = mesh.vertices[top]
        diam = np.max(np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2), axis=1)
        fine = laser.gaussian_radius < 3.0 * diam
        for rule, sel in ((_TRI3, ~fine), (_TRI6, fine)):
            if not sel.any():
                continue
            bary, w = rule
            xq = np.einsum("qj,fjk->fqk", bary, p[sel])
            q = physics.laser_flux(xq[..., 0], xq[..., 1], laser, self.reflectivity)
            contrib = np.einsum("fq,q,qj->fj", q, w, bary) * area[sel, None]
            np.add.at(load, top[sel].ravel(), contrib.ravel())
        return load

    def optical_depth(self, T: np.ndarray) -> float:
        """Vapor optical depth from the current peak top-surface temperature."""
        if self.laser.power == 0 or not self.laser.attenuation_enabled:
            return 0.0
        return physics.optical_depth(self.mat, float(T[self.top_nodes].max()), self.laser, self.chamber,
                                     self.source_radius)

    def laser_load(self, tau: float) -> np.ndarray:
        return self.base_load * math.exp(-tau)

    # ------------------------------------------------------------- boundary

    def _boundary_fluxes(self, T):
        bary, w = _TRI3
        Tq = T[self._facets] @ bary.T  # (k, q)
        eps = self.mat.emissivity
        T_amb = self.chamber.ambient_temperature
        f = physics.radiative_flux(Tq, T_amb, eps) + physics.evaporative_heat_flux(self.mat, Tq)
        df = physics.radiative_flux_derivative(Tq, eps) + physics.evaporative_heat_flux_derivative(self.mat, Tq)
        return f, df

    def boundary_vector(self, T):
        bary, w = _TRI3
        f, _ = self._boundary_fluxes(T)
        contrib = np.einsum("fq,q,qj->fj", f, w, bary) * self._areas[:, None]
        return np.bincount(self._facets.ravel(), contrib.ravel(), minlength=len(T))

    def boundary_matrix(self, T):
        bary, w = _TRI3
        _, df = self._boundary_fluxes(T)
        local = np.einsum("fq,q,qi,qj->fij", df, w, bary, bary) * self._areas[:, None, None]
        n = len(T)
        return sp.csr_matrix((local.ravel(), (self._frows, self._fcols)), shape=(n, n))

    def power_balance(self, T, tau: float | None = None) -> BalanceReport:
        """Absorbed laser power and the two boundary losses, each integrated independently."""
        if tau is None:
            tau = self.optical_depth(T)
        bary, w = _TRI3
        Tq = T[self._facets] @ bary.T
        A = self._areas[:, None] * w[None, :]
        rad = physics.radiative_flux(Tq, self.chamber.ambient_temperature, self.mat.emissivity)
        evap = physics.evaporative_heat_flux(self.mat, Tq)
        return BalanceReport(
            absorbed=float(self.laser_load(tau).sum()),
            radiated=float((rad * A).sum()),
            evaporated=float((evap * A).sum()),
        )

    # ------------------------------------------------------------- system

    def residual(self, T, T_prev, dt, tau=0.0):
        return (
            self.capacity * (T - T_prev) / dt
            # constants are in the null space of K; shifting makes uniform fields exact
            + self.stiffness @ (T - T[0])
            + self.boundary_vector(T)
            - self.laser_load(tau)
        )

    def jacobian(self, T, dt):
        return (self.stiffness + self.boundary_matrix(T) + sp.diags(self.capacity / dt)).tocsc()

    def solve_linear(self, J, rhs):
        if _cholmod_analyze is not None:
            try:
                if self._symbolic is None:
                    self._symbolic = _cholmod_analyze(J)
                return self._symbolic.cholesky(J)(rhs)
            except CholmodError as exc:
                log.debug("cholmod failed (%s); falling back to SuperLU", exc)
        try:
            return spla.splu(J, permc_spec="MMD_AT_PLUS_A").solve(rhs)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc


def assemble_system(mesh, mat, laser, chamber, T: TemperatureField, T_prev: TemperatureField, dt: float,
                    problem: HeatProblem | None = None):
    """Residual vector and sparse Jacobian of one backward-Euler step."""
    if T.mesh is not mesh or T_prev.mesh is not mesh:
        raise ValueError("temperature fields are not defined on this mesh")
    if not dt > 0:
        raise ValueError("dt must be positive")
    problem = problem or HeatProblem(mesh, mat, laser, chamber)
    tau = problem.optical_depth(T.values)
    return problem.residual(T.values, T_prev.values, dt, tau), problem.jacobian(T.values, dt)


@dataclass
class NewtonReport:
    iterations: int
    final_residual: float  # relative (or absolute in W without laser load)
    history: list = field(default_factory=list)
    tau: float = 0.0


def _newton(problem: HeatProblem, T_start, T_prev, dt, controls: SolverControls):
    T = np.maximum(np.array(T_start, dtype=float), T_FLOOR)
    history = []
    for it in range(int(controls.newton_max_iter) + 1):
        tau = problem.optical_depth(T)
        load_norm = np.linalg.norm(problem.laser_load(tau))
        R = problem.residual(T, T_prev, dt, tau)
        rnorm = np.linalg.norm(R)
        scaled = rnorm / load_norm if load_norm > 0 else rnorm
        tol = controls.newton_tol if load_norm > 0 else P0_RESIDUAL_TOL
        history.append(float(scaled))
        if not math.isfinite(rnorm):
            raise NonConvergence("residual became non-finite")
        if scaled <= tol:
            return T, NewtonReport(it, float(scaled), history, tau)
        if it == controls.newton_max_iter:
            break
        delta = problem.solve_linear(problem.jacobian(T, dt), -R)
        if not np.all(np.isfinite(delta)):
            raise SingularSystem("linear solve produced non-finite update")
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = np.maximum(T + alpha * delta, T_FLOOR)
            if np.linalg.norm(problem.residual(trial, T_prev, dt, tau)) < rnorm:
                break
            alpha *= 0.5
        T = trial
    raise NonConvergence(
        f"Newton did not converge in {controls.newton_max_iter} iterations "
        f"(residual {history[-1]:.3e}, dt = {dt:g} s)"
    )


def solve_nonlinear(initial: TemperatureField, T_prev: TemperatureField, dt: float, problem: HeatProblem,
                    controls: SolverControls | None = None):
    """One implicit step: returns the new field and a :class:`NewtonReport`."""
    controls = controls or SolverControls()
    if not dt > 0:
        raise ValueError("dt must be positive")
    T, report = _newton(problem, initial.values, T_prev.values, dt, controls)
    return TemperatureField(problem.mesh, T, T_prev.time + dt), report


# --------------------------------------------------------------- transient


def spot_vertex(problem: HeatProblem) -> int:
    """Top-surface vertex closest to the laser spot centre."""
    v = problem.mesh.vertices[problem.top_nodes]
    x0, y0 = problem.laser.spot_center
    return int(problem.top_nodes[np.argmin((v[:, 0] - x0) ** 2 + (v[:, 1] - y0) ** 2)])


@dataclass
class TransientResult:
    times: np.ndarray
    spot_temperature: np.ndarray
    peak_temperature: np.ndarray
    fields: list  # sampled TemperatureField snapshots
    final: TemperatureField
    steps: int = 0


def advance_transient(problem: HeatProblem, initial: TemperatureField, t_end: float,
                      controls: SolverControls | None = None, power=None, sample_times=None,
                      on_step=None) -> TransientResult:
    """Backward-Euler integration from ``initial.time`` to ``t_end``.

    ``power`` maps time to a multiplier of the laser load (e.g. 0 after
    switch-off); its breakpoints are given by ``power.breakpoints`` if present
    so that steps land on them. ``on_step(field, prev, dt, report)`` may
    return True to stop early.
    """
    controls = controls or SolverControls()
    scale_fn = power or (lambda t: 1.0)
    breaks = sorted(getattr(power, "breakpoints", ()))
    stops = sorted(set([t for t in breaks if initial.time < t < t_end] + [t_end]))
    samples = sorted(sample_times or [])
    spot = spot_vertex(problem)
    base = problem.base_load

    t = initial.time
    T = initial.values.copy()
    dt = controls.dt_initial
    times, spot_T, peak_T, fields = [t], [T[spot]], [T.max()], []
    steps = 0
    try:
        while t < t_end - 1e-12 * max(1.0, t_end):
            nxt = next(s for s in stops if s > t + 1e-12)
            step = min(dt, controls.dt_max, nxt - t)
            # the load during a step is the one at its end (implicit)
            problem.base_load = base * scale_fn(t + step)
            try:
                T_new, report = _newton(problem, T, T, step, controls)
            except (NonConvergence, SingularSystem) as exc:
                dt = 0.5 * step
                if dt < MIN_DT:
                    raise TimeStepUnderflow(f"time step fell below {MIN_DT:g} s at t = {t:g} s") from exc
                log.debug("step %g s failed (%s); halving", step, exc)
                continue
            prev = T
            T, t = T_new, t + step
            steps += 1
            times.append(t)
            spot_T.append(T[spot])
            peak_T.append(T.max())
            while samples and samples[0] <= t + 1e-12:
                samples.pop(0)
                fields.append(TemperatureField(problem.mesh, T.copy(), t))
            dt = min(step * controls.dt_growth, controls.dt_max) if step >= dt * 0.999 else dt
            if on_step is not None and on_step(T, prev, step, report):
                break
    finally:
        problem.base_load = base
    final = TemperatureField(problem.mesh, T, t)
    return TransientResult(np.array(times), np.array(spot_T), np.array(peak_T), fields, final, steps)


class LaserSchedule:
    """Laser power multiplier: 1 for ``t_on <= t < t_off``, else 0."""

    def __init__(self, t_off: float = math.inf, t_on: float = 0.0):
        self.t_on, self.t_off = t_on, t_off
        self.breakpoints = tuple(t for t in (t_on, t_off) if 0 < t < math.inf)

    def __call__(self, t):
        # compare step end times; a step ending exactly at t_off still has the laser on
        return 1.0 if self.t_on < t <= self.t_off + 1e-12 else 0.0


# ------------------------------------------------------------------ steady


@dataclass
class SteadyResult:
    field: TemperatureField
    peak_temperature: float
    peak_location: tuple
    spot_temperature: float
    mass_rate: float  # kg/s
    balance: BalanceReport
    history: list  # (time, dt, max rate K/s, imbalance, newton iterations)
    tau: float

    def as_dict(self) -> dict:
        return {
            "peak_T_K": self.peak_temperature,
            "peak_location_m": list(self.peak_location),
            "spot_T_K": self.spot_temperature,
            "mass_rate_kg_s": self.mass_rate,
            "mass_rate_mg_min": self.mass_rate * 6e7,
            "time_s": self.field.time,
            "optical_depth": self.tau,
            "power_balance": self.balance.as_dict(),
            "steps": len(self.history),
        }


def solve_steady(problem: HeatProblem, controls: SolverControls | None = None,
                 initial: TemperatureField | None = None) -> SteadyResult:
    """Integrate in time until the field is steady and the power balance closes."""
    from .postprocess import peak_temperature, total_mass_evaporation_rate

    controls = controls or SolverControls()
    if initial is None:
        initial = TemperatureField.uniform(problem.mesh, problem.chamber.ambient_temperature)
    history = []
    state = {}
    clock = [initial.time]

    def check(T, prev, dt, report):
        clock[0] += dt
        rate = float(np.max(np.abs(T - prev)) / dt)
        bal = problem.power_balance(T, report.tau)
        history.append((clock[0], dt, rate, bal.imbalance, report.iterations))
        if rate <= controls.steady_rate_tol and bal.imbalance <= controls.steady_balance_tol:
            state["balance"], state["tau"] = bal, report.tau
            return True
        return False

    res = advance_transient(problem, initial, initial.time + controls.max_time, controls, on_step=check)
    if "balance" not in state:
        last = history[-1] if history else None
        raise NotSteady(f"not steady after {controls.max_time:g} s (last rate/imbalance: {last})")
    field_ = res.final
    peak, loc = peak_temperature(field_)
    return SteadyResult(
        field=field_,
        peak_temperature=peak,
        peak_location=tuple(float(v) for v in loc),
        spot_temperature=float(field_.values[spot_vertex(problem)]),
        mass_rate=total_mass_evaporation_rate(field_, problem.mesh, problem.mat),
        balance=state["balance"],
        history=history,
        tau=state["tau"],
    )


def run_to_steady(case) -> SteadyResult:
    """Steady solve of a :class:`tlesim.config.CaseConfig`."""
    return solve_steady(case.problem(), case.controls)
