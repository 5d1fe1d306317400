"""Transient heat problems on the solid phase of the unit cell.

Implicit-Euler stepping of the Robin-coupled micro problem, the relaxation
kernel obtained by driving the interface toward a unit temperature, and the
auxiliary source series used by the non-local (memory) macro formulation.
Interface integrals use the analytic-area face weighting from the geometry
module, so the total discrete exchange surface equals the analytic one.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import CellGeometry, GeometryError
from .linalg import SolverError, as_csr, cg_solve, cg_solve_block

MICRO_TOL = 1e-11


@dataclass
class SolidCellState:
    values: np.ndarray  # one scalar per solid voxel
    time: float = 0.0


@dataclass
class MemoryKernel:
    """Backward-difference samples of the interface relaxation response.

    psi[m] is the sample at t_{m+1} = (m+1)*dt; cumulative[m] = dt * sum up to
    there, which approaches the interface area as the response saturates.
    """

    dt: float
    psi: np.ndarray
    cumulative: np.ndarray
    gamma_area: float
    xi_sup_gap: float
    n_negative: int
    provenance: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return self.dt * len(self.psi)


@dataclass
class AuxiliarySource:
    """Per-step samples of the data part of the eliminated interface integral.

    kind "eta_bar": insulated auxiliary problem plus the |Gamma|*theta_f0 offset
    (closed-form variant).  kind "eliminated": trace of the homogeneous-Robin
    evolution of the actual initial solid state, which reproduces the coupled
    model exactly.  samples[n] belongs to time level t_n.
    """

    dt: float
    samples: np.ndarray
    kind: str
    provenance: dict = field(default_factory=dict)


class SolidCellProblem:
    """Implicit-Euler operator for the solid phase of one unit cell.

    robin=True couples the boundary to a fluid temperature with exchange
    coefficient alpha; robin=False leaves the interface insulated.
    """

    def __init__(self, geom: CellGeometry, rho_c_s, kappa_s, alpha, dt,
                 robin=True, tol=MICRO_TOL):
        if dt <= 0:
            raise GeometryError("dt must be positive")
        mask = geom.solid
        if not mask.any():
            raise GeometryError("cell has no solid voxels")
        self.geom = geom
        self.rho_c_s = float(rho_c_s)
        self.kappa_s = float(kappa_s)
        self.alpha = float(alpha)
        self.dt = float(dt)
        self.robin = robin
        self.tol = tol

        d, h = geom.dimension, geom.h
        self.n_unknowns = int(mask.sum())
        idx = -np.ones(mask.shape, dtype=np.int64)
        idx[mask] = np.arange(self.n_unknowns)

        self.vol = np.full(self.n_unknowns, h**d)
        # weighted interface areas per voxel: total matches the analytic |Gamma|
        r = np.zeros(self.n_unknowns)
        fluid = ~mask
        for ax in range(d):
            for shift in (-1, 1):
                faces = mask & np.roll(fluid, shift, axis=ax)
                np.add.at(r, idx[faces], h ** (d - 1))
        self.trace_weights = r * geom.gamma_weight

        cface = kappa_s * h ** (d - 2)
        rows, cols, vals = [], [], []
        diag = np.zeros(self.n_unknowns)
        for ax in range(d):
            same = mask & np.roll(mask, -1, axis=ax)
            a = idx[same]
            b = np.roll(idx, -1, axis=ax)[same]
            rows.extend([a, b])
            cols.extend([b, a])
            vals.extend([-cface * np.ones(a.size)] * 2)
            np.add.at(diag, a, cface)
            np.add.at(diag, b, cface)
        rows.append(np.arange(self.n_unknowns))
        cols.append(np.arange(self.n_unknowns))
        vals.append(diag)
        self.stiffness = as_csr(
            np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), self.n_unknowns
        )

        mass_over_dt = self.rho_c_s * self.vol / self.dt
        self.system = self.stiffness + sp.diags(mass_over_dt, format="csr")
        if robin:
            self.system = self.system + sp.diags(self.alpha * self.trace_weights, format="csr")
        self._diag = self.system.diagonal()
        self._mass_over_dt = mass_over_dt

    # -- integrals ---------------------------------------------------------

    def trace_integral(self, values):
        """Weighted interface integral of a solid field."""
        return float(self.trace_weights @ values)

    def volume_average(self, values):
        return float(self.vol @ values) / float(self.vol.sum())

    @property
    def solid_volume(self):
        return float(self.vol.sum())

    @property
    def gamma_area(self):
        return float(self.trace_weights.sum())

    # -- stepping ----------------------------------------------------------

    def _rhs(self, values, theta_f, f_s):
        b = self._mass_over_dt * values
        if np.ndim(f_s) == 0:
            if f_s != 0.0:
                b = b + self.vol * float(f_s)
        else:
            b = b + self.vol * np.asarray(f_s, float)
        if self.robin:
            b = b + self.alpha * self.trace_weights * theta_f
        return b

    def step(self, values, theta_f=0.0, f_s=0.0, x0=None):
        b = self._rhs(values, theta_f, f_s)
        x, rep = cg_solve(self.system, b, tol=self.tol, diag=self._diag,
                          x0=values if x0 is None else x0)
        if not rep.converged:
            raise SolverError("solid cell step did not converge", rep)
        return x

    def step_block(self, values_block, theta_f_vec, f_s=0.0, x0=None):
        """One implicit step for many collocation points sharing this operator."""
        theta_f_vec = np.asarray(theta_f_vec, dtype=float)
        B = self._mass_over_dt[:, None] * values_block
        if np.ndim(f_s) == 0:
            if f_s != 0.0:
                B = B + self.vol[:, None] * float(f_s)
        else:
            B = B + self.vol[:, None] * np.asarray(f_s, float)[None, :]
        if self.robin:
            B = B + self.alpha * self.trace_weights[:, None] * theta_f_vec[None, :]
        X, rep = cg_solve_block(self.system, B, tol=self.tol, diag=self._diag,
                                X0=values_block if x0 is None else x0)
        if not rep.converged:
            raise SolverError("solid ensemble step did not converge", rep)
        return X


# ---------------------------------------------------------------------------
# functional surface


def step_solid_cell(state: SolidCellState, theta_f, f_s, dt, geom, rho_c_s, kappa_s, alpha,
                    problem: SolidCellProblem = None) -> SolidCellState:
    """One implicit-Euler step of the Robin heat problem on the solid phase."""
    prob = problem
    if prob is None or prob.dt != dt:
        prob = SolidCellProblem(geom, rho_c_s, kappa_s, alpha, dt)
    values = prob.step(state.values, theta_f=theta_f, f_s=f_s)
    return SolidCellState(values=values, time=state.time + dt)


def boundary_trace_integral(state_or_values, geom: CellGeometry) -> float:
    """Interface integral of a solid field with analytic-area face weighting."""
    values = getattr(state_or_values, "values", state_or_values)
    prob = SolidCellProblem(geom, 1.0, 1.0, 0.0, 1.0, robin=False)
    return prob.trace_integral(np.asarray(values, float))


def volume_average(state_or_values, geom: CellGeometry) -> float:
    values = getattr(state_or_values, "values", state_or_values)
    return float(np.mean(np.asarray(values, float)))


def compute_kernel(geom, rho_c_s, kappa_s, alpha, horizon, dt, tol=1e-12) -> MemoryKernel:
    """Kernel samples from the implicit-Euler interface relaxation problem.

    The response field starts at zero and is driven toward one through the
    Robin boundary; sample m is the backward difference of its interface
    integral.  Sampled on the same dt as the macro run so that the discrete
    convolution is the exact elimination of the discrete micro solve.
    """
    n_steps = _steps_for(horizon, dt)
    prob = SolidCellProblem(geom, rho_c_s, kappa_s, alpha, dt, robin=True, tol=tol)
    xi = np.zeros(prob.n_unknowns)
    psi = np.zeros(n_steps)
    trace_prev = 0.0
    for m in range(n_steps):
        xi = prob.step(xi, theta_f=1.0)
        trace = prob.trace_integral(xi)
        psi[m] = (trace - trace_prev) / dt
        trace_prev = trace
    n_negative = int(np.count_nonzero(psi < -1e-8))
    if n_negative:
        warnings.warn(f"memory kernel has {n_negative} negative samples", stacklevel=2)
    return MemoryKernel(
        dt=dt,
        psi=psi,
        cumulative=np.cumsum(psi) * dt,
        gamma_area=prob.gamma_area,
        xi_sup_gap=float(np.max(np.abs(xi - 1.0))),
        n_negative=n_negative,
        provenance={
            "label": geom.spec.label,
            "resolution": geom.resolution,
            "rho_c_s": rho_c_s,
            "kappa_s": kappa_s,
            "alpha": alpha,
        },
    )


def compute_eta_bar(geom, rho_c_s, kappa_s, alpha, f_s, initial_offset, horizon, dt,
                    theta_f0=0.0, tol=1e-12) -> AuxiliarySource:
    """Closed-form auxiliary source: insulated evolution of the initial solid
    excess temperature plus the constant |Gamma|*theta_f0 offset.

    `f_s` may be a constant or a per-step array (value used for step n -> n+1);
    `initial_offset` is theta_s(0) - theta_f(0), constant or per-voxel.
    Exact elimination of the micro solve needs `eliminated_trace_source`
    instead whenever the initial offset or f_s is nonzero; both variants agree
    when they vanish.
    """
    n_steps = _steps_for(horizon, dt)
    prob = SolidCellProblem(geom, rho_c_s, kappa_s, alpha, dt, robin=False, tol=tol)
    eta = _initial_field(initial_offset, prob.n_unknowns)
    gamma = prob.gamma_area
    samples = np.zeros(n_steps + 1)
    samples[0] = prob.trace_integral(eta) + gamma * theta_f0
    for m in range(n_steps):
        eta = prob.step(eta, f_s=_sample(f_s, m))
        samples[m + 1] = prob.trace_integral(eta) + gamma * theta_f0
    return AuxiliarySource(dt=dt, samples=samples, kind="eta_bar",
                           provenance={"theta_f0": theta_f0})


def eliminated_trace_source(geom, rho_c_s, kappa_s, alpha, theta_s0, f_s, horizon, dt,
                            tol=1e-12) -> AuxiliarySource:
    """Exact data term of the eliminated interface integral.

    Evolves the initial solid state under the homogeneous Robin boundary
    (fluid temperature frozen at zero) with the solid source, and records its
    interface trace.  Together with the kernel convolution this reproduces the
    coupled micro-macro step to solver tolerance.
    """
    n_steps = _steps_for(horizon, dt)
    prob = SolidCellProblem(geom, rho_c_s, kappa_s, alpha, dt, robin=True, tol=tol)
    zeta = _initial_field(theta_s0, prob.n_unknowns)
    samples = np.zeros(n_steps + 1)
    samples[0] = prob.trace_integral(zeta)
    for m in range(n_steps):
        zeta = prob.step(zeta, theta_f=0.0, f_s=_sample(f_s, m))
        samples[m + 1] = prob.trace_integral(zeta)
    return AuxiliarySource(dt=dt, samples=samples, kind="eliminated")


def _steps_for(horizon, dt):
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise GeometryError(f"dt={dt} does not divide the horizon {horizon}")
    return n


def _initial_field(value, n):
    if np.ndim(value) == 0:
        return np.full(n, float(value))
    arr = np.asarray(value, float)
    if arr.shape != (n,):
        raise GeometryError("initial solid field has the wrong shape")
    return arr.copy()


def _sample(f_s, m):
    if np.ndim(f_s) == 0:
        return float(f_s)
    return float(np.asarray(f_s)[m])
