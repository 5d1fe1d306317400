"""Finite-volume, implicit-Euler solvers on the layered macro domain.

One continuous fluid temperature covers the free-fluid and porous layers; the
connected-matrix model adds a solid temperature on the porous cells, coupled
volumetrically and through a Robin exchange on the interface face row.  The
disconnected model takes its interface exchange from micro cell solves (or
from their eliminated memory form).  Cell-centered finite volumes with
harmonic face conductances keep the discrete energy balance exact; convection
is first-order upwind and is the only source of nonsymmetry.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .geometry import GeometryError, MacroGrid
from .linalg import SolverError, bicgstab_solve, cg_solve

MACRO_TOL = 1e-10


@dataclass
class PhysicalParams:
    """Coefficients of the homogenized models; tensors are diagonal (x,y) entries."""

    rho_c_f: float = 1.0
    rho_c_s: float = 1.0
    kappa_f: float = 0.1
    kappa_s: float = 0.4
    alpha: float = 0.1
    kappa_h_f: tuple = (0.0586, 0.0586)  # porous fluid conductivity, absolute
    kappa_h_s: tuple = (0.0, 0.0)        # porous solid conductivity, absolute
    yf: float = 0.6906
    ys: float = 0.3094
    gamma_area: float = 2.7451
    sigma_s: float = 0.0
    permeability: Optional[tuple] = None  # metadata only

    def __post_init__(self):
        for name in ("rho_c_f", "rho_c_s", "kappa_f", "kappa_s"):
            if getattr(self, name) <= 0:
                raise GeometryError(f"{name} must be positive")
        if self.alpha < 0 or self.gamma_area < 0 or self.sigma_s < 0:
            raise GeometryError("alpha and measures must be nonnegative")
        self.kappa_h_f = tuple(float(v) for v in np.atleast_1d(self.kappa_h_f)[:2])
        self.kappa_h_s = tuple(float(v) for v in np.atleast_1d(self.kappa_h_s)[:2])
        if len(self.kappa_h_f) == 1:
            self.kappa_h_f = self.kappa_h_f * 2
        if len(self.kappa_h_s) == 1:
            self.kappa_h_s = self.kappa_h_s * 2


@dataclass
class MacroState:
    theta: np.ndarray
    theta_s: Optional[np.ndarray] = None
    time: float = 0.0
    history: Optional[list] = None  # porous fluid snapshots, memory mode only

    def copy(self):
        return MacroState(
            theta=self.theta.copy(),
            theta_s=None if self.theta_s is None else self.theta_s.copy(),
            time=self.time,
            history=None if self.history is None else list(self.history),
        )


@dataclass
class VelocitySpec:
    """Face-normal velocities on the structured grid (u on vertical faces,
    v on horizontal faces); divergence-free by construction or rejected."""

    kind: str
    u_faces: np.ndarray  # (ny, nx+1)
    v_faces: np.ndarray  # (ny+1, nx)
    inflow_temperature: float = 0.0

    @property
    def vmax(self):
        return max(float(np.max(np.abs(self.u_faces))), float(np.max(np.abs(self.v_faces))))

    def is_zero(self):
        return self.vmax == 0.0


@dataclass
class SourceSpec:
    """Volumetric densities and the interface source on Sigma.

    f_sigma is a callable of time (per unit interface length); the split
    between fluid and solid follows the exterior-trace fraction sigma_s in the
    connected model, while the disconnected model puts all of it into the
    fluid flux balance.
    """

    f_f: float = 0.0
    f_s: float = 0.0
    f_sigma: Optional[Callable[[float], float]] = None

    def sigma_value(self, t):
        return float(self.f_sigma(t)) if self.f_sigma is not None else 0.0


def step_source(magnitude=1.0, t_off=10.0):
    """Interface source that is `magnitude` until t_off and zero afterwards."""

    def f(t):
        return magnitude if t <= t_off else 0.0

    return f


def oscillating_source(base=None, period=10.0, speed=2.0):
    """Time-compressed periodic replay of a base source profile."""
    base = base if base is not None else step_source()

    def f(t):
        return base(speed * (t % period))

    return f


@dataclass
class BCSide:
    kind: str = "insulated"  # insulated | dirichlet | robin
    value: float = 0.0       # dirichlet value
    coeff: float = 0.0       # robin exchange coefficient per unit area
    ambient: float = 0.0     # robin ambient temperature

    def __post_init__(self):
        if self.kind not in ("insulated", "dirichlet", "robin"):
            raise GeometryError(f"unknown boundary kind {self.kind!r}")


SIDES = ("bottom", "top", "left", "right")


@dataclass
class BoundarySpec:
    fluid: dict = field(default_factory=dict)
    solid: dict = field(default_factory=dict)

    def __post_init__(self):
        for d in (self.fluid, self.solid):
            for side in d:
                if side not in SIDES:
                    raise GeometryError(f"unknown boundary side {side!r}")
        self.fluid = {s: self.fluid.get(s, BCSide()) for s in SIDES}
        self.solid = {s: self.solid.get(s, BCSide()) for s in SIDES}


def make_velocity(kind, grid: MacroGrid, darcy_flux=0.0, peak=1.0,
                  inflow_temperature=0.0, u_faces=None, v_faces=None) -> VelocitySpec:
    """Velocity fields: zero, a parallel channel profile over a uniform Darcy
    flux, or user-supplied face data (validated to be divergence-free)."""
    ny, nx = grid.ny, grid.nx
    if kind == "zero":
        return VelocitySpec("zero", np.zeros((ny, nx + 1)), np.zeros((ny + 1, nx)),
                            inflow_temperature)
    if kind == "parallel_channel":
        u = np.zeros((ny, nx + 1))
        y = (np.arange(ny) + 0.5) * grid.dy
        h, H = grid.interface_height, grid.height
        profile = peak * 4.0 * (y - h) * (H - y) / (H - h) ** 2
        ff_rows = y > h
        u[ff_rows, :] = profile[ff_rows, None]
        u[~ff_rows, :] = darcy_flux
        return VelocitySpec("parallel_channel", u, np.zeros((ny + 1, nx)), inflow_temperature)
    if kind == "custom_faces":
        u = np.asarray(u_faces, float)
        v = np.asarray(v_faces, float)
        if u.shape != (ny, nx + 1) or v.shape != (ny + 1, nx):
            raise GeometryError("custom face velocity arrays have the wrong shape")
        div = (u[:, 1:] - u[:, :-1]) * grid.dy + (v[1:, :] - v[:-1, :]) * grid.dx
        scale = max(np.max(np.abs(u)), np.max(np.abs(v)), 1.0)
        if np.max(np.abs(div)) > 1e-10 * scale * (grid.dx + grid.dy):
            raise GeometryError("custom velocity is not discretely divergence-free")
        return VelocitySpec("custom_faces", u, v, inflow_temperature)
    raise GeometryError(f"unknown velocity kind {kind!r}")


# ---------------------------------------------------------------------------
# assembly


class MacroSystem:
    """Implicit-Euler operator for one model variant on a fixed grid.

    case "b": two fields (fluid everywhere + solid on porous cells).
    case "a": fluid field only, interface exchange supplied per step.
    case "memory": fluid field only, current-time kernel tap in the matrix.
    Stationary variants drop the capacity terms.
    """

    def __init__(self, grid: MacroGrid, params: PhysicalParams, velocity=None,
                 bcs=None, dt=None, case="b", kernel=None, tol=MACRO_TOL):
        self.grid = grid
        self.params = params
        self.velocity = velocity if velocity is not None else make_velocity("zero", grid)
        self.bcs = bcs if bcs is not None else BoundarySpec()
        self.dt = dt
        self.case = case
        self.kernel = kernel
        self.tol = tol
        if case not in ("a", "b", "memory"):
            raise GeometryError(f"unknown case {case!r}")
        if case == "memory":
            if kernel is None:
                raise GeometryError("memory case needs a kernel")
            if dt is not None and abs(kernel.dt - dt) > 1e-12 * max(1.0, dt):
                raise GeometryError(f"kernel dt {kernel.dt} does not match run dt {dt}")

        self.porous = grid.porous_mask()
        self.porous_ids = grid.porous_ids()
        self.n_fluid = grid.n_cells
        self.n_porous = len(self.porous_ids)
        self.has_solid = case == "b"
        self.n_unknowns = self.n_fluid + (self.n_porous if self.has_solid else 0)
        self.solid_index = -np.ones(grid.n_cells, dtype=np.int64)
        self.solid_index[self.porous_ids] = self.n_fluid + np.arange(self.n_porous)

        self._assemble()
        self._warm = None

    # -- coefficient helpers ------------------------------------------------

    def _cell_conductivity(self, axis):
        lam = np.full(self.grid.n_cells, self.params.kappa_f)
        lam[self.porous] = self.params.kappa_h_f[axis]
        return lam

    def _solid_conductivity(self, axis):
        return self.params.kappa_h_s[axis]

    def capacity(self):
        cap = np.full(self.grid.n_cells, self.params.rho_c_f)
        cap[self.porous] = self.params.yf * self.params.rho_c_f
        return cap

    # -- assembly -----------------------------------------------------------

    def _assemble(self):
        g, p = self.grid, self.params
        nx, ny = g.nx, g.ny
        dx, dy, vc = g.dx, g.dy, g.cell_volume
        rows, cols, vals = [], [], []
        rhs_const = np.zeros(self.n_unknowns)

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        transient = self.dt is not None
        if transient:
            cap = self.capacity() * vc / self.dt
            for c in range(self.n_fluid):
                add(c, c, cap[c])
            self._cap_fluid = cap
            if self.has_solid:
                cap_s = p.ys * p.rho_c_s * vc / self.dt
                for k in range(self.n_porous):
                    add(self.n_fluid + k, self.n_fluid + k, cap_s)
                self._cap_solid = cap_s

        # fluid diffusion, vertical faces (x direction)
        lam_x = self._cell_conductivity(0)
        for j in range(ny):
            for i in range(nx - 1):
                a, b = g.cell_id(i, j), g.cell_id(i + 1, j)
                t = (dy / dx) * 2 * lam_x[a] * lam_x[b] / (lam_x[a] + lam_x[b])
                add(a, a, t); add(b, b, t); add(a, b, -t); add(b, a, -t)

        # fluid diffusion, horizontal faces (y direction), Sigma row handled below
        lam_y = self._cell_conductivity(1)
        beta = p.alpha * p.sigma_s if self.has_solid else 0.0
        self._sigma_rows = []
        for j in range(ny - 1):
            for i in range(nx):
                a, b = g.cell_id(i, j), g.cell_id(i, j + 1)
                if j == g.j_sigma - 1:
                    lamS = 2 * lam_y[a] / dy  # per unit area, half-cell
                    lamN = 2 * lam_y[b] / dy
                    den = lamS + lamN + beta
                    A = dx
                    add(a, a, A * lamS * (lamN + beta) / den)
                    add(b, b, A * lamN * (lamS + beta) / den)
                    add(a, b, -A * lamS * lamN / den)
                    add(b, a, -A * lamS * lamN / den)
                    srow = self.solid_index[a] if self.has_solid else -1
                    if self.has_solid and beta > 0:
                        add(srow, srow, A * beta * (lamS + lamN) / den)
                        add(srow, a, -A * beta * lamS / den)
                        add(a, srow, -A * beta * lamS / den)
                        add(srow, b, -A * beta * lamN / den)
                        add(b, srow, -A * beta * lamN / den)
                    # coefficients multiplying the fluid-deposited interface source
                    self._sigma_rows.append((a, b, srow, A * lamS / den, A * lamN / den,
                                             A * beta / den, A))
                else:
                    t = (dx / dy) * 2 * lam_y[a] * lam_y[b] / (lam_y[a] + lam_y[b])
                    add(a, a, t); add(b, b, t); add(a, b, -t); add(b, a, -t)

        # solid diffusion inside the porous layer
        if self.has_solid:
            ks_x, ks_y = self._solid_conductivity(0), self._solid_conductivity(1)
            for j in range(g.j_sigma):
                for i in range(nx - 1):
                    a = self.solid_index[g.cell_id(i, j)]
                    b = self.solid_index[g.cell_id(i + 1, j)]
                    if ks_x > 0:
                        t = (dy / dx) * ks_x
                        add(a, a, t); add(b, b, t); add(a, b, -t); add(b, a, -t)
            for j in range(g.j_sigma - 1):
                for i in range(nx):
                    a = self.solid_index[g.cell_id(i, j)]
                    b = self.solid_index[g.cell_id(i, j + 1)]
                    if ks_y > 0:
                        t = (dx / dy) * ks_y
                        add(a, a, t); add(b, b, t); add(a, b, -t); add(b, a, -t)

        # volumetric exchange on porous cells
        alpha_gamma = p.alpha * p.gamma_area * vc
        if self.case == "b":
            for c in self.porous_ids:
                s = self.solid_index[c]
                add(c, c, alpha_gamma); add(s, s, alpha_gamma)
                add(c, s, -alpha_gamma); add(s, c, -alpha_gamma)
        elif self.case == "a":
            for c in self.porous_ids:
                add(c, c, alpha_gamma)
        else:  # memory: current-time kernel tap enters the matrix
            tap = p.alpha * (p.gamma_area - self.kernel.dt * self.kernel.psi[0]) * vc
            for c in self.porous_ids:
                add(c, c, tap)

        # external boundaries
        self._apply_bcs(add, rhs_const)

        n = self.n_unknowns
        self.diff_matrix = sp.csr_matrix(
            (np.asarray(vals, float), (np.asarray(rows), np.asarray(cols))), shape=(n, n)
        )
        self.rhs_const = rhs_const

        conv = self._convection_matrix()
        self.conv_matrix, self.rhs_inflow = conv
        self.matrix = (self.diff_matrix + self.conv_matrix).tocsr()
        self.symmetric = self.velocity.is_zero()
        self._diag = self.matrix.diagonal()

    def _apply_bcs(self, add, rhs_const):
        g, p = self.grid, self.params
        nx, ny = g.nx, g.ny
        dx, dy = g.dx, g.dy
        lam_x, lam_y = self._cell_conductivity(0), self._cell_conductivity(1)

        def bc_terms(bc, lam, delta, area):
            if bc.kind == "dirichlet":
                k = 2 * lam * area / delta
                return k, k * bc.value
            if bc.kind == "robin" and bc.coeff > 0:
                k = area / (delta / (2 * lam) + 1.0 / bc.coeff)
                return k, k * bc.ambient
            return 0.0, 0.0

        fluid_sides = [
            ("bottom", [g.cell_id(i, 0) for i in range(nx)], lam_y, dy, dx),
            ("top", [g.cell_id(i, ny - 1) for i in range(nx)], lam_y, dy, dx),
            ("left", [g.cell_id(0, j) for j in range(ny)], lam_x, dx, dy),
            ("right", [g.cell_id(nx - 1, j) for j in range(ny)], lam_x, dx, dy),
        ]
        for side, cells, lam, delta, area in fluid_sides:
            bc = self.bcs.fluid[side]
            if bc.kind == "insulated":
                continue
            for c in cells:
                k, r = bc_terms(bc, lam[c], delta, area)
                if k:
                    add(c, c, k)
                    rhs_const[c] += r

        if self.has_solid:
            ks_x, ks_y = self._solid_conductivity(0), self._solid_conductivity(1)
            solid_sides = [
                ("bottom", [g.cell_id(i, 0) for i in range(nx)], ks_y, dy, dx),
                ("left", [g.cell_id(0, j) for j in range(g.j_sigma)], ks_x, dx, dy),
                ("right", [g.cell_id(nx - 1, j) for j in range(g.j_sigma)], ks_x, dx, dy),
            ]
            for side, cells, lam, delta, area in solid_sides:
                bc = self.bcs.solid[side]
                if bc.kind == "insulated":
                    continue
                for c in cells:
                    s = self.solid_index[c]
                    if bc.kind == "dirichlet" and lam > 0:
                        k, r = bc_terms(bc, lam, delta, area)
                    elif bc.kind == "robin" and bc.coeff > 0:
                        if lam > 0:
                            k = area / (delta / (2 * lam) + 1.0 / bc.coeff)
                        else:
                            k = area * bc.coeff  # no internal resistance left
                        r = k * bc.ambient
                    else:
                        continue
                    if k:
                        add(s, s, k)
                        rhs_const[s] += r

    def _convection_matrix(self):
        g, p = self.grid, self.params
        nx, ny = g.nx, g.ny
        dx, dy = g.dx, g.dy
        u, v = self.velocity.u_faces, self.velocity.v_faces
        n = self.n_unknowns
        rows, cols, vals = [], [], []
        rhs = np.zeros(n)

        def upwind(cl, cr, q):
            # q: signed volumetric heat-capacity flux from cl to cr
            if q > 0:
                rows.extend([cl, cr]); cols.extend([cl, cl]); vals.extend([q, -q])
            elif q < 0:
                rows.extend([cr, cl]); cols.extend([cr, cr]); vals.extend([-q, q])

        def boundary(c, q_out, bc):
            # q_out > 0: outflow carries the cell value; inflow carries theta_in
            if q_out > 0:
                rows.append(c); cols.append(c); vals.append(q_out)
            elif q_out < 0:
                theta_in = bc.value if bc.kind == "dirichlet" else self.velocity.inflow_temperature
                rhs[c] += -q_out * theta_in

        rc = p.rho_c_f
        for j in range(ny):
            for i in range(nx - 1):
                upwind(g.cell_id(i, j), g.cell_id(i + 1, j), rc * u[j, i + 1] * dy)
            boundary(g.cell_id(0, j), -rc * u[j, 0] * dy, self.bcs.fluid["left"])
            boundary(g.cell_id(nx - 1, j), rc * u[j, nx] * dy, self.bcs.fluid["right"])
        for i in range(nx):
            for j in range(ny - 1):
                upwind(g.cell_id(i, j), g.cell_id(i, j + 1), rc * v[j + 1, i] * dx)
            boundary(g.cell_id(i, 0), -rc * v[0, i] * dx, self.bcs.fluid["bottom"])
            boundary(g.cell_id(i, ny - 1), rc * v[ny, i] * dx, self.bcs.fluid["top"])

        if rows:
            mat = sp.csr_matrix((np.asarray(vals, float), (np.asarray(rows), np.asarray(cols))),
                                shape=(n, n))
        else:
            mat = sp.csr_matrix((n, n))
        return mat, rhs

    # -- right-hand side and solve -------------------------------------------

    def _volumetric_rhs(self, sources: SourceSpec):
        g, p = self.grid, self.params
        rhs = np.zeros(self.n_unknowns)
        f_f = np.broadcast_to(np.asarray(sources.f_f, float), (g.n_cells,))
        scale = np.where(self.porous, p.yf, 1.0) * g.cell_volume
        rhs[: self.n_fluid] += scale * f_f
        if self.has_solid:
            f_s = np.broadcast_to(np.asarray(sources.f_s, float), (g.n_cells,))
            rhs[self.n_fluid:] += p.ys * g.cell_volume * f_s[self.porous_ids]
        return rhs

    def _sigma_rhs(self, f_sigma_value):
        rhs = np.zeros(self.n_unknowns)
        if f_sigma_value == 0.0:
            return rhs
        p = self.params
        if self.case == "b":
            s_f = (1.0 - p.sigma_s) * f_sigma_value
        else:
            s_f = f_sigma_value
        for a, b, srow, cS, cN, cB, area in self._sigma_rows:
            rhs[a] += cS * s_f
            rhs[b] += cN * s_f
            if srow >= 0:
                rhs[srow] += cB * s_f + area * p.sigma_s * f_sigma_value
        return rhs

    def step_rhs(self, state: MacroState, sources: SourceSpec, exchange=None,
                 memory_data=None):
        """RHS for the implicit step to t + dt; sources evaluated at the new time."""
        if self.dt is None:
            raise GeometryError("system was built without dt")
        t_new = state.time + self.dt
        rhs = self.rhs_const + self.rhs_inflow + self._volumetric_rhs(sources)
        rhs += self._sigma_rhs(sources.sigma_value(t_new))
        rhs[: self.n_fluid] += self._cap_fluid * state.theta
        if self.has_solid:
            rhs[self.n_fluid:] += self._cap_solid * state.theta_s
        vc = self.grid.cell_volume
        if self.case == "a":
            if exchange is None:
                raise GeometryError("case (a) step needs the interface exchange field")
            rhs[self.porous_ids] += self.params.alpha * vc * np.asarray(exchange, float)
        if self.case == "memory":
            if memory_data is None:
                raise GeometryError("memory step needs the history convolution data")
            rhs[self.porous_ids] += self.params.alpha * vc * np.asarray(memory_data, float)
        return rhs

    def solve(self, rhs, x0=None):
        if self.symmetric:
            x, rep = cg_solve(self.matrix, rhs, tol=self.tol, diag=self._diag, x0=x0)
        else:
            x, rep = bicgstab_solve(self.matrix, rhs, tol=self.tol, diag=self._diag, x0=x0)
        if not rep.converged:
            raise SolverError(
                f"macro solve stalled at residual {rep.residual:.2e} "
                f"after {rep.iterations} iterations", rep
            )
        return x

    def split(self, x):
        theta = x[: self.n_fluid]
        theta_s = x[self.n_fluid:] if self.has_solid else None
        return theta, theta_s


# ---------------------------------------------------------------------------
# steppers


def step_case_b(system: MacroSystem, state: MacroState, sources: SourceSpec) -> MacroState:
    """One implicit-Euler step of the two-temperature (connected-matrix) model."""
    if system.case != "b":
        raise GeometryError("system was not built for case (b)")
    rhs = system.step_rhs(state, sources)
    x0 = np.concatenate([state.theta, state.theta_s])
    x = system.solve(rhs, x0=x0)
    theta, theta_s = system.split(x)
    return MacroState(theta=theta, theta_s=theta_s, time=state.time + system.dt)


def step_case_a_macro(system: MacroSystem, state: MacroState, exchange,
                      sources: SourceSpec) -> MacroState:
    """One implicit step of the fluid field with a lagged micro interface integral.

    `exchange` holds the interpolated trace integral of the micro solid per
    porous cell; it enters explicitly while the |Gamma|*theta term is implicit.
    """
    if system.case != "a":
        raise GeometryError("system was not built for case (a)")
    rhs = system.step_rhs(state, sources, exchange=exchange)
    x = system.solve(rhs, x0=state.theta)
    theta, _ = system.split(x)
    return MacroState(theta=theta, time=state.time + system.dt)


def step_memory(system: MacroSystem, state: MacroState, kernel, aux,
                sources: SourceSpec) -> MacroState:
    """One implicit step of the non-local reformulation.

    The interface integral of the eliminated solid is the discrete convolution
    of the fluid history with the kernel plus the auxiliary data series; the
    current-time tap sits in the system matrix, the rest enters the RHS.
    Algebraically identical to the converged coupled step when `aux` is the
    eliminated trace source.
    """
    if system.case != "memory":
        raise GeometryError("system was not built for the memory case")
    if abs(kernel.dt - system.dt) > 1e-12 * max(1.0, system.dt):
        raise GeometryError("kernel dt does not match the system dt")
    if state.history is None:
        raise GeometryError("memory state needs a history of porous fluid snapshots")
    n = len(state.history) - 1  # history[m] = porous theta at t_m, m = 0..n
    if len(kernel.psi) < n + 1:
        raise GeometryError("kernel horizon is shorter than the run")
    if len(aux.samples) < n + 2:
        raise GeometryError("auxiliary source series is shorter than the run")

    conv = np.zeros(system.n_porous)
    # sum_{m=2}^{n+1} psi_m * theta_f(t_{n+2-m}); the m=1 tap is in the matrix
    for m in range(2, n + 2):
        conv += kernel.psi[m - 1] * state.history[n + 2 - m]
    data = kernel.dt * conv + aux.samples[n + 1]

    rhs = system.step_rhs(state, sources, memory_data=data)
    x = system.solve(rhs, x0=state.theta)
    theta, _ = system.split(x)
    new = MacroState(theta=theta, time=state.time + system.dt,
                     history=list(state.history))
    new.history.append(theta[system.porous_ids].copy())
    return new


def initial_state(grid: MacroGrid, theta0=0.0, theta_s0=None, case="b",
                  with_history=False) -> MacroState:
    theta = np.broadcast_to(np.asarray(theta0, float), (grid.n_cells,)).copy()
    theta_s = None
    if case == "b":
        base = theta_s0 if theta_s0 is not None else theta0
        theta_s = np.broadcast_to(np.asarray(base, float), (len(grid.porous_ids()),)).copy()
    state = MacroState(theta=theta, theta_s=theta_s, time=0.0)
    if with_history:
        state.history = [theta[grid.porous_ids()].copy()]
    return state


def solve_stationary(grid, params, sources=None, bcs=None, velocity=None, case="b",
                     tol=MACRO_TOL) -> MacroState:
    """Steady state of either model; the disconnected micro exchange vanishes
    because the stationary solid equilibrates with the local fluid temperature."""
    sources = sources if sources is not None else SourceSpec()
    system = MacroSystem(grid, params, velocity=velocity, bcs=bcs, dt=None,
                         case="b" if case == "b" else "a", tol=tol)
    if case != "b":
        # no exchange and no capacity: drop the alpha*|Gamma| diagonal added for case (a)
        vc = grid.cell_volume
        drop = params.alpha * params.gamma_area * vc
        fix = sp.csr_matrix(
            (np.full(system.n_porous, -drop), (system.porous_ids, system.porous_ids)),
            shape=(system.n_unknowns, system.n_unknowns),
        )
        system.matrix = (system.matrix + fix).tocsr()
        system._diag = system.matrix.diagonal()

    has_anchor = any(bc.kind in ("dirichlet", "robin") for bc in system.bcs.fluid.values())
    if case == "b":
        has_anchor = has_anchor or any(
            bc.kind in ("dirichlet", "robin") for bc in system.bcs.solid.values()
        )
    if not has_anchor:
        raise SolverError("stationary system is singular: every boundary is insulated")

    rhs = system.rhs_const + system.rhs_inflow + system._volumetric_rhs(sources)
    rhs += system._sigma_rhs(sources.sigma_value(0.0))
    if case != "b":
        # stationary micro balance hands the solid heat production to the fluid
        rhs[system.porous_ids] += params.ys * grid.cell_volume * np.broadcast_to(
            np.asarray(sources.f_s, float), (grid.n_cells,)
        )[system.porous_ids]
    x = system.solve(rhs)
    theta, theta_s = system.split(x)
    return MacroState(theta=theta, theta_s=theta_s, time=np.inf)
