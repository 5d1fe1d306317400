"""Micro-macro coupling for the disconnected model.

Each macro time step runs a fixed-point iteration: a predictor macro step
with the lagged micro interface integrals, then alternating micro ensemble
steps (at the collocation points, driven by the sampled fluid temperature)
and macro re-steps until the fluid update stalls below the tolerance.  The
interface integral is interpolated from the points to the porous cells; the
fluid temperature is sampled with the volume-weighted transpose of that
interpolation, which makes the exchanged heat balance exactly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cell_transient import SolidCellProblem
from .geometry import GeometryError, MacroGrid
from .macro_solver import MacroState, MacroSystem, SourceSpec, step_case_a_macro


class CouplingError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class CollocationSet:
    """Micro solve locations plus interpolation onto the porous cells.

    weights: (n_porous, n_points) convex rows; sample = volume-weighted
    transpose used to pull the macro fluid temperature to the points.
    """

    points: np.ndarray
    weights: sp.csr_matrix
    sample: sp.csr_matrix
    pattern: tuple

    @property
    def n_points(self):
        return self.points.shape[0]


def build_collocation(grid: MacroGrid, pattern) -> CollocationSet:
    """Patterns: ("line", n) vertical line through the porous layer,
    ("lattice", nx, ny) tensor grid over the porous layer, ("all",) one point
    per porous cell."""
    kind = pattern[0]
    h = grid.interface_height
    if kind == "line":
        n = int(pattern[1])
        if n < 1:
            raise GeometryError("line pattern needs at least one point")
        ys = np.linspace(0.0, h, n) if n > 1 else np.array([h / 2])
        xs = np.full(n, grid.length / 2)
        points = np.stack([xs, ys], axis=1)
    elif kind == "lattice":
        nxp, nyp = int(pattern[1]), int(pattern[2])
        if nxp < 1 or nyp < 1:
            raise GeometryError("lattice pattern needs positive counts")
        xs = np.linspace(0.0, grid.length, nxp) if nxp > 1 else np.array([grid.length / 2])
        ys = np.linspace(0.0, h, nyp) if nyp > 1 else np.array([h / 2])
        X, Y = np.meshgrid(xs, ys)
        points = np.stack([X.ravel(), Y.ravel()], axis=1)
    elif kind == "all":
        x, y = grid.cell_centers()
        ids = grid.porous_ids()
        points = np.stack([x[ids], y[ids]], axis=1)
    else:
        raise GeometryError(f"unknown collocation pattern {kind!r}")

    if np.any(points[:, 1] > h + 1e-12):
        raise GeometryError("collocation points must lie in the porous layer")

    weights = _interp_weights(grid, points, pattern=kind)
    vc = grid.cell_volume
    point_volume = np.asarray(weights.sum(axis=0)).ravel() * vc
    point_volume = np.where(point_volume > 0, point_volume, 1.0)
    sample = sp.csr_matrix(weights.T.multiply(vc) / point_volume[:, None])
    return CollocationSet(points=points, weights=weights, sample=sample,
                          pattern=tuple(pattern))


def _interp_weights(grid, points, pattern):
    """Convex interpolation weights from points to porous cell centers.

    For the line pattern the weights are linear in the wall-normal coordinate;
    for a lattice they are bilinear; a single point gets weight one.  Cell
    centers outside the point hull clamp to the nearest point coordinate.
    """
    ids = grid.porous_ids()
    x, y = grid.cell_centers()
    cx, cy = x[ids], y[ids]
    n_cells, n_pts = len(ids), len(points)

    if pattern == "all":
        return sp.identity(n_cells, format="csr")

    xs = np.unique(np.round(points[:, 0], 12))
    ys = np.unique(np.round(points[:, 1], 12))
    lookup = {}
    for k, (px, py) in enumerate(points):
        lookup[(round(px, 12), round(py, 12))] = k
    if len(lookup) != n_pts:
        raise GeometryError("collocation points must be distinct")

    def axis_weights(coords, targets):
        """(index_lo, index_hi, weight_hi) per target, clamped to the hull."""
        t = np.clip(targets, coords[0], coords[-1])
        hi = np.searchsorted(coords, t)
        hi = np.clip(hi, 1, len(coords) - 1) if len(coords) > 1 else np.zeros_like(hi)
        lo = hi - 1 if len(coords) > 1 else hi
        if len(coords) == 1:
            return np.zeros(len(t), int), np.zeros(len(t), int), np.zeros(len(t))
        w = (t - coords[lo]) / (coords[hi] - coords[lo])
        return lo, hi, w

    ilo, ihi, wx = axis_weights(xs, cx)
    jlo, jhi, wy = axis_weights(ys, cy)
    rows, cols, vals = [], [], []
    for c in range(n_cells):
        contribs = [
            (xs[ilo[c]], ys[jlo[c]], (1 - wx[c]) * (1 - wy[c])),
            (xs[ihi[c]], ys[jlo[c]], wx[c] * (1 - wy[c])),
            (xs[ilo[c]], ys[jhi[c]], (1 - wx[c]) * wy[c]),
            (xs[ihi[c]], ys[jhi[c]], wx[c] * wy[c]),
        ]
        acc = {}
        for px, py, w in contribs:
            if w == 0.0:
                continue
            key = lookup.get((round(px, 12), round(py, 12)))
            if key is None:
                raise GeometryError("collocation pattern is not a tensor grid")
            acc[key] = acc.get(key, 0.0) + w
        for k, w in acc.items():
            rows.append(c)
            cols.append(k)
            vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_cells, n_pts))


@dataclass
class MicroEnsemble:
    """Per-collocation-point solid cell fields sharing one implicit operator."""

    problem: SolidCellProblem
    values: np.ndarray  # (n_solid_voxels, n_points)
    time: float = 0.0

    @classmethod
    def constant(cls, problem: SolidCellProblem, n_points, theta_s0=0.0):
        vals = np.full((problem.n_unknowns, n_points), float(theta_s0))
        return cls(problem=problem, values=vals)

    def trace_integrals(self):
        return self.problem.trace_weights @ self.values

    def volume_averages(self):
        return (self.problem.vol @ self.values) / self.problem.solid_volume

    def solid_volume_integrals(self):
        return self.problem.vol @ self.values


@dataclass
class IterationTrace:
    errors: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    tau: float = 0.0

    def ratios(self):
        e = np.asarray(self.errors)
        return e[1:] / np.where(e[:-1] > 0, e[:-1], np.inf)


@dataclass
class ContractionBound:
    rho: float
    valid: bool
    ingredients: dict = field(default_factory=dict)


def contraction_bound(params, dt, velocity=None, delta=None) -> ContractionBound:
    """Geometric decay rate of the fixed-point iteration.

    rho = alpha|Gamma| / (alpha|Gamma| + rho_c_f |Yf|/dt - (rho_c_f)^2 vmax^2/(2 delta)),
    with delta defaulting to the coercivity constant of the porous fluid
    conductivity (its smallest diagonal entry).  Flagged invalid when the
    time-step condition |Yf|/dt > rho_c_f vmax^2/(2 delta) fails.
    """
    lam = min(params.kappa_h_f)
    if delta is None:
        delta = lam
    if not 0 < delta < 2 * lam + 1e-300:
        raise GeometryError("delta must lie in (0, 2*lambda)")
    vmax = velocity.vmax if velocity is not None else 0.0
    ag = params.alpha * params.gamma_area
    convective = params.rho_c_f**2 * vmax**2 / (2 * delta)
    denom = ag + params.rho_c_f * params.yf / dt - convective
    valid = params.yf / dt > params.rho_c_f * vmax**2 / (2 * delta) and denom > ag
    rho = ag / denom if denom > 0 else np.inf
    return ContractionBound(
        rho=float(rho),
        valid=bool(valid and 0 <= rho < 1),
        ingredients={
            "alpha": params.alpha, "gamma_area": params.gamma_area,
            "rho_c_f": params.rho_c_f, "yf": params.yf, "dt": dt,
            "vmax": vmax, "delta": delta, "lambda": lam,
        },
    )


def advance_case_a(system: MacroSystem, state: MacroState, micro: MicroEnsemble,
                   colloc: CollocationSet, sources: SourceSpec, tau, max_iter=50):
    """One macro time step of the disconnected model by fixed-point iteration.

    Returns (new macro state, new micro ensemble, iteration trace).  The error
    is the volume-weighted L2 norm of the fluid update over both layers.
    """
    if system.case != "a":
        raise GeometryError("system was not built for case (a)")
    if tau <= 0:
        raise GeometryError("tolerance tau must be positive")
    grid = system.grid
    porous_ids = system.porous_ids
    vc = grid.cell_volume
    t_new = state.time + system.dt
    f_s_new = sources.f_s  # solid source density, handed to the micro problems

    def exchange_from(values_block):
        return colloc.weights @ (micro.problem.trace_weights @ values_block)

    trace = IterationTrace(tau=tau)
    # predictor with the previous-time micro states
    exchange = exchange_from(micro.values)
    current = step_case_a_macro(system, state, exchange, sources)
    micro_values = micro.values
    warm = micro.values

    for k in range(max_iter):
        theta_pts = colloc.sample @ current.theta[porous_ids]
        micro_values = micro.problem.step_block(micro.values, theta_pts, f_s=f_s_new, x0=warm)
        warm = micro_values
        exchange = exchange_from(micro_values)
        updated = step_case_a_macro(system, state, exchange, sources)
        err = np.sqrt(vc * float(np.sum((updated.theta - current.theta) ** 2)))
        trace.errors.append(err)
        trace.iterations = k + 1
        current = updated
        if err < tau:
            trace.converged = True
            new_micro = MicroEnsemble(problem=micro.problem, values=micro_values, time=t_new)
            return current, new_micro, trace

    raise CouplingError(
        f"fixed point did not reach tau={tau} within {max_iter} iterations "
        f"(last error {trace.errors[-1]:.3e}); a smaller dt restores contraction",
        trace,
    )
