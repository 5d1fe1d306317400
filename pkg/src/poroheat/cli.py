"""Config-driven run orchestration and deterministic file outputs.

Config files are line-oriented ``key = value`` under ``[section]`` headers
(INI syntax, ``#`` comments).  Omitted physical parameters fall back to the
reference values kappa_f=0.1, kappa_s=0.4, alpha=0.1, unit heat capacities,
dt=0.1 and tau=1e-5.  Every run writes a ``manifest.txt`` with a sha256 per
emitted file; float output uses 17 significant digits so byte-identical
reruns are checkable.
"""

import argparse
import hashlib
import io
import re
import sys
from configparser import ConfigParser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cell_stationary, cell_transient, coupling, diagnostics, geometry, macro_solver
from .coupling import CouplingError
from .linalg import SolverError


class ConfigError(ValueError):
    pass


FLOAT_FMT = "%.17g"

_SECTION_KEYS = {
    "run": {"mode", "dt", "t_end", "tau", "max_iter", "theta0", "theta_s0", "case", "out"},
    "cell": {"dimension", "resolution", "label", "primitives", "micro_resolution",
             "micro_dimension", "fluid_fraction", "solid_fraction", "interface_area",
             "exterior_trace"},
    "physical": {"kappa_f", "kappa_s", "alpha", "rho_c_f", "rho_c_s", "kappa_h_f",
                 "kappa_h_s", "yf", "ys", "gamma", "sigma_s", "permeability"},
    "grid": {"length", "height", "interface", "nx", "ny"},
    "velocity": {"kind", "darcy_flux", "peak", "inflow_temperature"},
    "source": {"f_f", "f_s", "f_sigma", "oscillate", "oscillate_period", "oscillate_speed"},
    "boundary": {"fluid_bottom", "fluid_top", "fluid_left", "fluid_right",
                 "solid_bottom", "solid_left", "solid_right"},
    "collocation": {"pattern"},
    "kernel": {"horizon", "aux"},
    "transition": {"values"},
}
_TRANSITION_CASE_KEYS = {"gamma", "sigma_s", "kappa_hf_ratio", "kappa_hs_ratio"}

MODES = ("tensors", "kernel", "steady", "transient-a", "transient-b", "memory",
         "transition", "convection")


@dataclass
class RunConfig:
    """Validated configuration; `data` is the canonical nested dict."""

    data: dict

    @property
    def mode(self):
        return self.data["run"]["mode"]

    def section(self, name):
        return self.data.get(name, {})

    def get(self, section, key, default=None):
        return self.data.get(section, {}).get(key, default)


# ---------------------------------------------------------------------------
# parsing


def _to_float(s, where):
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {s!r}") from None


def _to_int(s, where):
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {s!r}") from None


def _to_floats(s, where):
    parts = [p for p in re.split(r"[,\s]+", s.strip()) if p]
    return tuple(_to_float(p, where) for p in parts)


_PRIM_RE = re.compile(r"^(cube|sphere|bar)\((.*)\)$")


def parse_primitives(text, dimension):
    """`cube(side=..)`, `sphere(radius=..)`, `bar(axis=.., half_widths=.. ..)`
    separated by `|`; optional `center=..` with space-separated coordinates."""
    prims = []
    for chunk in text.split("|"):
        chunk = chunk.strip()
        if not chunk:
            continue
        m = _PRIM_RE.match(chunk)
        if not m:
            raise ConfigError(f"cannot parse primitive {chunk!r}")
        name, body = m.group(1), m.group(2)
        kwargs = {}
        for part in body.split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ConfigError(f"primitive argument {part!r} needs key=value")
            k, v = [p.strip() for p in part.split("=", 1)]
            kwargs[k] = v
        where = f"primitive {chunk!r}"
        if name == "cube":
            _check_keys(kwargs, {"side", "center"}, where)
            prims.append(geometry.Cube(
                side=_to_float(kwargs["side"], where),
                center=_to_floats(kwargs["center"], where) if "center" in kwargs else None,
            ))
        elif name == "sphere":
            _check_keys(kwargs, {"radius", "center"}, where)
            prims.append(geometry.Sphere(
                radius=_to_float(kwargs["radius"], where),
                center=_to_floats(kwargs["center"], where) if "center" in kwargs else None,
            ))
        else:
            _check_keys(kwargs, {"axis", "half_widths", "center"}, where)
            prims.append(geometry.AxisBar(
                axis=_to_int(kwargs["axis"], where),
                half_widths=_to_floats(kwargs["half_widths"], where),
                center=_to_floats(kwargs["center"], where) if "center" in kwargs else None,
            ))
    return tuple(prims)


def _check_keys(d, allowed, where):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")


def parse_config(text) -> RunConfig:
    cp = ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except Exception as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc

    data = {}
    for section in cp.sections():
        base = section.split()[0]
        if base == "transition" and section != "transition":
            allowed = _TRANSITION_CASE_KEYS
        elif section in _SECTION_KEYS:
            allowed = _SECTION_KEYS[section]
        else:
            raise ConfigError(f"unknown section [{section}]")
        keys = dict(cp.items(section))
        _check_keys(keys, allowed, f"[{section}]")
        data[section] = dict(keys)

    data.setdefault("run", {})
    run = data["run"]
    mode = run.get("mode")
    if mode not in MODES:
        raise ConfigError(f"[run] mode must be one of {', '.join(MODES)}, got {mode!r}")

    cfg = _normalize(data)
    _validate(cfg)
    return cfg


def _normalize(raw):
    """Convert strings to typed values; fill the reference defaults."""
    d = {}
    run = raw.get("run", {})
    d["run"] = {
        "mode": run["mode"],
        "dt": _to_float(run.get("dt", "0.1"), "[run] dt"),
        "t_end": _to_float(run.get("t_end", "20.0"), "[run] t_end"),
        "tau": _to_float(run.get("tau", "1e-5"), "[run] tau"),
        "max_iter": _to_int(run.get("max_iter", "50"), "[run] max_iter"),
        "theta0": _to_float(run.get("theta0", "0.0"), "[run] theta0"),
        "theta_s0": _to_float(run.get("theta_s0", run.get("theta0", "0.0")), "[run] theta_s0"),
        "case": run.get("case", "b"),
        "out": run.get("out", "out"),
    }

    cell = raw.get("cell", {})
    dim = _to_int(cell.get("dimension", "3"), "[cell] dimension")
    c = {
        "dimension": dim,
        "resolution": _to_int(cell.get("resolution", "32"), "[cell] resolution"),
        "label": cell.get("label", ""),
        "primitives": cell.get("primitives", ""),
        "micro_resolution": _to_int(cell.get("micro_resolution", cell.get("resolution", "32")),
                                    "[cell] micro_resolution"),
        "micro_dimension": _to_int(cell.get("micro_dimension", str(dim)),
                                   "[cell] micro_dimension"),
    }
    for k in ("fluid_fraction", "solid_fraction", "interface_area", "exterior_trace"):
        if k in cell:
            c[k] = _to_float(cell[k], f"[cell] {k}")
    d["cell"] = c

    phys = raw.get("physical", {})
    p = {
        "kappa_f": _to_float(phys.get("kappa_f", "0.1"), "[physical] kappa_f"),
        "kappa_s": _to_float(phys.get("kappa_s", "0.4"), "[physical] kappa_s"),
        "alpha": _to_float(phys.get("alpha", "0.1"), "[physical] alpha"),
        "rho_c_f": _to_float(phys.get("rho_c_f", "1.0"), "[physical] rho_c_f"),
        "rho_c_s": _to_float(phys.get("rho_c_s", "1.0"), "[physical] rho_c_s"),
    }
    for k in ("yf", "ys", "gamma", "sigma_s"):
        if k in phys:
            p[k] = _to_float(phys[k], f"[physical] {k}")
    for k in ("kappa_h_f", "kappa_h_s", "permeability"):
        if k in phys:
            p[k] = _to_floats(phys[k], f"[physical] {k}")
    d["physical"] = p

    grid = raw.get("grid", {})
    d["grid"] = {
        "length": _to_float(grid.get("length", "1.0"), "[grid] length"),
        "height": _to_float(grid.get("height", "1.0"), "[grid] height"),
        "interface": _to_float(grid.get("interface", "0.5"), "[grid] interface"),
        "nx": _to_int(grid.get("nx", "1"), "[grid] nx"),
        "ny": _to_int(grid.get("ny", "40"), "[grid] ny"),
    }

    vel = raw.get("velocity", {})
    d["velocity"] = {
        "kind": vel.get("kind", "zero"),
        "darcy_flux": _to_float(vel.get("darcy_flux", "0.0"), "[velocity] darcy_flux"),
        "peak": _to_float(vel.get("peak", "1.0"), "[velocity] peak"),
        "inflow_temperature": _to_float(vel.get("inflow_temperature", "0.0"),
                                        "[velocity] inflow_temperature"),
    }

    src = raw.get("source", {})
    d["source"] = {
        "f_f": _to_float(src.get("f_f", "0.0"), "[source] f_f"),
        "f_s": _to_float(src.get("f_s", "0.0"), "[source] f_s"),
        "f_sigma": src.get("f_sigma", "none"),
        "oscillate": src.get("oscillate", "false").lower() in ("true", "1", "yes"),
        "oscillate_period": _to_float(src.get("oscillate_period", "10.0"),
                                      "[source] oscillate_period"),
        "oscillate_speed": _to_float(src.get("oscillate_speed", "2.0"),
                                     "[source] oscillate_speed"),
    }

    d["boundary"] = dict(raw.get("boundary", {}))
    d["collocation"] = {"pattern": raw.get("collocation", {}).get("pattern", "line 11")}

    ker = raw.get("kernel", {})
    d["kernel"] = {
        "horizon": _to_float(ker.get("horizon", str(d["run"]["t_end"])), "[kernel] horizon"),
        "aux": ker.get("aux", "eliminated"),
    }

    if "transition" in raw:
        d["transition"] = {
            "values": _to_floats(raw["transition"].get("values", ""), "[transition] values")
        }
        for sec, keys in raw.items():
            if sec.startswith("transition ") and sec != "transition":
                d[sec] = {k: _to_float(v, f"[{sec}] {k}") for k, v in keys.items()}
    return RunConfig(data=d)


def _validate(cfg: RunConfig):
    run = cfg.section("run")
    for key in ("dt", "t_end", "tau"):
        if run[key] <= 0:
            raise ConfigError(f"[run] {key} must be positive")
    n = round(run["t_end"] / run["dt"])
    if n < 1 or abs(n * run["dt"] - run["t_end"]) > 1e-12 * max(1.0, run["t_end"]):
        raise ConfigError(f"[run] dt={run['dt']} does not divide t_end={run['t_end']}")
    if run["case"] not in ("a", "b"):
        raise ConfigError("[run] case must be 'a' or 'b'")
    if cfg.section("velocity")["kind"] not in ("zero", "parallel_channel"):
        raise ConfigError("[velocity] kind must be zero or parallel_channel in config runs")
    fs = cfg.section("source")["f_sigma"]
    if fs != "none" and not re.match(r"^(const|step)\(", fs):
        raise ConfigError(f"[source] f_sigma must be none, const(v) or step(v, t_off), got {fs!r}")
    for k, v in cfg.section("boundary").items():
        parts = v.split()
        kinds = {"insulated": 0, "dirichlet": 1, "robin": 2}
        if not parts or parts[0] not in kinds:
            raise ConfigError(f"[boundary] {k}: unknown condition {v!r}")
        if len(parts) - 1 != kinds[parts[0]]:
            raise ConfigError(f"[boundary] {k}: {parts[0]} takes {kinds[parts[0]]} numbers")
        for p in parts[1:]:
            _to_float(p, f"[boundary] {k}")
    pattern = cfg.section("collocation")["pattern"].split()
    if pattern[0] not in ("line", "lattice", "all"):
        raise ConfigError(f"[collocation] unknown pattern {pattern[0]!r}")
    if cfg.section("kernel")["aux"] not in ("eliminated", "eta_bar"):
        raise ConfigError("[kernel] aux must be eliminated or eta_bar")
    if cfg.section("cell")["resolution"] < 8 or cfg.section("cell")["micro_resolution"] < 8:
        raise ConfigError("[cell] resolutions must be at least 8")


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) reproduces the validated data."""
    out = io.StringIO()
    for section, keys in cfg.data.items():
        out.write(f"[{section}]\n")
        for k, v in keys.items():
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, float):
                s = FLOAT_FMT % v
            elif isinstance(v, tuple):
                s = ", ".join(FLOAT_FMT % x for x in v)
            else:
                s = str(v)
            out.write(f"{k} = {s}\n")
        out.write("\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# config -> model objects


def cell_spec_from(cfg: RunConfig) -> geometry.CellSpec:
    c = cfg.section("cell")
    measures = None
    if "fluid_fraction" in c:
        measures = geometry.CellMeasures(
            fluid_fraction=c["fluid_fraction"],
            solid_fraction=c.get("solid_fraction", 1.0 - c["fluid_fraction"]),
            interface_area=c.get("interface_area", 0.0),
            exterior_trace=c.get("exterior_trace", 0.0),
        )
    return geometry.CellSpec(
        dimension=c["dimension"],
        solid_primitives=parse_primitives(c["primitives"], c["dimension"]),
        label=c["label"],
        measures=measures,
    )


def micro_cell_from(cfg: RunConfig) -> geometry.CellGeometry:
    c = cfg.section("cell")
    spec = cell_spec_from(cfg)
    if c["micro_dimension"] != spec.dimension:
        spec = geometry.CellSpec(dimension=c["micro_dimension"],
                                 solid_primitives=spec.solid_primitives,
                                 label=spec.label, measures=spec.measures)
    return geometry.build_unit_cell(spec, c["micro_resolution"])


def grid_from(cfg: RunConfig) -> geometry.MacroGrid:
    g = cfg.section("grid")
    try:
        return geometry.build_macro_grid(g["length"], g["height"], g["interface"],
                                         g["nx"], g["ny"])
    except geometry.GeometryError as exc:
        raise ConfigError(str(exc)) from exc


def params_from(cfg: RunConfig, need_solid_tensor=False):
    """Physical parameters; tensor and measure overrides bypass the cell solves."""
    p = cfg.section("physical")
    have_overrides = all(k in p for k in ("yf", "ys", "gamma")) and "kappa_h_f" in p
    geom = None
    if not have_overrides:
        geom = geometry.build_unit_cell(cell_spec_from(cfg), cfg.section("cell")["resolution"])
    if "yf" in p:
        yf, ys = p["yf"], p.get("ys", 1.0 - p["yf"])
    else:
        yf, ys = geom.measures.fluid_fraction, geom.measures.solid_fraction
    gamma = p["gamma"] if "gamma" in p else geom.measures.interface_area
    sigma_s = p["sigma_s"] if "sigma_s" in p else (
        geom.measures.exterior_trace if geom is not None else 0.0
    )
    if "kappa_h_f" in p:
        khf = p["kappa_h_f"]
    else:
        tensor = cell_stationary.effective_conductivity(geom, "fluid", p["kappa_f"])
        khf = (tensor.entries[0, 0], tensor.entries[1, 1])
    if "kappa_h_s" in p:
        khs = p["kappa_h_s"]
    elif need_solid_tensor and geom is not None and not geom.disconnected:
        tensor = cell_stationary.effective_conductivity(geom, "solid", p["kappa_s"])
        khs = (tensor.entries[0, 0], tensor.entries[1, 1])
    else:
        khs = (0.0, 0.0)
    return macro_solver.PhysicalParams(
        rho_c_f=p["rho_c_f"], rho_c_s=p["rho_c_s"], kappa_f=p["kappa_f"],
        kappa_s=p["kappa_s"], alpha=p["alpha"], kappa_h_f=khf, kappa_h_s=khs,
        yf=yf, ys=ys, gamma_area=gamma, sigma_s=sigma_s,
        permeability=p.get("permeability"),
    )


def sources_from(cfg: RunConfig) -> macro_solver.SourceSpec:
    s = cfg.section("source")
    f_sigma = None
    spec = s["f_sigma"]
    if spec != "none":
        m = re.match(r"^(const|step)\(([^)]*)\)$", spec)
        if not m:
            raise ConfigError(f"[source] cannot parse f_sigma {spec!r}")
        args = _to_floats(m.group(2), "[source] f_sigma")
        if m.group(1) == "const":
            value = args[0]
            f_sigma = lambda t, v=value: v
        else:
            mag = args[0]
            t_off = args[1] if len(args) > 1 else 10.0
            f_sigma = macro_solver.step_source(mag, t_off)
    if f_sigma is not None and s["oscillate"]:
        f_sigma = macro_solver.oscillating_source(f_sigma, period=s["oscillate_period"],
                                                  speed=s["oscillate_speed"])
    return macro_solver.SourceSpec(f_f=s["f_f"], f_s=s["f_s"], f_sigma=f_sigma)


def bcs_from(cfg: RunConfig) -> macro_solver.BoundarySpec:
    fluid, solid = {}, {}
    for key, value in cfg.section("boundary").items():
        parts = value.split()
        kind = parts[0]
        if kind == "dirichlet":
            bc = macro_solver.BCSide(kind="dirichlet", value=float(parts[1]))
        elif kind == "robin":
            bc = macro_solver.BCSide(kind="robin", coeff=float(parts[1]),
                                     ambient=float(parts[2]))
        else:
            bc = macro_solver.BCSide()
        field_name, side = key.split("_", 1)
        (fluid if field_name == "fluid" else solid)[side] = bc
    return macro_solver.BoundarySpec(fluid=fluid, solid=solid)


def velocity_from(cfg: RunConfig, grid) -> macro_solver.VelocitySpec:
    v = cfg.section("velocity")
    return macro_solver.make_velocity(v["kind"], grid, darcy_flux=v["darcy_flux"],
                                      peak=v["peak"],
                                      inflow_temperature=v["inflow_temperature"])


def collocation_pattern(cfg: RunConfig):
    parts = cfg.section("collocation")["pattern"].split()
    if parts[0] == "line":
        return ("line", int(parts[1]))
    if parts[0] == "lattice":
        return ("lattice", int(parts[1]), int(parts[2]))
    return ("all",)


# ---------------------------------------------------------------------------
# drivers


def _csv_body(header, columns):
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    rows = len(columns[0]) if columns else 0
    for r in range(rows):
        cells = []
        for col in columns:
            v = col[r]
            if isinstance(v, str):
                cells.append(v)
            elif v is None or (isinstance(v, float) and np.isnan(v)):
                cells.append("nan")
            else:
                cells.append(FLOAT_FMT % v)
        out.write(",".join(cells) + "\n")
    return out.getvalue()


class OutputWriter:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def write(self, name, body):
        path = self.out_dir / name
        path.write_text(body, encoding="utf-8")
        self.files[name] = body

    def finish(self):
        lines = []
        for name in sorted(self.files):
            digest = hashlib.sha256(self.files[name].encode("utf-8")).hexdigest()
            lines.append(f"{digest}  {name}")
        self.write_manifest("\n".join(lines) + "\n")
        return dict(self.files)

    def write_manifest(self, body):
        (self.out_dir / "manifest.txt").write_text(body, encoding="utf-8")
        self.files["manifest.txt"] = body


def run(cfg: RunConfig, out_dir) -> dict:
    """Execute one mode; returns the mapping of written file names to bodies."""
    writer = OutputWriter(out_dir)
    mode = cfg.mode
    if mode == "tensors":
        _run_tensors(cfg, writer)
    elif mode == "kernel":
        _run_kernel(cfg, writer)
    elif mode == "steady":
        _run_steady(cfg, writer)
    elif mode in ("transient-a", "transient-b", "memory", "convection"):
        _run_transient(cfg, writer, mode)
    elif mode == "transition":
        _run_transition(cfg, writer)
    else:
        raise ConfigError(f"unhandled mode {mode}")
    return writer.finish()


def _run_tensors(cfg, writer):
    c = cfg.section("cell")
    p = cfg.section("physical")
    geom = geometry.build_unit_cell(cell_spec_from(cfg), c["resolution"])
    lines = []
    add = lines.append
    add(f"label = {geom.spec.label}")
    add(f"dimension = {geom.dimension}")
    add(f"resolution = {geom.resolution}")
    add(f"disconnected = {'true' if geom.disconnected else 'false'}")
    for name, m in (("analytic", geom.measures), ("voxel", geom.measures_voxel)):
        add(f"fluid_fraction_{name} = " + FLOAT_FMT % m.fluid_fraction)
        add(f"solid_fraction_{name} = " + FLOAT_FMT % m.solid_fraction)
        add(f"interface_area_{name} = " + FLOAT_FMT % m.interface_area)
        add(f"exterior_trace_{name} = " + FLOAT_FMT % m.exterior_trace)
    phases = [("fluid", p["kappa_f"])]
    if not geom.disconnected and geom.solid.any():
        phases.append(("solid", p["kappa_s"]))
    for phase, kappa in phases:
        tensor = cell_stationary.effective_conductivity(geom, phase, kappa)
        add(f"kappa_{phase} = " + FLOAT_FMT % kappa)
        for i in range(tensor.dimension):
            row = " ".join(FLOAT_FMT % v for v in tensor.entries[i])
            add(f"kappa_h_{phase}_row{i} = {row}")
        ratio = " ".join(FLOAT_FMT % (tensor.entries[i, i] / kappa)
                         for i in range(tensor.dimension))
        add(f"kappa_h_{phase}_diag_ratio = {ratio}")
        add(f"asymmetry_{phase} = " + FLOAT_FMT % tensor.asymmetry)
        its = " ".join(str(i) for i in tensor.provenance["cg_iterations"])
        add(f"cg_iterations_{phase} = {its}")
        res = " ".join(FLOAT_FMT % r for r in tensor.provenance["cg_residuals"])
        add(f"cg_residuals_{phase} = {res}")
    writer.write("tensors.txt", "\n".join(lines) + "\n")


def _run_kernel(cfg, writer):
    run_c, p = cfg.section("run"), cfg.section("physical")
    geom = micro_cell_from(cfg)
    horizon = cfg.section("kernel")["horizon"]
    dt = run_c["dt"]
    kernel = cell_transient.compute_kernel(geom, p["rho_c_s"], p["kappa_s"], p["alpha"],
                                           horizon, dt)
    offset = run_c["theta_s0"] - run_c["theta0"]
    eta = cell_transient.compute_eta_bar(geom, p["rho_c_s"], p["kappa_s"], p["alpha"],
                                         cfg.section("source")["f_s"], offset,
                                         horizon, dt, theta_f0=run_c["theta0"])
    t = dt * np.arange(1, len(kernel.psi) + 1)
    body = _csv_body(["t", "psi", "cumulative", "eta_bar"],
                     [t, kernel.psi, kernel.cumulative, eta.samples[1:]])
    writer.write("kernel.csv", body)


def _write_profile(writer, grid, state, micro=None, colloc=None, name="profile.csv"):
    sample = diagnostics.profile(state, grid, micro=micro, colloc=colloc)
    body = _csv_body(["x2", "theta", "theta_s"],
                     [sample.coordinates, sample.theta, sample.theta_s])
    writer.write(name, body)


def _run_steady(cfg, writer):
    case = cfg.section("run")["case"]
    grid = grid_from(cfg)
    params = params_from(cfg, need_solid_tensor=case == "b")
    state = macro_solver.solve_stationary(grid, params, sources=sources_from(cfg),
                                          bcs=bcs_from(cfg), velocity=velocity_from(cfg, grid),
                                          case=case)
    _write_profile(writer, grid, state)


def _run_transient(cfg, writer, mode):
    run_c = cfg.section("run")
    if mode == "convection":
        case = run_c["case"]
        vel_cfg = dict(cfg.section("velocity"))
        if vel_cfg["kind"] == "zero":
            vel_cfg["kind"] = "parallel_channel"
        cfg = RunConfig(data={**cfg.data, "velocity": vel_cfg})
    else:
        case = {"transient-a": "a", "transient-b": "b", "memory": "memory"}[mode]

    grid = grid_from(cfg)
    params = params_from(cfg, need_solid_tensor=case == "b")
    sources = sources_from(cfg)
    bcs = bcs_from(cfg)
    velocity = velocity_from(cfg, grid)
    dt, t_end, tau = run_c["dt"], run_c["t_end"], run_c["tau"]
    n_steps = int(round(t_end / dt))
    result = run_time_loop(case, grid, params, sources, bcs, velocity, dt, n_steps,
                           theta0=run_c["theta0"], theta_s0=run_c["theta_s0"], tau=tau,
                           max_iter=run_c["max_iter"],
                           micro_geom=micro_cell_from(cfg) if case in ("a", "memory") else None,
                           colloc_pattern=cfg if case == "a" else None,
                           aux_kind=cfg.section("kernel")["aux"])
    report = result["energy"].report()
    body = _csv_body(["t", "e_ff", "e_f", "e_s", "input", "residual"],
                     [report.times, report.e_ff, report.e_f, report.e_s,
                      report.input_cum, report.residual])
    writer.write("energies.csv", body)
    _write_profile(writer, grid, result["state"], micro=result.get("micro"),
                   colloc=result.get("colloc"))
    if case == "a":
        tr = result["trace_rows"]
        body = _csv_body(["step", "time", "k", "e_k", "rho_bound"], list(zip(*tr)))
        writer.write("trace.csv", body)


def run_time_loop(case, grid, params, sources, bcs, velocity, dt, n_steps, theta0=0.0,
                  theta_s0=0.0, tau=1e-5, max_iter=50, micro_geom=None,
                  colloc_pattern=None, aux_kind="eliminated", record_states=False):
    """Shared implicit-Euler time loop for the three transient model variants."""
    tracker = diagnostics.EnergyTracker(grid, params)
    states = []
    kernel = aux = None
    micro = colloc = None

    if case == "memory":
        kernel = cell_transient.compute_kernel(micro_geom, params.rho_c_s, params.kappa_s,
                                               params.alpha, n_steps * dt, dt)
        maker = (cell_transient.eliminated_trace_source if aux_kind == "eliminated"
                 else cell_transient.compute_eta_bar)
        if aux_kind == "eliminated":
            aux = maker(micro_geom, params.rho_c_s, params.kappa_s, params.alpha,
                        theta_s0, sources.f_s, n_steps * dt, dt)
        else:
            aux = maker(micro_geom, params.rho_c_s, params.kappa_s, params.alpha,
                        sources.f_s, theta_s0 - theta0, n_steps * dt, dt, theta_f0=theta0)
        system = macro_solver.MacroSystem(grid, params, velocity=velocity, bcs=bcs,
                                          dt=dt, case="memory", kernel=kernel)
        state = macro_solver.initial_state(grid, theta0, case="memory", with_history=True)
    elif case == "a":
        system = macro_solver.MacroSystem(grid, params, velocity=velocity, bcs=bcs,
                                          dt=dt, case="a")
        state = macro_solver.initial_state(grid, theta0, case="a")
        problem = cell_transient.SolidCellProblem(micro_geom, params.rho_c_s,
                                                  params.kappa_s, params.alpha, dt)
        if isinstance(colloc_pattern, RunConfig):
            colloc = collocation_from(colloc_pattern, grid)
        elif colloc_pattern is not None:
            colloc = coupling.build_collocation(grid, colloc_pattern)
        else:
            colloc = coupling.build_collocation(grid, ("all",))
        micro = coupling.MicroEnsemble.constant(problem, colloc.n_points, theta_s0)
    else:
        system = macro_solver.MacroSystem(grid, params, velocity=velocity, bcs=bcs,
                                          dt=dt, case="b")
        state = macro_solver.initial_state(grid, theta0, theta_s0=theta_s0, case="b")

    ys_micro = micro.problem.solid_volume if micro is not None else None
    tracker.record(state, micro=micro, colloc=colloc)
    if record_states:
        states.append(state.copy())
    bound = coupling.contraction_bound(params, dt, velocity)
    trace_rows = []
    mem_absorbed = 0.0

    for step in range(1, n_steps + 1):
        if case == "b":
            state = macro_solver.step_case_b(system, state, sources)
        elif case == "a":
            state, micro, trace = coupling.advance_case_a(system, state, micro, colloc,
                                                          sources, tau, max_iter)
            for k, e in enumerate(trace.errors, start=1):
                trace_rows.append((float(step), state.time, float(k), e, bound.rho))
        else:
            prev_hist_len = len(state.history)
            state = macro_solver.step_memory(system, state, kernel, aux, sources)
            # reconstruct the absorbed solid heat for the energy書 bookkeeping
            n = prev_hist_len - 1
            conv = np.zeros(system.n_porous)
            for m in range(1, n + 2):
                conv += kernel.psi[m - 1] * state.history[n + 2 - m]
            g = kernel.dt * conv + aux.samples[n + 1]
            theta_p = state.theta[system.porous_ids]
            mem_absorbed += dt * params.alpha * grid.cell_volume * float(
                np.sum(params.gamma_area * theta_p - g))

        increment = dt * diagnostics.source_input_rate(grid, params, sources, state.time,
                                                       case=case, ys_micro=ys_micro)
        tracker.record(state, micro=micro, colloc=colloc)
        if case == "memory":
            tracker.e_s[-1] = mem_absorbed
        if record_states:
            states.append(state.copy())
        tracker.input_cum[-1] = tracker.input_cum[-2] + increment if len(
            tracker.input_cum) > 1 else increment
        tracker._input = tracker.input_cum[-1]

    return {"state": state, "energy": tracker, "micro": micro, "colloc": colloc,
            "trace_rows": trace_rows, "states": states, "kernel": kernel, "aux": aux,
            "system": system}


def _run_transition(cfg, writer):
    run_c = cfg.section("run")
    grid = grid_from(cfg)
    sources = sources_from(cfg)
    bcs = bcs_from(cfg)
    velocity = velocity_from(cfg, grid)
    dt = run_c["dt"]
    n_steps = int(round(run_c["t_end"] / dt))
    base_params = params_from(cfg)
    micro_geom = micro_cell_from(cfg)

    ref = run_time_loop("a", grid, base_params, sources, bcs, velocity, dt, n_steps,
                        theta0=run_c["theta0"], theta_s0=run_c["theta_s0"],
                        tau=run_c["tau"], max_iter=run_c["max_iter"],
                        micro_geom=micro_geom, colloc_pattern=("all",),
                        record_states=True)
    ref_solid = [diagnostics.solid_average_field(m, ref["colloc"], grid)
                 for m in ref["micro_states"]] if False else None

    cols = {"t": [], "c": [], "diff_ff": [], "diff_p": [], "diff_s": [],
            "rel_ff": [], "rel_p": []}
    values = cfg.section("transition").get("values", ())
    porous_ids = grid.porous_ids()
    for c_value in values:
        sec = _transition_section(cfg, c_value)
        params_c = macro_solver.PhysicalParams(
            rho_c_f=base_params.rho_c_f, rho_c_s=base_params.rho_c_s,
            kappa_f=base_params.kappa_f, kappa_s=base_params.kappa_s,
            alpha=base_params.alpha,
            kappa_h_f=(sec["kappa_hf_ratio"] * base_params.kappa_f,) * 2,
            kappa_h_s=(sec["kappa_hs_ratio"] * base_params.kappa_s,) * 2,
            yf=base_params.yf, ys=base_params.ys,
            gamma_area=sec["gamma"], sigma_s=sec["sigma_s"],
        )
        runb = run_time_loop("b", grid, params_c, sources, bcs, velocity, dt, n_steps,
                             theta0=run_c["theta0"], theta_s0=run_c["theta_s0"],
                             record_states=True)
        for idx in range(len(runb["states"])):
            sa, sb = ref["states"][idx], runb["states"][idx]
            if sa.time <= 0:
                continue
            dff, dp = diagnostics.l2_difference(sa.theta, sb.theta, grid)
            nff, np_ = diagnostics.l2_norm_split(sa.theta, grid)
            cols["t"].append(sa.time)
            cols["c"].append(c_value)
            cols["diff_ff"].append(dff)
            cols["diff_p"].append(dp)
            cols["diff_s"].append(np.nan)
            cols["rel_ff"].append(dff / nff if nff > 0 else np.nan)
            cols["rel_p"].append(dp / np_ if np_ > 0 else np.nan)
    body = _csv_body(list(cols), [cols[k] for k in cols])
    writer.write("diff.csv", body)


def _transition_section(cfg, c_value):
    for name, sec in cfg.data.items():
        if name.startswith("transition "):
            tag = name.split(None, 1)[1]
            try:
                if abs(float(tag) - c_value) < 1e-12:
                    missing = _TRANSITION_CASE_KEYS - set(sec)
                    if missing:
                        raise ConfigError(f"[{name}] missing keys {sorted(missing)}")
                    return sec
            except ValueError:
                continue
    raise ConfigError(f"no [transition {c_value:g}] section in config")


# ---------------------------------------------------------------------------
# entry point


def main(argv=None):
    parser = argparse.ArgumentParser(prog="poroheat",
                                     description="homogenized porous-medium heat runs")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
        if cfg.mode != args.mode:
            raise ConfigError(
                f"config sets mode={cfg.mode} but the command line asked for {args.mode}"
            )
        out_dir = args.out if args.out is not None else cfg.section("run")["out"]
        run(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, CouplingError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
