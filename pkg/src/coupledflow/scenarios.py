"""Scenario presets, INI configuration ingestion, and CSV output.

A scenario bundles everything a coupled run needs: grid geometry, the soil
field, initial conditions, the surface flow model, rainfall forcing, side
boundary conditions, and the coupling controls.  Six presets cover the two
benchmark families:

* ``trench-loam`` / ``trench-clay`` / ``trench-mixed``: a 2 m x 3 m drainage
  trench, 5 x 8 elements, shallow water surface, 10 cm/h rainfall for the
  first two hours of a three hour run, side head boundaries below 1 m.
* ``hillslope-sandy`` / ``hillslope-silt`` / ``hillslope-silt-lowrain``: a
  400 m x 5 m tilted water table, kinematic surface with Manning friction
  draining at x = 0, five hours of simulated time with rain shut off after
  200 minutes.

Configs are INI files with the same keys the presets use; a file starts from
a preset (``[scenario] base = ...``) and overrides fields.  Unknown sections
or keys are rejected rather than ignored.  All stored values are SI; inputs
quoted per minute or per hour are converted on ingestion and the conversion
helpers round trip to double precision.

CSV writers emit a single header row and ``%.17g`` floats so repeated runs
of the same config are byte identical.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from collections.abc import Iterable, Mapping, Sequence
from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import dataclass

import numpy as np

from . import coupling, richards2d, surface1d
from .coupling import CoupledProblem, CoupledState, CouplingConfig, RainSchedule
from .material import SOIL_PRESETS, MaterialField
from .richards2d import DirichletData, Grid2D, SubsurfaceState
from .surface1d import BoundarySpec, SurfaceModel, SurfaceState


class ConfigError(ValueError):
    """Raised for malformed configs: unknown keys, bad values, bad presets."""


# ---------------------------------------------------------------------------
# unit conversion


def per_minute_to_si(rate: float) -> float:
    """Velocity quoted in m/min to m/s."""
    return rate / 60.0


def si_to_per_minute(rate: float) -> float:
    return rate * 60.0


def per_hour_to_si(rate: float) -> float:
    """Velocity quoted in m/h to m/s."""
    return rate / 3600.0


def si_to_per_hour(rate: float) -> float:
    return rate * 3600.0


def manning_minutes_to_si(n_manning: float) -> float:
    """Manning coefficient quoted in m^(1/3)*min to m^(1/3)*s.

    u = sqrt(S_f)/n * h^(2/3): scaling n by 60 turns a per minute speed
    into a per second one.
    """
    return n_manning * 60.0


def manning_si_to_minutes(n_manning: float) -> float:
    return n_manning / 60.0


# ---------------------------------------------------------------------------
# scenario description


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete, validated description of one coupled run (SI units)."""

    name: str
    # geometry
    length_x: float
    length_z: float
    num_x: int
    num_z: int
    # soil: single preset, or a left/right blend when soil_right is set
    soil: str
    soil_right: str | None = None
    blend_center: float = 0.0
    blend_steepness: float = 1.0
    # replaces K_s of the (homogeneous) soil, e.g. the slower sandy variants
    k_s: float | None = None
    # initial conditions: psi0(x, z) = psi0_const + psi0_z*z + psi0_x*x
    psi0_const: float = 0.0
    psi0_z: float = 0.0
    psi0_x: float = 0.0
    h0: float = 0.0
    # surface model
    flavor: str = "swe"
    gravity: float = 9.81
    manning_n: float | None = None
    friction_slope: float | None = None
    flow_sign: float = 1.0
    boundary_left: str = "copy"
    boundary_right: str = "copy"
    # rainfall
    rain_rate: float = 0.0
    rain_cutoff: float = float("inf")
    # side head boundary: nodes on both vertical walls with z strictly below
    # this height keep psi pinned to the initial profile (None: no-flux walls)
    side_dirichlet_below: float | None = None
    # coupling controls
    omega: float = 1.0
    tol: float = 1e-8
    max_iters: int = 100
    dt: float = 36.0
    num_steps: int = 300
    output_every: int = 10

    def psi0_at(self, x, z):
        return self.psi0_const + self.psi0_z * np.asarray(z) \
            + self.psi0_x * np.asarray(x)

    def validate(self) -> None:
        if self.length_x <= 0 or self.length_z <= 0:
            raise ConfigError("domain lengths must be positive")
        if self.num_x < 1 or self.num_z < 1:
            raise ConfigError("element counts must be at least 1")
        for soil in filter(None, (self.soil, self.soil_right)):
            if soil not in SOIL_PRESETS:
                known = ", ".join(sorted(SOIL_PRESETS))
                raise ConfigError(f"unknown soil {soil!r} (known: {known})")
        if self.soil_right is not None and self.blend_steepness <= 0:
            raise ConfigError("blend_steepness must be positive")
        if self.k_s is not None:
            if self.soil_right is not None:
                raise ConfigError("k_s override only applies to homogeneous "
                                  "soils")
            if self.k_s <= 0:
                raise ConfigError("k_s must be positive")
        if self.flavor not in ("swe", "kinematic"):
            raise ConfigError(f"unknown surface flavor {self.flavor!r}")
        if self.flavor == "kinematic":
            if self.manning_n is None or self.friction_slope is None:
                raise ConfigError(
                    "kinematic surface needs manning_n and friction_slope")
        if self.flow_sign not in (-1.0, 1.0):
            raise ConfigError("flow_sign must be -1 or 1")
        for kind in (self.boundary_left, self.boundary_right):
            if kind not in ("copy", "reflect"):
                raise ConfigError(f"unknown boundary kind {kind!r}")
        if self.h0 < 0:
            raise ConfigError("h0 must be nonnegative")
        if self.rain_rate < 0:
            raise ConfigError("rain_rate must be nonnegative")
        if self.rain_cutoff < 0:
            raise ConfigError("rain_cutoff must be nonnegative")
        if self.side_dirichlet_below is not None \
                and not 0 < self.side_dirichlet_below <= self.length_z:
            raise ConfigError("side_dirichlet_below must lie in (0, L_z]")
        if not 0 < self.omega <= 1:
            raise ConfigError("omega must lie in (0, 1]")
        if self.tol <= 0 or self.dt <= 0:
            raise ConfigError("tol and dt must be positive")
        if self.max_iters < 1 or self.num_steps < 1 or self.output_every < 1:
            raise ConfigError(
                "max_iters, num_steps, output_every must be at least 1")


# ---------------------------------------------------------------------------
# presets

_TRENCH_BASE = dict(
    length_x=2.0, length_z=3.0, num_x=5, num_z=8,
    psi0_const=1.0, psi0_z=-1.0, psi0_x=0.0, h0=1e-6,
    flavor="swe", gravity=9.81,
    boundary_left="copy", boundary_right="copy",
    rain_rate=per_hour_to_si(0.1), rain_cutoff=7200.0,
    side_dirichlet_below=1.0,
    omega=1.0, tol=1e-8, max_iters=100,
    dt=36.0, num_steps=300, output_every=10,
)

# Manning n printed as 3.31e-3 m^(1/3)*min, friction slope 0.05 %, rainfall
# 3.3e-4 m/min for the first 200 of 300 minutes.  The outlet sits at x = 0,
# hence flow_sign = -1 and a copy (outflow) boundary on the left.
_HILLSLOPE_BASE = dict(
    length_x=400.0, length_z=5.0, num_x=5, num_z=25,
    psi0_const=4.0, psi0_z=-1.0, psi0_x=0.2 / 400.0, h0=1e-12,
    flavor="kinematic",
    manning_n=manning_minutes_to_si(3.31e-3), friction_slope=5e-4,
    flow_sign=-1.0,
    boundary_left="copy", boundary_right="reflect",
    rain_rate=per_minute_to_si(3.3e-4), rain_cutoff=12000.0,
    side_dirichlet_below=None,
    omega=1.0, tol=1e-8, max_iters=100,
)

PRESETS: dict[str, ScenarioConfig] = {
    "trench-loam": ScenarioConfig(
        name="trench-loam", soil="silt-loam", **_TRENCH_BASE),
    "trench-clay": ScenarioConfig(
        name="trench-clay", soil="beit-netofa-clay", **_TRENCH_BASE),
    "trench-mixed": ScenarioConfig(
        name="trench-mixed", soil="silt-loam", soil_right="beit-netofa-clay",
        blend_center=1.0, blend_steepness=4.0, **_TRENCH_BASE),
    "hillslope-sandy": ScenarioConfig(
        name="hillslope-sandy", soil="sandy-loam",
        dt=60.0, num_steps=300, output_every=10, **_HILLSLOPE_BASE),
    "hillslope-silt": ScenarioConfig(
        name="hillslope-silt", soil="silt-loam",
        dt=1.0, num_steps=18000, output_every=60, **_HILLSLOPE_BASE),
    "hillslope-silt-lowrain": ScenarioConfig(
        name="hillslope-silt-lowrain", soil="silt-loam",
        dt=1.0, num_steps=18000, output_every=60,
        **{**_HILLSLOPE_BASE, "rain_rate": per_minute_to_si(3.3e-5)}),
}


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r} (known: {known})") from None


# ---------------------------------------------------------------------------
# INI ingestion

def _parse_flavor(text: str) -> str:
    return text.strip().lower()


def _parse_boundary(text: str) -> str:
    return text.strip().lower()


def _parse_optional_float(text: str) -> float | None:
    text = text.strip().lower()
    if text in ("none", ""):
        return None
    return float(text)


def _parse_optional_soil(text: str) -> str | None:
    text = text.strip()
    return text if text and text.lower() != "none" else None


# section -> key -> (ScenarioConfig field, parser).  Unit qualifier keys are
# handled separately and listed here with a None field.
_SCHEMA: dict[str, dict[str, tuple[str | None, object]]] = {
    "scenario": {"base": (None, str), "name": ("name", str)},
    "grid": {
        "length_x": ("length_x", float), "length_z": ("length_z", float),
        "num_x": ("num_x", int), "num_z": ("num_z", int),
    },
    "soil": {
        "preset": ("soil", str),
        "right": ("soil_right", _parse_optional_soil),
        "blend_center": ("blend_center", float),
        "blend_steepness": ("blend_steepness", float),
        "k_s": ("k_s", _parse_optional_float),
    },
    "initial": {
        "psi_const": ("psi0_const", float), "psi_z": ("psi0_z", float),
        "psi_x": ("psi0_x", float), "h": ("h0", float),
    },
    "surface": {
        "flavor": ("flavor", _parse_flavor),
        "gravity": ("gravity", float),
        "manning_n": ("manning_n", float),
        "manning_units": (None, str),
        "friction_slope": ("friction_slope", float),
        "flow_sign": ("flow_sign", float),
        "boundary_left": ("boundary_left", _parse_boundary),
        "boundary_right": ("boundary_right", _parse_boundary),
    },
    "rain": {
        "rate": ("rain_rate", float),
        "units": (None, str),
        "cutoff": ("rain_cutoff", float),
    },
    "subsurface": {
        "side_dirichlet_below": ("side_dirichlet_below",
                                 _parse_optional_float),
    },
    "coupling": {
        "omega": ("omega", float), "tol": ("tol", float),
        "max_iters": ("max_iters", int), "dt": ("dt", float),
        "num_steps": ("num_steps", int), "output_every": ("output_every", int),
    },
}

_RATE_CONVERTERS = {"si": lambda v: v, "per_minute": per_minute_to_si,
                    "per_hour": per_hour_to_si}
_MANNING_CONVERTERS = {"si": lambda v: v, "per_minute": manning_minutes_to_si}


def _check_known(section: str, key: str) -> tuple[str | None, object]:
    if section not in _SCHEMA:
        known = ", ".join(sorted(_SCHEMA))
        raise ConfigError(f"unknown config section [{section}] "
                          f"(known: {known})")
    try:
        return _SCHEMA[section][key]
    except KeyError:
        known = ", ".join(sorted(_SCHEMA[section]))
        raise ConfigError(f"unknown key {key!r} in section [{section}] "
                          f"(known: {known})") from None


def _convert(section: str, key: str, value: str, units: Mapping) -> object:
    field, parser = _check_known(section, key)
    if field is None:
        return None
    try:
        parsed = parser(value)
    except ValueError as exc:
        raise ConfigError(
            f"bad value for [{section}] {key}: {value!r} ({exc})") from None
    if (section, key) == ("rain", "rate"):
        parsed = _rate_converter(units.get(("rain", "units"), "si"))(parsed)
    elif (section, key) == ("surface", "manning_n"):
        parsed = _manning_converter(
            units.get(("surface", "manning_units"), "si"))(parsed)
    return parsed


def _rate_converter(units: str):
    try:
        return _RATE_CONVERTERS[units.strip().lower()]
    except KeyError:
        known = ", ".join(sorted(_RATE_CONVERTERS))
        raise ConfigError(
            f"unknown rain units {units!r} (known: {known})") from None


def _manning_converter(units: str):
    try:
        return _MANNING_CONVERTERS[units.strip().lower()]
    except KeyError:
        known = ", ".join(sorted(_MANNING_CONVERTERS))
        raise ConfigError(
            f"unknown manning units {units!r} (known: {known})") from None


def _apply_items(config: ScenarioConfig,
                 items: Iterable[tuple[str, str, str]]) -> ScenarioConfig:
    items = list(items)
    # units qualifiers must take effect regardless of key order
    units = {(s, k): v.strip().lower() for s, k, v in items
             if (s, k) in (("rain", "units"), ("surface", "manning_units"))}
    for section, key, _ in items:
        _check_known(section, key)
    updates = {}
    for section, key, value in items:
        field, _ = _SCHEMA[section][key]
        if field is None:
            if (section, key) == ("rain", "units"):
                _rate_converter(value)
            elif (section, key) == ("surface", "manning_units"):
                _manning_converter(value)
            continue
        updates[field] = _convert(section, key, value, units)
    config = dataclasses.replace(config, **updates)
    config.validate()
    return config


def parse_overrides(pairs: Sequence[str]) -> list[tuple[str, str, str]]:
    """``section.key=value`` strings to (section, key, value) triples."""
    items = []
    for pair in pairs:
        head, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"override {pair!r} is not section.key=value")
        section, dot, key = head.strip().partition(".")
        if not dot or not section or not key:
            raise ConfigError(f"override {pair!r} is not section.key=value")
        items.append((section.strip(), key.strip(), value.strip()))
    return items


def load_config(path: str | None = None,
                overrides: Sequence[str] = (),
                base: str | None = None) -> ScenarioConfig:
    """Build a ScenarioConfig from an INI file and/or override pairs.

    Precedence: preset named by ``base`` (or by ``[scenario] base`` in the
    file, defaulting to trench-loam), then file keys, then overrides.
    """
    items: list[tuple[str, str, str]] = []
    if path is not None:
        parser = ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as handle:
                parser.read_file(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from None
        except ConfigParserError as exc:
            raise ConfigError(f"malformed config {path!r}: {exc}") from None
        for section in parser.sections():
            for key, value in parser.items(section):
                items.append((section, key, value))
    items.extend(parse_overrides(overrides))

    if base is None:
        base = "trench-loam"
        for section, key, value in items:
            if (section, key) == ("scenario", "base"):
                base = value.strip()
    config = preset(base)
    if items:
        config = _apply_items(config, items)
    named = any((s, k) == ("scenario", "name") for s, k, _ in items)
    if path is not None and not named:
        stem = os.path.splitext(os.path.basename(path))[0]
        config = dataclasses.replace(config, name=stem)
    return config


# ---------------------------------------------------------------------------
# assembling runnable objects


def build_grid(config: ScenarioConfig) -> Grid2D:
    return Grid2D(length_x=config.length_x, length_z=config.length_z,
                  num_x=config.num_x, num_z=config.num_z)


def build_material(config: ScenarioConfig) -> MaterialField:
    if config.soil_right is None:
        params = SOIL_PRESETS[config.soil]
        if config.k_s is not None:
            params = dataclasses.replace(params, k_s=config.k_s)
        return MaterialField.homogeneous(params)
    if config.k_s is not None:
        raise ConfigError("k_s override only applies to homogeneous soils")
    return MaterialField.blended(
        left=SOIL_PRESETS[config.soil], right=SOIL_PRESETS[config.soil_right],
        center_x=config.blend_center, steepness=config.blend_steepness)


def build_surface_model(config: ScenarioConfig) -> SurfaceModel:
    return SurfaceModel(flavor=config.flavor, gravity=config.gravity,
                        manning_n=config.manning_n,
                        friction_slope=config.friction_slope,
                        flow_sign=config.flow_sign)


def side_dirichlet(config: ScenarioConfig,
                   grid: Grid2D) -> DirichletData | None:
    """Head boundary on both vertical walls below the configured height.

    Pinned values follow the initial profile, so for the trench the walls
    hold psi = 1 - z for z < 1 m throughout the run.
    """
    if config.side_dirichlet_below is None:
        return None
    x, z = grid.node_coords()
    on_wall = np.isclose(x, 0.0) | np.isclose(x, grid.length_x)
    select = on_wall & (z < config.side_dirichlet_below) \
        & (z < grid.length_z)  # never touch the coupled top row
    nodes = np.flatnonzero(select)
    if nodes.size == 0:
        return None
    return DirichletData(nodes=nodes,
                         values=config.psi0_at(x[nodes], z[nodes]))


def build_problem(config: ScenarioConfig) -> CoupledProblem:
    grid = build_grid(config)
    return CoupledProblem(
        grid=grid,
        material=build_material(config),
        surface_model=build_surface_model(config),
        boundary=BoundarySpec(left=config.boundary_left,
                              right=config.boundary_right),
        rain=RainSchedule(rate=config.rain_rate, cutoff=config.rain_cutoff),
        static_dirichlet=side_dirichlet(config, grid),
    )


def build_coupling_config(config: ScenarioConfig) -> CouplingConfig:
    return CouplingConfig(omega=config.omega, tol=config.tol,
                          max_iters=config.max_iters, dt=config.dt,
                          num_steps=config.num_steps,
                          output_every=config.output_every)


def build_initial_state(config: ScenarioConfig, grid: Grid2D,
                        model: SurfaceModel) -> CoupledState:
    x, z = grid.node_coords()
    psi = np.asarray(config.psi0_at(x, z), dtype=float)
    h = np.full(grid.num_x, config.h0, dtype=float)
    hu = np.zeros(grid.num_x) if model.flavor == "swe" else None
    return CoupledState(
        subsurface=SubsurfaceState(psi=psi, time=0.0),
        surface=SurfaceState(h=h, hu=hu, time=0.0))


def build_all(config: ScenarioConfig,
              ) -> tuple[CoupledProblem, CouplingConfig, CoupledState]:
    config.validate()
    problem = build_problem(config)
    state = build_initial_state(config, problem.grid, problem.surface_model)
    return problem, build_coupling_config(config), state


# ---------------------------------------------------------------------------
# CSV output


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: str, columns: Sequence[str],
              rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row[column]) for column in columns])


def run_scenario(config: ScenarioConfig, out_dir: str,
                 cr_exclude_threshold: float | None = None,
                 ) -> coupling.SimulationResult:
    """Run one scenario and write its CSV products into out_dir.

    Products: trace.csv (one row per step), summary.csv (time averaged CR),
    field_NNNNN.csv snapshots at the output cadence, and probe.csv with the
    outlet hydrograph for kinematic scenarios.
    """
    problem, coupling_config, state = build_all(config)
    result = coupling.run_simulation(problem, coupling_config, state)

    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "trace.csv"), coupling.TRACE_COLUMNS,
              coupling.trace_rows(result.records))
    write_csv(os.path.join(out_dir, "summary.csv"), coupling.SUMMARY_COLUMNS,
              [coupling.summary_row(config.name, result.records,
                                    exclude_above=cr_exclude_threshold)])
    for step, snapshot in result.snapshots:
        write_csv(os.path.join(out_dir, f"field_{step:05d}.csv"),
                  richards2d.FIELD_COLUMNS,
                  richards2d.field_rows(snapshot.subsurface, problem.grid,
                                        problem.material))
    if problem.surface_model.flavor == "kinematic":
        write_csv(os.path.join(out_dir, "probe.csv"), surface1d.PROBE_COLUMNS,
                  [surface1d.outflow_probe(snapshot.surface,
                                           problem.surface_model)
                   for _, snapshot in result.snapshots])
    return result
