"""Run configuration: TOML parsing, schema validation and fingerprinting.

A configuration file has the sections ``[ifs]``, ``[grid]``, ``[kernel]``,
``[simulation]``, ``[coefficients]`` and ``[analysis]``; only ``[ifs]`` and
``[grid]`` are mandatory.  Unknown keys are rejected.  See ``README.md`` for
the full key reference.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .errors import IFSError, ParseError, SchemaError
from .ifs import IFSSpec, build_partition, validate_ifs
from .kernel import DEFAULT_T_MIN, DEFAULT_TOLERANCE
from .spde import Coefficient, EnsembleConfig, InitialCondition
from .spectral import DIRICHLET, NEUMANN

__all__ = ["RunConfig", "parse_config", "parse_config_text", "load_config",
           "bundled_configs", "bundled_config_path"]

CONFIG_DIR = Path(__file__).parent / "configs"

_SCHEMA = {
    "ifs": {"ratios", "offsets", "weights"},
    "grid": {"level", "boundary", "num_eigs"},
    "kernel": {"tolerance", "t_min"},
    "simulation": {"T", "dt", "output_times", "output_every", "paths", "seed",
                   "chunk_paths", "on_blowup"},
    "coefficients": {"f", "g", "u0"},
    "analysis": {"q", "p", "modes", "base_time", "spatial_time", "nodes",
                 "min_separation", "batches", "window"},
}
_REQUIRED = ("ifs", "grid")
_COEFF_KEYS = {"kind", "a", "c", "scale"}
_U0_KEYS = {"kind", "c", "k", "amplitude", "breaks", "values"}
_BOUNDARIES = {"neumann": NEUMANN, "n": NEUMANN, "dirichlet": DIRICHLET, "d": DIRICHLET}
_MODES = ("temporal", "spatial")


@dataclass(frozen=True)
class RunConfig:
    """Validated experiment configuration.

    ``simulation`` is ``None`` when the file has no ``[simulation]``
    section; spectral and kernel commands do not need one.
    """

    spec: IFSSpec
    level: int
    boundary: str
    num_eigs: int | None
    tolerance: float
    t_min: float
    simulation: EnsembleConfig | None
    q: tuple = (8.0,)
    p: tuple = (2.0, 4.0, 8.0)
    modes: tuple = _MODES
    base_time: float | None = None
    spatial_time: float | None = None
    nodes: tuple | None = None
    min_separation: float | None = None
    batches: int = 20
    window: tuple | None = None
    source: str = field(default="", compare=False)

    def canonical(self) -> dict:
        """Plain-data view with every default filled in."""
        sim = None if self.simulation is None else self.simulation.fingerprint_dict()
        return {
            "ifs": {"ratios": list(self.spec.ratios), "offsets": list(self.spec.offsets),
                    "weights": list(self.spec.weights)},
            "grid": {"level": self.level, "boundary": self.boundary,
                     "num_eigs": self.num_eigs},
            "kernel": {"tolerance": self.tolerance, "t_min": self.t_min},
            "simulation": sim,
            "analysis": {"q": list(self.q), "p": list(self.p), "modes": list(self.modes),
                         "base_time": self.base_time, "spatial_time": self.spatial_time,
                         "nodes": None if self.nodes is None else list(self.nodes),
                         "min_separation": self.min_separation, "batches": self.batches,
                         "window": None if self.window is None else list(self.window)},
        }

    @property
    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form."""
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        if self.simulation is None:
            return self
        return replace(self, simulation=replace(self.simulation, seed=_seed(seed, "seed")))


# ---------------------------------------------------------------------------
# field readers
# ---------------------------------------------------------------------------

def _number(value, name: str) -> float:
    if isinstance(value, bool):
        raise SchemaError(name, "TypeError", "expected a number, got a boolean")
    if isinstance(value, (int, float)):
        x = float(value)
    elif isinstance(value, str):
        try:
            x = float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            raise SchemaError(name, "TypeError", f"cannot read {value!r} as a number")
    else:
        raise SchemaError(name, "TypeError", f"expected a number, got {type(value).__name__}")
    if not np.isfinite(x):
        raise SchemaError(name, "NotFinite", f"{x!r}")
    return x


def _positive(value, name: str) -> float:
    x = _number(value, name)
    if x <= 0:
        raise SchemaError(name, "NotPositive", f"{x!r}")
    return x


def _integer(value, name: str, lo: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(name, "TypeError", f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise SchemaError(name, "OutOfRange", f"{value} < {lo}")
    return int(value)


def _seed(value, name: str) -> int:
    s = _integer(value, name, 0)
    if s >= 2 ** 64:
        raise SchemaError(name, "OutOfRange", "seed must fit in 64 bits")
    return s


def _numbers(value, name: str) -> list:
    if not isinstance(value, list):
        raise SchemaError(name, "TypeError", "expected a list")
    return [_number(v, f"{name}[{i}]") for i, v in enumerate(value)]


def _check_keys(table, allowed, prefix: str):
    if not isinstance(table, dict):
        raise SchemaError(prefix, "TypeError", "expected a table")
    for key in table:
        if key not in allowed:
            raise SchemaError(f"{prefix}.{key}", "UnknownKey")


def _coefficient(table, name: str) -> Coefficient:
    _check_keys(table, _COEFF_KEYS, name)
    kind = table.get("kind", "zero")
    if kind not in Coefficient.KINDS:
        raise SchemaError(f"{name}.kind", "UnknownKind", f"{kind!r}")
    needed = {"zero": (), "constant": ("c",), "linear": ("a",), "affine": ("a", "c"),
              "sigmoid": ("scale",)}[kind]
    for key in table:
        if key != "kind" and key not in needed:
            raise SchemaError(f"{name}.{key}", "UnusedKey", f"not a parameter of {kind!r}")
    args = {}
    for key in needed:
        if key not in table:
            raise SchemaError(f"{name}.{key}", "Missing")
        args[key] = _number(table[key], f"{name}.{key}")
    return Coefficient(kind, **args)


def _initial(table, name: str) -> InitialCondition:
    _check_keys(table, _U0_KEYS, name)
    kind = table.get("kind", "constant")
    try:
        if kind == "constant":
            return InitialCondition("constant", c=_number(table.get("c", 1.0), f"{name}.c"))
        if kind == "eigenmode":
            return InitialCondition("eigenmode", k=_integer(table.get("k", 1), f"{name}.k", 1),
                                    amplitude=_number(table.get("amplitude", 1.0),
                                                      f"{name}.amplitude"))
        if kind == "piecewise":
            return InitialCondition("piecewise",
                                    breaks=tuple(_numbers(table.get("breaks", []),
                                                          f"{name}.breaks")),
                                    values=tuple(_numbers(table.get("values", []),
                                                          f"{name}.values")))
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(name, "InvalidValue", str(exc))
    raise SchemaError(f"{name}.kind", "UnknownKind", f"{kind!r}")


def _grid_size(spec: IFSSpec, level: int) -> int:
    """Number of nodes of the level-``level`` partition."""
    return len(build_partition(spec, level).nodes)


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def _build(doc: dict, source: str = "") -> RunConfig:
    for section in doc:
        if section not in _SCHEMA:
            raise SchemaError(section, "UnknownKey", "unknown section")
        _check_keys(doc[section], _SCHEMA[section], section)
    for section in _REQUIRED:
        if section not in doc:
            raise SchemaError(section, "Missing", "required section")

    ifs = doc["ifs"]
    for key in ("ratios", "offsets", "weights"):
        if key not in ifs:
            raise SchemaError(f"ifs.{key}", "Missing")
    raw = {k: _numbers(ifs[k], f"ifs.{k}") for k in ("ratios", "offsets", "weights")}
    try:
        spec = validate_ifs(raw["ratios"], raw["offsets"], raw["weights"])
    except IFSError as exc:
        fld = "ifs.weights" if type(exc).__name__ == "BadWeights" else "ifs"
        raise SchemaError(fld, type(exc).__name__, str(exc)) from exc

    grid = doc["grid"]
    if "level" not in grid:
        raise SchemaError("grid.level", "Missing")
    level = _integer(grid["level"], "grid.level", 0)
    bc_name = str(grid.get("boundary", "neumann")).lower()
    if bc_name not in _BOUNDARIES:
        raise SchemaError("grid.boundary", "UnknownBoundary", f"{bc_name!r}")
    bc = _BOUNDARIES[bc_name]
    size = _grid_size(spec, level)
    dim = size if bc == NEUMANN else size - 2
    if dim < 1:
        raise SchemaError("grid.level", "TooCoarse", "no free nodes")
    num_eigs = None
    if "num_eigs" in grid:
        num_eigs = _integer(grid["num_eigs"], "grid.num_eigs", 1)
        if num_eigs > dim:
            raise SchemaError("grid.num_eigs", "ExceedsGrid",
                              f"num_eigs = {num_eigs} > {dim} free nodes at level {level}")

    kern = doc.get("kernel", {})
    tolerance = _positive(kern.get("tolerance", DEFAULT_TOLERANCE), "kernel.tolerance")
    t_min = _positive(kern.get("t_min", DEFAULT_T_MIN), "kernel.t_min")

    sim_cfg = None
    if "simulation" in doc:
        sim = doc["simulation"]
        for key in ("T", "dt", "paths"):
            if key not in sim:
                raise SchemaError(f"simulation.{key}", "Missing")
        T = _positive(sim["T"], "simulation.T")
        dt = _positive(sim["dt"], "simulation.dt")
        if dt < t_min:
            raise SchemaError("simulation.dt", "BelowTMin",
                              f"dt = {dt!r} < kernel.t_min = {t_min!r}")
        if dt > T:
            raise SchemaError("simulation.dt", "ExceedsT", f"dt = {dt!r} > T = {T!r}")
        n_steps = int(round(T / dt))
        if abs(n_steps * dt - T) > 1e-9 * T:
            raise SchemaError("simulation.T", "NotMultiple", f"T = {T!r} is not a multiple of dt")
        if "output_times" in sim and "output_every" in sim:
            raise SchemaError("simulation.output_times", "Conflict",
                              "give output_times or output_every, not both")
        if "output_times" in sim:
            times = _numbers(sim["output_times"], "simulation.output_times")
        elif "output_every" in sim:
            every = _positive(sim["output_every"], "simulation.output_every")
            k = int(round(every / dt))
            if k < 1 or abs(k * dt - every) > 1e-9 * every:
                raise SchemaError("simulation.output_every", "NotMultiple",
                                  f"{every!r} is not a multiple of dt")
            times = [dt * s for s in range(0, n_steps + 1, k)]
            if times[-1] != dt * n_steps:
                times.append(dt * n_steps)
        else:
            times = [0.0, T]
        for i, t in enumerate(times):
            if not -1e-12 <= t <= T * (1 + 1e-12):
                raise SchemaError(f"simulation.output_times[{i}]", "OutOfRange",
                                  f"{t!r} not in [0, {T!r}]")
            s = round(t / dt)
            if abs(s * dt - t) > 1e-9 * max(T, 1.0):
                raise SchemaError(f"simulation.output_times[{i}]", "NotMultiple",
                                  f"{t!r} is not a multiple of dt")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise SchemaError("simulation.output_times", "NotIncreasing")
        paths = _integer(sim["paths"], "simulation.paths", 1)
        seed = _seed(sim.get("seed", 0), "simulation.seed")
        chunk = _integer(sim.get("chunk_paths", 512), "simulation.chunk_paths", 1)
        on_blowup = sim.get("on_blowup", "raise")
        if on_blowup not in ("raise", "record"):
            raise SchemaError("simulation.on_blowup", "UnknownValue", f"{on_blowup!r}")
        coef = doc.get("coefficients", {})
        f = _coefficient(coef.get("f", {}), "coefficients.f")
        g = _coefficient(coef.get("g", {}), "coefficients.g")
        u0 = _initial(coef.get("u0", {}), "coefficients.u0")
        sim_cfg = EnsembleConfig(T=T, dt=dt, paths=paths, seed=seed, f=f, g=g, u0=u0,
                                 output_times=tuple(times), chunk_paths=chunk,
                                 on_blowup=on_blowup)
    elif "coefficients" in doc:
        raise SchemaError("coefficients", "Unused", "coefficients need a [simulation] section")

    ana = doc.get("analysis", {})
    extra = {}
    if "q" in ana:
        extra["q"] = tuple(_numbers(ana["q"], "analysis.q"))
        if any(q < 1 for q in extra["q"]):
            raise SchemaError("analysis.q", "OutOfRange", "moment orders must be >= 1")
    if "p" in ana:
        extra["p"] = tuple(_numbers(ana["p"], "analysis.p"))
        if any(p < 1 for p in extra["p"]):
            raise SchemaError("analysis.p", "OutOfRange", "moment orders must be >= 1")
    if "modes" in ana:
        modes = ana["modes"]
        if not isinstance(modes, list) or any(m not in _MODES for m in modes):
            raise SchemaError("analysis.modes", "UnknownValue", f"{modes!r}")
        extra["modes"] = tuple(modes)
    for key in ("base_time", "spatial_time", "min_separation"):
        if key in ana:
            extra[key] = _number(ana[key], f"analysis.{key}")
    if "nodes" in ana:
        extra["nodes"] = tuple(_numbers(ana["nodes"], "analysis.nodes"))
    if "batches" in ana:
        extra["batches"] = _integer(ana["batches"], "analysis.batches", 2)
    if "window" in ana:
        w = _numbers(ana["window"], "analysis.window")
        if len(w) != 2 or w[1] <= w[0]:
            raise SchemaError("analysis.window", "InvalidValue", "expected [start, end]")
        extra["window"] = tuple(w)

    return RunConfig(spec, level, bc, num_eigs, tolerance, t_min, sim_cfg,
                     source=source, **extra)


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate configuration text.

    Raises
    ------
    ParseError
        Malformed TOML; the message carries the line and column.
    SchemaError
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{source}: {exc}") from exc
    return _build(doc, source)


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file.

    Raises
    ------
    OSError
        The file cannot be read.
    ParseError
    SchemaError
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_config_text(text, str(path))


def bundled_configs() -> list:
    """Names of the configuration files shipped with the package."""
    return sorted(p.stem for p in CONFIG_DIR.glob("*.toml"))


def bundled_config_path(name: str) -> Path:
    stem = name[:-5] if name.endswith(".toml") else name
    path = CONFIG_DIR / f"{stem}.toml"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled config named {name!r}; "
                                f"available: {', '.join(bundled_configs())}")
    return path


def load_config(name_or_path) -> RunConfig:
    """Parse a file path, falling back to a bundled config of that name."""
    path = Path(name_or_path)
    if path.is_file():
        return parse_config(path)
    return parse_config(bundled_config_path(str(name_or_path)))
