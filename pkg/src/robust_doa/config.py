"""Run configuration: YAML in, validated dataclasses out.

Every field has a default. Validation errors name the offending field
with its dotted path (``sampling.n_xu``).
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import lyapunov, ndd
from .doa import StateSamples
from .grid import Box, UniformGrid
from .plant import PlantError, PlantSet, builtin
from .sampler import SampleConfig

PRESETS = ("baseline", "baseline-desk", "fixed-q-desk", "optimize-desk")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-8`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789."))


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class PlantConfig:
    builtin: str | None = "paper-sec5"
    nominal: list[str] | None = None
    delta: list[str] | None = None
    n: int | None = None
    m: int | None = None


@dataclass
class RegionConfig:
    state: list[list[float]] = field(default_factory=lambda: [[-2.0, 2.0]])
    control: list[list[float]] = field(default_factory=lambda: [[-2.0, 2.0]])


@dataclass
class GridConfig:
    cell_width: float | list[float] = 0.01
    control_cell_width: float | list[float] | None = None  # defaults to cell_width


@dataclass
class SamplingConfig:
    seed: int = 0
    n_xu: int = 5_000_000
    n_succ: int = 500
    n_x: int = 1_000_000
    margin: float = 0.0
    min_samples_per_cell: int = 1
    origin_layers: int = ndd.DEFAULT_ORIGIN_LAYERS


@dataclass
class PsoSection:
    swarm: int = 20
    iterations: int = 50
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    lower: float = -3.0
    upper: float = 3.0
    seed: int = 0


@dataclass
class LyapunovConfig:
    kind: str = "fixed"  # fixed | sos | optimize
    expression: str | None = "x1^2"
    d: int = 2
    Q: list[list[float]] | None = None
    pso: PsoSection = field(default_factory=PsoSection)


@dataclass
class BaselineConfig:
    expression: str | None = None


@dataclass
class AlphaConfig:
    eps_init: float = 10.0
    accuracy: float = 0.001
    alpha_max: float | None = None
    stay_in_region: bool = True


@dataclass
class ControllerSection:
    stride: int = 1
    length_scale_cells: float = 5.0
    signal_variance: float = 1.0
    jitter: float = 1e-8
    probe_count: int = 10_000
    seed: int = 0


@dataclass
class SimulationSection:
    trajectories: int = 1000
    max_steps: int = 200
    radius: float = 1e-3
    seed: int = 0
    noise: bool = True


@dataclass
class RunConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    region: RegionConfig = field(default_factory=RegionConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    lyapunov: LyapunovConfig = field(default_factory=LyapunovConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    alpha: AlphaConfig = field(default_factory=AlphaConfig)
    controller: ControllerSection = field(default_factory=ControllerSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    output: str = "runs/out"

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Digest of every parameter except the output directory."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    # Derived objects

    def build_plant(self) -> PlantSet:
        p = self.plant
        try:
            if p.builtin:
                return builtin(p.builtin)
            return PlantSet.from_expressions(p.nominal, p.delta, p.n, p.m)
        except (PlantError, ValueError) as err:
            raise ConfigError("plant", str(err)) from None

    def state_box(self) -> Box:
        return _box(self.region.state, "region.state")

    def control_box(self) -> Box:
        return _box(self.region.control, "region.control")

    def state_grid(self) -> UniformGrid:
        return UniformGrid.with_width(self.state_box(), self.grid.cell_width)

    def control_grid(self) -> UniformGrid:
        width = self.grid.control_cell_width
        return UniformGrid.with_width(self.control_box(),
                                      self.grid.cell_width if width is None else width)

    def sample_config(self) -> SampleConfig:
        s = self.sampling
        return SampleConfig(seed=s.seed, n_xu=s.n_xu, n_succ=s.n_succ, n_x=s.n_x)

    def pso_config(self):
        from .optimizer import PsoConfig

        p = self.lyapunov.pso
        return PsoConfig(swarm=p.swarm, iterations=p.iterations, inertia=p.inertia,
                         cognitive=p.cognitive, social=p.social, lower=p.lower,
                         upper=p.upper, seed=p.seed)

    def fixed_lyapunov(self, expression: str):
        n = self.state_box().dim
        try:
            return lyapunov.FixedLyapunov.parse(expression, n)
        except ValueError as err:
            raise ConfigError("lyapunov.expression", str(err)) from None


def _box(bounds, path: str) -> Box:
    arr = np.asarray(bounds, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise ConfigError(path, "expected a list of [lower, upper] pairs")
    try:
        return Box(tuple(arr[:, 0]), tuple(arr[:, 1]))
    except ValueError as err:
        raise ConfigError(path, str(err)) from None


def _from_dict(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, "unknown field")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if default is not None and hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _from_dict(type(default), value, sub)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def validate(cfg: RunConfig) -> RunConfig:
    """Check field values and cross-field consistency."""
    p = cfg.plant
    if p.builtin is None:
        _require(p.nominal is not None and p.delta is not None, "plant.nominal",
                 "give either builtin or nominal and delta expressions")
        _require(_is_int(p.n) and _is_int(p.m), "plant.n", "n and m are required integers")
        p.nominal = [p.nominal] if isinstance(p.nominal, str) else list(p.nominal)
        p.delta = [p.delta] if isinstance(p.delta, str) else list(p.delta)
    plant = cfg.build_plant()
    sbox, cbox = cfg.state_box(), cfg.control_box()
    _require(sbox.dim == plant.n, "region.state", f"expected {plant.n} intervals for the plant state")
    _require(cbox.dim == plant.m, "region.control", f"expected {plant.m} intervals for the plant input")
    _require(sbox.contains_origin(), "region.state", "the origin must lie strictly inside")
    _require(cbox.contains_origin(), "region.control", "the origin must lie strictly inside")
    for name in ("cell_width", "control_cell_width"):
        w = getattr(cfg.grid, name)
        if w is None:
            continue
        ws = np.atleast_1d(np.asarray(w, dtype=float))
        _require(bool(np.all(ws > 0) and np.all(np.isfinite(ws))), f"grid.{name}",
                 "must be positive")

    s = cfg.sampling
    for name in ("seed", "n_xu", "n_succ", "n_x", "min_samples_per_cell", "origin_layers"):
        _require(_is_int(getattr(s, name)), f"sampling.{name}", "must be an integer")
    _require(s.seed >= 0, "sampling.seed", "must be >= 0")
    for name in ("n_xu", "n_succ", "n_x", "min_samples_per_cell", "origin_layers"):
        _require(getattr(s, name) >= 1, f"sampling.{name}", "must be >= 1")
    _require(_is_num(s.margin) and s.margin >= 0, "sampling.margin", "must be >= 0")

    lc = cfg.lyapunov
    _require(lc.kind in ("fixed", "sos", "optimize"), "lyapunov.kind",
             "must be one of fixed, sos, optimize")
    if lc.kind == "fixed":
        _require(isinstance(lc.expression, str), "lyapunov.expression", "required for kind fixed")
        cfg.fixed_lyapunov(lc.expression)
    else:
        _require(_is_int(lc.d) and lc.d >= 1, "lyapunov.d", "must be an integer >= 1")
        try:
            r = lyapunov.basis(plant.n, lc.d).r
        except ValueError as err:
            raise ConfigError("lyapunov.d", str(err)) from None
        if lc.kind == "sos":
            _require(lc.Q is not None, "lyapunov.Q", "required for kind sos")
            Q = np.asarray(lc.Q, dtype=float)
            _require(Q.shape == (r, r), "lyapunov.Q", f"expected a {r}x{r} matrix")
            _require(lyapunov.check_full_rank(Q), "lyapunov.Q", "matrix is rank deficient")
        try:
            cfg.pso_config()
        except ValueError as err:
            raise ConfigError("lyapunov.pso", str(err)) from None
        _require(_is_int(lc.pso.seed) and lc.pso.seed >= 0, "lyapunov.pso.seed", "must be >= 0")
    if cfg.baseline.expression is not None:
        try:
            lyapunov.FixedLyapunov.parse(cfg.baseline.expression, plant.n)
        except ValueError as err:
            raise ConfigError("baseline.expression", str(err)) from None

    a = cfg.alpha
    _require(_is_num(a.eps_init) and a.eps_init > 0, "alpha.eps_init", "must be positive")
    _require(_is_num(a.accuracy) and a.accuracy > 0, "alpha.accuracy", "must be positive")
    ratio = a.eps_init / a.accuracy
    k = round(np.log10(ratio)) if ratio >= 1 else -1
    _require(k >= 0 and np.isclose(ratio, 10.0 ** k, rtol=1e-9), "alpha.accuracy",
             "eps_init / accuracy must be a power of ten")
    _require(a.alpha_max is None or (_is_num(a.alpha_max) and a.alpha_max > 0),
             "alpha.alpha_max", "must be positive")

    c = cfg.controller
    _require(_is_int(c.stride) and c.stride >= 1, "controller.stride", "must be an integer >= 1")
    _require(_is_num(c.length_scale_cells) and c.length_scale_cells > 0,
             "controller.length_scale_cells", "must be positive")
    _require(_is_num(c.signal_variance) and c.signal_variance > 0,
             "controller.signal_variance", "must be positive")
    _require(_is_num(c.jitter) and c.jitter > 0, "controller.jitter", "must be positive")
    _require(_is_int(c.probe_count) and c.probe_count >= 0, "controller.probe_count",
             "must be an integer >= 0")
    _require(_is_int(c.seed) and c.seed >= 0, "controller.seed", "must be >= 0")

    m = cfg.simulation
    _require(_is_int(m.trajectories) and m.trajectories >= 1, "simulation.trajectories",
             "must be an integer >= 1")
    _require(_is_int(m.max_steps) and m.max_steps >= 1, "simulation.max_steps",
             "must be an integer >= 1")
    _require(_is_num(m.radius) and m.radius > 0, "simulation.radius", "must be positive")
    _require(_is_int(m.seed) and m.seed >= 0, "simulation.seed", "must be >= 0")
    _require(isinstance(cfg.output, str) and cfg.output != "", "output", "must be a path")
    return cfg


def from_dict(data: dict) -> RunConfig:
    """Build and validate a config; a manifest's ``config`` entry is accepted too."""
    if isinstance(data, dict) and "manifest_version" in data:
        data = data["config"]
    try:
        cfg = _from_dict(RunConfig, data, "")
    except TypeError as err:
        raise ConfigError("<root>", str(err)) from None
    return validate(cfg)


def load(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as err:
        raise ConfigError("<file>", f"not valid YAML: {err}") from None
    return from_dict(data or {})


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("robust_doa").joinpath("configs", f"{name}.yaml").read_text()


def preset(name: str) -> RunConfig:
    return from_dict(yaml.load(preset_text(name), Loader=_Loader))


def state_samples(cfg: RunConfig) -> StateSamples:
    from .doa import draw_state_samples

    return draw_state_samples(cfg.state_grid(), cfg.sampling.n_x, cfg.sampling.seed)
