"""Experiment configuration: sectioned key-value files and model fixtures.

Configuration files are INI-style::

    [model]
    grid_n = 24            ; nodes per side of the unit square
    n_obs_times = 5
    dt = 0.2               ; time step (time units)
    t1 = 1.0               ; first observation time
    kappa = 0.01           ; diffusivity (length^2 / time)
    velocity = 0.3, 0.1    ; length / time
    sensors = 3 4; 10 12   ; interior grid nodes "ix iy" separated by ';'

    [prior]
    delta = 0.5
    scale = 1.0

    [noise]
    lambda_lo = 0.02       ; noise standard deviation bounds
    lambda_hi = 0.04

    [penalty]
    kind = l0_squared      ; none | l0_squared | budget
    alpha = 10
    budget = 3

    [solver]
    seed = 0               ; any SolverConfig field

    [output]
    directory = out
    formats = csv, json

Instead of ``sensors`` the model section may give ``n_sensors`` (and
optionally ``layout_seed``) for a reproducible random layout, or
``fixture`` pointing to a dense model file (see :func:`load_fixture`).
Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .model import (GaussianPrior, LinearForwardModel, ModelError, NoiseModel,
                    build_laplacian_prior, build_reference_model,
                    default_sensor_layout)
from .objective import OEDProblem, PenaltyConfig, PenaltyKind
from .optimizer import SolverConfig


class ConfigError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(loc + message)


@dataclass
class ModelSection:
    grid_n: int = 24
    n_obs_times: int = 5
    dt: float = 0.2
    t1: float = 1.0
    kappa: float = 0.01
    velocity: tuple[float, float] = (0.3, 0.1)
    sensors: list[tuple[int, int]] = field(default_factory=list)
    fixture: str = ""


@dataclass
class PriorSection:
    delta: float = 0.5
    scale: float = 1.0


@dataclass
class NoiseSection:
    lambda_lo: float = 0.02
    lambda_hi: float = 0.04


@dataclass
class OutputSection:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    prior: PriorSection = field(default_factory=PriorSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def n_sensors(self) -> int:
        return len(self.model.sensors)


_SECTIONS = {
    "model": ModelSection, "prior": PriorSection, "noise": NoiseSection,
    "penalty": PenaltyConfig, "solver": SolverConfig, "output": OutputSection,
}
_MODEL_EXTRA = {"n_sensors", "layout_seed"}


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip().lower()
            if key is None and current == section:
                return lineno
            continue
        if current == section and key is not None:
            k = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            if k == key:
                return lineno
    return None


def _parse_sensors(value: str) -> list[tuple[int, int]]:
    out = []
    for chunk in value.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"sensor entry {chunk!r} is not 'ix iy'")
        out.append((int(parts[0]), int(parts[1])))
    return out


def _convert(ftype, value: str):
    t = str(ftype)
    if t in ("int", "<class 'int'>"):
        return int(value)
    if t in ("float", "<class 'float'>"):
        return float(value)
    if t in ("bool", "<class 'bool'>"):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if t == "str" or t == "<class 'str'>":
        return value.strip()
    if "PenaltyKind" in t:
        return PenaltyKind(value.strip())
    if t.startswith("tuple[float"):
        vals = tuple(float(v) for v in value.replace(";", ",").split(","))
        if len(vals) != 2:
            raise ValueError("expected two comma-separated numbers")
        return vals
    if t.startswith("tuple[str"):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if t.startswith("list[tuple[int"):
        return _parse_sensors(value)
    raise TypeError(f"unsupported field type {t}")


def parse_config_text(text: str, path="<string>", base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                   interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc), path, getattr(exc, "lineno", None)) from exc

    sections = {}
    extra = {}
    for name in cp.sections():
        key = name.lower()
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]", path, _line_of(text, key))
        cls = _SECTIONS[key]
        ftypes = {f.name: f.type for f in dataclasses.fields(cls) if f.init}
        kwargs = {}
        for k, v in cp.items(name):
            if key == "model" and k in _MODEL_EXTRA:
                try:
                    extra[k] = int(v)
                except ValueError as exc:
                    raise ConfigError(f"[{key}] {k}: {exc}", path, _line_of(text, key, k))
                continue
            if k not in ftypes:
                raise ConfigError(f"unknown key '{k}' in [{key}]", path, _line_of(text, key, k))
            try:
                kwargs[k] = _convert(ftypes[k], v)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{key}] {k}: {exc}", path, _line_of(text, key, k)) from exc
        try:
            sections[key] = cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{key}] {exc}", path, _line_of(text, key)) from exc

    cfg = ExperimentConfig(**sections)
    m = cfg.model
    if m.fixture and base_dir is not None and not Path(m.fixture).is_absolute():
        m.fixture = str((base_dir / m.fixture).resolve())
    if not m.fixture:
        if "n_sensors" in extra and not m.sensors:
            try:
                m.sensors = default_sensor_layout(m.grid_n, extra["n_sensors"],
                                                  extra.get("layout_seed", 0))
            except ModelError as exc:
                raise ConfigError(str(exc), path, _line_of(text, "model", "n_sensors"))
        if "n_sensors" in extra and len(m.sensors) != extra["n_sensors"]:
            raise ConfigError("n_sensors disagrees with the sensors list", path,
                              _line_of(text, "model", "n_sensors"))
        if not m.sensors:
            raise ConfigError("[model] needs 'sensors', 'n_sensors' or 'fixture'", path,
                              _line_of(text, "model"))
    if m.fixture and "noise" not in sections:
        try:
            _, _, fx_noise = load_fixture(m.fixture)
        except (OSError, ModelError) as exc:
            raise ConfigError(f"cannot load fixture: {exc}", path,
                              _line_of(text, "model", "fixture")) from exc
        cfg.noise = NoiseSection(fx_noise.lambda_lo, fx_noise.lambda_hi)
    if not (0 < cfg.noise.lambda_lo < cfg.noise.lambda_hi):
        raise ConfigError(
            f"noise box requires 0 < lambda_lo < lambda_hi, got "
            f"[{cfg.noise.lambda_lo}, {cfg.noise.lambda_hi}]",
            path, _line_of(text, "noise", "lambda_lo") or _line_of(text, "noise"))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path) from exc
    return parse_config_text(text, path, path.parent)


def _fmt(value) -> str:
    if isinstance(value, PenaltyKind):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, list):
        return "; ".join(f"{a} {b}" for a, b in value)
    return str(value)


def to_ini(cfg: ExperimentConfig) -> str:
    """Render the fully resolved configuration (every field explicit)."""
    buf = io.StringIO()
    for name, cls in _SECTIONS.items():
        sec = getattr(cfg, name)
        buf.write(f"[{name}]\n")
        for f in dataclasses.fields(cls):
            if not f.init:
                continue
            value = getattr(sec, f.name)
            if name == "model" and f.name == "sensors" and cfg.model.fixture:
                continue
            if name == "model" and f.name == "fixture" and not value:
                continue
            buf.write(f"{f.name} = {_fmt(value)}\n")
        buf.write("\n")
    return buf.getvalue()


# --- fixtures ----------------------------------------------------------------

def load_fixture(path) -> tuple[LinearForwardModel, GaussianPrior, NoiseModel]:
    """Read a dense model fixture.

    The format is whitespace-separated text; ``#`` starts a comment. Header
    lines ``n_sensors N``, ``n_obs_times T``, ``lambda_lo a``, ``lambda_hi b``
    come first, then blocks introduced by ``forward R C``,
    ``prior_precision P P`` and optionally ``prior_mean P``, each followed by
    its values in row-major order (any line breaking).
    """
    tokens = []
    for raw in Path(path).read_text().splitlines():
        tokens.extend(raw.split("#", 1)[0].split())
    pos = 0
    header = {}
    blocks = {}

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise ModelError(f"{path}: unexpected end of fixture")
        out = tokens[pos:pos + n]
        pos += n
        return out

    while pos < len(tokens):
        (word,) = take(1)
        if word in ("n_sensors", "n_obs_times"):
            header[word] = int(take(1)[0])
        elif word in ("lambda_lo", "lambda_hi"):
            header[word] = float(take(1)[0])
        elif word in ("forward", "prior_precision"):
            r, c = (int(v) for v in take(2))
            blocks[word] = np.array(take(r * c), dtype=float).reshape(r, c)
        elif word == "prior_mean":
            (p,) = (int(v) for v in take(1))
            blocks[word] = np.array(take(p), dtype=float)
        else:
            raise ModelError(f"{path}: unknown fixture entry {word!r}")
    missing = {"n_sensors", "n_obs_times", "lambda_lo", "lambda_hi"} - header.keys()
    missing |= {"forward", "prior_precision"} - blocks.keys()
    if missing:
        raise ModelError(f"{path}: fixture is missing {sorted(missing)}")
    F = LinearForwardModel(blocks["forward"], header["n_sensors"], header["n_obs_times"])
    P = blocks["prior_precision"]
    prior = GaussianPrior(blocks.get("prior_mean", np.zeros(P.shape[0])), P)
    noise = NoiseModel(header["lambda_lo"], header["lambda_hi"],
                       header["n_sensors"], header["n_obs_times"])
    return F, prior, noise


def write_fixture(path, model: LinearForwardModel, prior: GaussianPrior,
                  noise: NoiseModel) -> None:
    lines = [f"n_sensors {model.n_sensors}", f"n_obs_times {model.n_obs_times}",
             f"lambda_lo {noise.lambda_lo!r}", f"lambda_hi {noise.lambda_hi!r}",
             "forward {} {}".format(*model.matrix.shape)]
    lines += [" ".join(repr(float(v)) for v in row) for row in model.matrix]
    lines.append("prior_precision {} {}".format(*prior.precision.shape))
    lines += [" ".join(repr(float(v)) for v in row) for row in prior.precision]
    lines.append(f"prior_mean {prior.mean.size}")
    lines.append(" ".join(repr(float(v)) for v in prior.mean))
    Path(path).write_text("\n".join(lines) + "\n")


def build_problem(cfg: ExperimentConfig) -> OEDProblem:
    m = cfg.model
    if m.fixture:
        F, prior, _ = load_fixture(m.fixture)
        noise = NoiseModel(cfg.noise.lambda_lo, cfg.noise.lambda_hi,
                           F.n_sensors, F.n_obs_times)
        return OEDProblem(F, prior, noise, cfg.penalty)
    F = build_reference_model(m.grid_n, m.n_obs_times, m.kappa, m.velocity,
                              m.sensors, m.dt, m.t1)
    prior = build_laplacian_prior(m.grid_n, cfg.prior.delta, cfg.prior.scale)
    noise = NoiseModel(cfg.noise.lambda_lo, cfg.noise.lambda_hi,
                       F.n_sensors, F.n_obs_times)
    return OEDProblem(F, prior, noise, cfg.penalty)


REFERENCE_CONFIGS = {2: "sensors2.ini", 5: "sensors5.ini", 10: "sensors10_budget.ini"}


def reference_config_path(n_sensors: int) -> Path:
    return Path(str(resources.files("robust_oed") / "configs" / REFERENCE_CONFIGS[n_sensors]))


def reference_config(n_sensors: int, seed: int | None = None) -> ExperimentConfig:
    """One of the bundled 2-, 5- or 10-sensor experiment configurations."""
    cfg = load_config(reference_config_path(n_sensors))
    if seed is not None:
        cfg.solver.seed = seed
    return cfg
