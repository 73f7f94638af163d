"""Experiment configuration: INI-style files plus ``section.key=value`` overrides."""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .assembly import AcousticMaterial, AssemblyError, EmMaterial

PROBLEMS = ("em", "em-nonconductive", "acoustic")
MACRO_ELEMENTS = 16
DEFAULT_SHIFTS = {"em": 20 + 0.3j, "em-nonconductive": 20.0, "acoustic": -300.0}

# the three-layer conductivity profile (y0, y1, sigma_x, sigma_y); values are illustrative
DEFAULT_LAYERS = ((0.0, 0.25, 0.5, 0.25), (0.25, 0.75, 0.1, 0.05), (0.75, 1.0, 1.0, 0.5))


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    problem: str = "em"
    p: int = 4
    ne: int = 64
    discretization: str = "iga"
    levels: int | None = None
    shift: complex | None = None  # None: problem-dependent default, see resolved_shift
    nev: int = 20
    m: int | None = None
    tol: float = 1e-8
    max_restarts: int = 100
    seed: int = 0
    scale: bool = True
    method: str = "auto"  # auto | quadratic | hermitian
    # electromagnetic material
    layers: tuple = DEFAULT_LAYERS
    mu: float = 1.0
    eps: float = 1.0
    # acoustic material
    rho: float = 1.0
    c: float = 340.0
    alpha: float = 5e4
    beta: float = 200.0
    absorbing_edges: tuple = ("top",)
    # verification targets
    mode: tuple = (23, 23)
    branch: int = 2
    out: str = "out"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def riga_levels(self) -> int:
        """Partition levels; by default macroelements of 16 x 16 elements."""
        if self.discretization == "iga":
            return 0
        if self.levels is not None:
            return self.levels
        return max(1, int(round(math.log2(self.ne / MACRO_ELEMENTS)))) if self.ne > MACRO_ELEMENTS else 1

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError("problem.problem", f"must be one of {PROBLEMS}, got {self.problem!r}")
        if self.p < 2:
            raise ConfigError("problem.p", f"degree must be >= 2, got {self.p}")
        if self.ne < 2:
            raise ConfigError("problem.ne", f"need at least 2 elements, got {self.ne}")
        if self.discretization not in ("iga", "riga"):
            raise ConfigError("problem.discretization", f"must be iga or riga, got {self.discretization!r}")
        if self.discretization == "riga":
            L = self.riga_levels
            if L < 1:
                raise ConfigError("problem.levels", "rIGA needs at least one partition level")
            if self.ne % (2 ** L) or self.ne // 2 ** L < 2:
                raise ConfigError("problem.levels",
                                  f"ne={self.ne} cannot be split into 2**{L} macroelements per side")
        if not 1 <= len(self.mode) <= 2 or min(self.mode) < 0:
            raise ConfigError("verify.mode", f"expected i,j (Maxwell) or j (acoustic), got {self.mode}")
        if self.branch not in (1, 2):
            raise ConfigError("verify.branch", f"must be 1 or 2, got {self.branch}")
        if self.nev < 1:
            raise ConfigError("solver.nev", "must be >= 1")
        if self.m is not None and self.m <= self.nev:
            raise ConfigError("solver.m", f"subspace size {self.m} must exceed nev={self.nev}")
        if self.tol <= 0:
            raise ConfigError("solver.tol", "must be positive")
        if self.method not in ("auto", "quadratic", "hermitian"):
            raise ConfigError("solver.method", f"must be auto, quadratic or hermitian, got {self.method!r}")
        if self.method == "hermitian" and self.problem != "em-nonconductive":
            raise ConfigError("solver.method", "the Hermitian path applies to em-nonconductive only")
        if self.uses_hermitian and self.shift is not None and complex(self.shift).imag != 0:
            raise ConfigError("solver.shift", "the Hermitian path needs a real shift")
        try:
            self.em_material()
            self.acoustic_material()
        except AssemblyError as exc:
            raise ConfigError("material", str(exc)) from exc

    @property
    def uses_hermitian(self) -> bool:
        return self.method == "hermitian" or (self.method == "auto" and self.problem == "em-nonconductive")

    @property
    def resolved_shift(self) -> complex:
        if self.shift is not None:
            return complex(self.shift)
        return complex(DEFAULT_SHIFTS[self.problem])

    def em_material(self) -> EmMaterial:
        layers = () if self.problem == "em-nonconductive" else self.layers
        return EmMaterial(layers=layers, mu=self.mu, eps=self.eps)

    def acoustic_material(self) -> AcousticMaterial:
        return AcousticMaterial(self.rho, self.c, self.alpha, self.beta, tuple(self.absorbing_edges))

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, complex):
                v = {"re": v.real, "im": v.imag}
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            d[f.name] = v
        d["riga_levels"] = self.riga_levels
        return d


_SECTIONS = {
    "problem": ("problem", "p", "ne", "discretization", "levels"),
    "solver": ("shift", "nev", "m", "tol", "max_restarts", "seed", "scale", "method"),
    "material": ("layers", "mu", "eps", "rho", "c", "alpha", "beta", "absorbing_edges"),
    "verify": ("mode", "branch"),
    "output": ("out",),
}
_KEY_SECTION = {k: s for s, keys in _SECTIONS.items() for k in keys}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in ("p", "ne", "nev", "max_restarts", "seed", "branch"):
            return int(raw)
        if key in ("levels", "m"):
            return None if raw.lower() in ("", "none", "auto") else int(raw)
        if key in ("tol", "mu", "eps", "rho", "c", "alpha", "beta"):
            return float(raw)
        if key == "shift":
            return complex(raw.replace(" ", "").replace("i", "j"))
        if key == "scale":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes", "on")
        if key == "layers":
            out = []
            for chunk in filter(None, (c.strip() for c in raw.split(";"))):
                vals = [float(v) for v in chunk.replace(",", " ").split()]
                if len(vals) != 4:
                    raise ValueError(chunk)
                out.append(tuple(vals))
            return tuple(out)
        if key == "absorbing_edges":
            return tuple(e.strip() for e in raw.replace(";", ",").split(",") if e.strip())
        if key == "mode":
            return tuple(int(v) for v in raw.replace(";", ",").split(","))
    except ValueError as exc:
        raise ConfigError(f"{_KEY_SECTION.get(key, '?')}.{key}", f"cannot parse {raw!r}") from exc
    return raw


def load_config(path: str | Path | None = None, overrides=(), **kwargs) -> ExperimentConfig:
    """Build a config from an INI file, ``section.key=value`` overrides and keyword arguments."""
    values: dict = {}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError("config", str(exc)) from exc
        for section in cp.sections():
            for key, raw in cp.items(section):
                if key not in _KEY_SECTION:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                values[key] = _parse_value(key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip().split(".")[-1]
        if key not in _KEY_SECTION:
            raise ConfigError(key, "unknown key")
        values[key] = _parse_value(key, raw)
    values.update({k: v for k, v in kwargs.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
