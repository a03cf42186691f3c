"""Experiment configuration as a flat ``key = value`` text file.

The file starts with ``version = 1``. Tuples are comma separated and an
empty value means "use the profile default".
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .mlsd import INIT_SCALE
from .training import DEFAULT_K, get_profile

CONFIG_VERSION = 1


@dataclass
class ExperimentConfig:
    data: str | None = None
    format: str = "tsv"
    split_dir: str | None = None
    min_item_ratings: int = 0
    fractions: tuple = (0.85, 0.05, 0.10)
    seed: int = 0
    profile: str = "mpnbm"
    epochs: int = 200
    beta: float | None = None
    lambdas: tuple | None = None
    phi: tuple | None = None
    variant: str | None = None
    reg_form: str | None = None
    mu: float | None = None
    init_scale: float = INIT_SCALE
    k: int = DEFAULT_K
    repeats: int = 5
    repeat_mode: str = "splits"
    baseline: str = "regsim"

    def resolved_profile(self):
        """The named profile with any structural overrides applied."""
        prof = get_profile(self.profile)
        changes = {}
        if prof.trainable:
            for name in ("beta", "variant", "reg_form", "mu"):
                if getattr(self, name) is not None:
                    changes[name] = getattr(self, name)
            if self.lambdas is not None:
                changes["lambdas"] = tuple(self.lambdas)
            if self.phi is not None:
                changes["phi"] = tuple(self.phi)
            n_layers = len(changes.get("phi", prof.phi))
            if len(changes.get("lambdas", prof.lambdas)) != n_layers or n_layers != len(prof.omegas):
                raise ConfigError(f"profile {prof.name} has {len(prof.omegas)} layers; "
                                  "phi and lambda need one value per layer")
        return replace(prof, **changes) if changes else prof

    def to_text(self):
        lines = [f"version = {CONFIG_VERSION}"]
        for f in fields(self):
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        raw = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"config line {n}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            raw[key] = value
        version = raw.pop("version", None)
        if version != str(CONFIG_VERSION):
            raise ConfigError(f"unsupported config version {version!r}")
        return cls(**parse_values(raw))


_TYPES = {
    "min_item_ratings": int, "seed": int, "epochs": int, "k": int, "repeats": int,
    "beta": float, "mu": float, "init_scale": float,
    "fractions": "floats", "lambdas": "floats", "phi": "floats",
}


def parse_values(raw):
    """Convert string values keyed by field name into typed values."""
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if value is None or value == "":
            out[key] = None
            continue
        kind = _TYPES.get(key, str)
        try:
            if kind == "floats":
                out[key] = tuple(float(v) for v in str(value).split(","))
            else:
                out[key] = kind(value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    return out


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_text(fh.read())
