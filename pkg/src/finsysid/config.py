"""Flat ``section.key = value`` configuration files.

Lines starting with ``#`` are comments. Lists are comma separated; matrices
use ``;`` between rows, e.g. ``system.A = 0.9, 0; 0, 0.5``.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .experiments import ExperimentConfig
from .systems import ArxSystem, NoiseSpec, StateSpaceInnovation, innovation_from_standard

_MISSING = object()


class Config:
    def __init__(self, entries: dict[str, str], source: str = "<config>"):
        self.entries = dict(entries)
        self.source = source

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "Config":
        entries: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or any(c.isspace() for c in key):
                raise ConfigError(f"{source}:{lineno}: malformed key {key!r}")
            if key in entries:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            entries[key] = value
        return cls(entries, source)

    @classmethod
    def load(cls, path: str) -> "Config":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc.strerror}") from exc
        return cls.parse(text, path)

    def has(self, key: str) -> bool:
        return key in self.entries

    def section(self, prefix: str) -> dict[str, str]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.entries.items() if k.startswith(p)}

    def sections(self) -> list[str]:
        return sorted({k.split(".", 1)[0] for k in self.entries if "." in k})

    def _raw(self, key: str, required: bool) -> str | None:
        if key in self.entries:
            return self.entries[key]
        if required:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return None

    def _get(self, key: str, default, convert):
        raw = self._raw(key, default is _MISSING)
        return default if raw is None else convert(raw, key)

    def str(self, key: str, default=_MISSING):
        return self._get(key, default, lambda raw, _k: raw)

    def float(self, key: str, default=_MISSING):
        return self._get(key, default, to_float)

    def int(self, key: str, default=_MISSING):
        return self._get(key, default, to_int)

    def floats(self, key: str, default=_MISSING) -> list[float]:
        return self._get(key, default, to_floats)

    def ints(self, key: str, default=_MISSING) -> list[int]:
        return self._get(key, default, lambda raw, k: [to_int(v, k) for v in _split(raw)])

    def matrix(self, key: str, default=_MISSING) -> np.ndarray:
        return self._get(key, default, to_matrix)


def _split(raw: str) -> list[str]:
    parts = [p.strip() for p in raw.split(",")]
    return [p for p in parts if p]


def to_float(raw: str, key: str = "value") -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: {raw!r} is not a number") from None


def to_int(raw: str, key: str = "value") -> int:
    try:
        return int(raw, 0)
    except ValueError:
        try:
            f = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: {raw!r} is not an integer") from None
        if not f.is_integer():
            raise ConfigError(f"{key}: {raw!r} is not an integer") from None
        return int(f)


def to_floats(raw: str, key: str = "value") -> list[float]:
    return [to_float(v, key) for v in _split(raw)]


def to_matrix(raw: str, key: str = "value") -> np.ndarray:
    rows = [to_floats(r, key) for r in raw.split(";") if r.strip()]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ConfigError(f"{key}: ragged or empty matrix {raw!r}")
    return np.array(rows)


def to_scalar(raw: str):
    """Best-effort typed value for free-form option entries."""
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if ";" in raw:
        return to_matrix(raw)
    if "," in raw:
        try:
            return tuple(to_floats(raw))
        except ConfigError:
            return tuple(_split(raw))
    try:
        return to_int(raw) if raw.lstrip("+-").isdigit() else float(raw)
    except (ConfigError, ValueError):
        return raw


# ---------------------------------------------------------------------------
# domain objects


def noise_from(cfg: Config) -> NoiseSpec:
    return NoiseSpec(family=cfg.str("noise.family", "gaussian"), scale=cfg.float("noise.scale", 1.0))


def system_from(cfg: Config):
    kind = cfg.str("system.kind", "arx")
    sigma_u = cfg.float("system.sigma_u", 1.0)
    if kind == "arx":
        if cfg.has("system.a"):
            a = cfg.floats("system.a")
            b = cfg.floats("system.b", [])
            d_u = cfg.int("system.d_u", None)
            return ArxSystem.scalar(a, b, sigma_w=cfg.float("system.sigma_w", 1.0), sigma_u=sigma_u, d_u=d_u)
        p = cfg.int("system.p")
        q = cfg.int("system.q", 0)
        A = tuple(cfg.matrix(f"system.A_{i}") for i in range(1, p + 1))
        B = tuple(cfg.matrix(f"system.B_{j}") for j in range(1, q + 1))
        S = cfg.matrix("system.Sigma_W_sqrt", np.eye(A[0].shape[0]))
        return ArxSystem(A, B, S, sigma_u, cfg.int("system.d_u", None))
    if kind == "state_space":
        return StateSpaceInnovation(
            A=cfg.matrix("system.A"), B=cfg.matrix("system.B"), C=cfg.matrix("system.C"),
            F=cfg.matrix("system.F"), Sigma_E_sqrt=cfg.matrix("system.Sigma_E_sqrt"), input_std_sigma_u=sigma_u)
    if kind == "standard":
        return innovation_from_standard(
            cfg.matrix("system.A"), cfg.matrix("system.B"), cfg.matrix("system.C"),
            cfg.matrix("system.Sigma_W"), cfg.matrix("system.Sigma_V"), sigma_u)
    raise ConfigError(f"system.kind must be arx, state_space or standard, got {kind!r}")


def experiment_from(cfg: Config, seed: int) -> ExperimentConfig:
    options = {k: to_scalar(v) for k, v in cfg.section("options").items()}
    return ExperimentConfig(
        name=cfg.str("experiment.name", "experiment"),
        system=system_from(cfg),
        noise=noise_from(cfg),
        horizons=tuple(cfg.ints("experiment.horizons")),
        trials=cfg.int("experiment.trials"),
        delta_grid=tuple(cfg.floats("experiment.deltas", [0.1])),
        base_seed=seed,
        tau_or_p=cfg.int("experiment.tau", 1),
        estimator=cfg.str("experiment.estimator", "arx_op"),
        options=options,
    )
