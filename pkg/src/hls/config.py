"""Plain-text ``key = value`` job configuration."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigurationError, ExponentError
from .geometry import ManifoldSpec, canonical_kind
from .riesz import critical_exponent

WORKFLOWS = ("solve", "baseline", "transplant", "cc-diagnose", "split-check")
REQUIRED = ("manifold", "alpha", "p", "resolution", "workflow")


class ConfigError(ConfigurationError):
    """Carries every problem found in a configuration."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"not a finite number: {text!r}")
    return v


def _floats(text: str) -> tuple:
    items = [x for x in text.replace(" ", "").split(",") if x]
    if not items:
        raise ValueError("empty list")
    return tuple(_float(x) for x in items)


def _ints(text: str) -> tuple:
    return tuple(_int(x) for x in text.replace(" ", "").split(",") if x)


def _str(text: str) -> str:
    return text


# key -> parser; order here is the order of the canonical echo.
_PARSERS = {
    "workflow": _str,
    "manifold": _str,
    "radius": _float,
    "periods": _floats,
    "n": _int,
    "alpha": _float,
    "p": _float,
    "resolution": _int,
    "seed": _int,
    "max_iter": _int,
    "tol": _float,
    "deterministic": _bool,
    "diagonal": _float,
    "center": _floats,
    "delta": _float,
    "lambdas": _floats,
    "ball_resolution": _int,
    "solve_sup": _bool,
    "radii": _floats,
    "threshold": _float,
    "bubbles": _int,
    "rhos": _floats,
    "r": _float,
    "frequencies": _ints,
    "out": _str,
}


@dataclass(frozen=True)
class JobConfig:
    workflow: str
    manifold: str
    alpha: float
    p: float
    resolution: int
    radius: Optional[float] = None
    periods: Optional[tuple] = None
    n: Optional[int] = None
    seed: Optional[int] = None
    max_iter: int = 2000
    tol: float = 1e-10
    deterministic: bool = False
    diagonal: Optional[float] = None
    center: Optional[tuple] = None
    delta: Optional[float] = None
    lambdas: Optional[tuple] = None
    ball_resolution: int = 40
    solve_sup: bool = True
    radii: tuple = (0.2, 0.1, 0.05)
    threshold: float = 0.1
    bubbles: int = 1
    rhos: tuple = (0.4, 0.2, 0.1, 0.05)
    r: Optional[float] = None
    frequencies: tuple = (2, 4, 8, 16)
    out: Optional[str] = None

    @property
    def dim(self) -> int:
        return self.n if self.manifold == "point" else self.spec.dim

    @property
    def spec(self) -> ManifoldSpec:
        if self.manifold == "point":
            raise ConfigurationError("the point toy has no manifold spec")
        if self.manifold.startswith("torus"):
            return ManifoldSpec(self.manifold, periods=self.periods)
        return ManifoldSpec(self.manifold, radius=1.0 if self.radius is None else self.radius)

    @property
    def exponents(self):
        """``(q, t)``."""
        return critical_exponent(self.dim, self.alpha, self.p)

    @property
    def q(self) -> float:
        return self.exponents[0]

    @property
    def t(self) -> float:
        return self.exponents[1]

    @property
    def split_r(self) -> float:
        """Target exponent of the split check; defaults to 2, or the midpoint of ``[1, q)`` if ``q <= 2``."""
        return self.r if self.r is not None else min(2.0, 0.5 * (1.0 + self.q))

    def echo(self) -> str:
        """Canonical ``key=value`` text; re-parsing it gives an equal config."""
        lines = []
        for key in _PARSERS:
            if key == "out":
                continue
            v = getattr(self, key)
            if v is not None:
                lines.append(f"{key}={format_value(v)}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _split_line(line: str):
    # "a=1,b=2" is shorthand for two lines; lists keep their commas.
    if line.count("=") > 1:
        return [part for part in line.split(",") if part.strip()]
    return [line]


def parse_config(text: str, **overrides) -> JobConfig:
    """Parse and validate a configuration; raises :class:`ConfigError` listing every problem.

    ``overrides`` hold already-typed values (e.g. ``workflow`` from the
    command line); ``None`` entries are ignored.
    """
    errors = []
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        for item in _split_line(line):
            if "=" not in item:
                errors.append(f"line {lineno}: expected key=value, got {item.strip()!r}")
                continue
            key, value = (x.strip() for x in item.split("=", 1))
            if key not in _PARSERS:
                errors.append(f"line {lineno}: unknown key {key!r}")
                continue
            if key in raw:
                errors.append(f"line {lineno}: duplicate key {key!r}")
                continue
            try:
                raw[key] = _PARSERS[key](value)
            except ValueError as exc:
                errors.append(f"line {lineno}: bad value for {key!r}: {exc}")
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "workflow" and key in raw and raw[key] != value:
            errors.append(f"workflow {raw[key]!r} in the config conflicts with {value!r}")
        raw[key] = value

    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        errors.append("missing required keys: " + ", ".join(missing))
    _validate(raw, errors)
    if errors:
        raise ConfigError(errors)
    return JobConfig(**raw)


def _validate(raw: dict, errors: list) -> None:
    wf = raw.get("workflow")
    if wf is not None and wf not in WORKFLOWS:
        errors.append(f"workflow must be one of {', '.join(WORKFLOWS)}; got {wf!r}")
    n = raw.get("n")
    kind = raw.get("manifold")
    if kind is not None:
        if kind == "point":
            if "n" not in raw:
                errors.append("manifold=point needs the dimension n")
            if "diagonal" not in raw:
                errors.append("manifold=point needs the kernel value 'diagonal'")
            elif not raw["diagonal"] > 0:
                errors.append("diagonal must be positive")
            if wf is not None and wf != "solve":
                errors.append("manifold=point only supports the solve workflow")
            n = raw.get("n")
        else:
            try:
                kind = canonical_kind(kind)
                raw["manifold"] = kind
                if kind.startswith("torus"):
                    if "radius" in raw:
                        errors.append(f"{kind} takes periods, not a radius")
                    spec = ManifoldSpec(kind, periods=raw.get("periods"))
                    raw["periods"] = spec.periods
                else:
                    if "periods" in raw:
                        errors.append(f"{kind} takes a radius, not periods")
                    spec = ManifoldSpec(kind, radius=raw.get("radius", 1.0))
                    raw["radius"] = spec.radius
                n = spec.dim
                if "n" in raw and raw["n"] != n:
                    errors.append(f"n = {raw['n']} does not match the dimension {n} of {kind}")
                raw["n"] = n
            except ConfigurationError as exc:
                errors.append(str(exc))
            if wf == "baseline" and not kind.startswith("ball"):
                errors.append("the baseline workflow runs on a ball manifold (ball1, ball2, ball3)")
            if wf in ("transplant", "cc-diagnose") and kind.startswith("ball"):
                errors.append(f"the {wf} workflow needs a compact manifold, not {kind}")
    alpha, p = raw.get("alpha"), raw.get("p")
    if n is not None and alpha is not None and p is not None:
        try:
            q, _ = critical_exponent(n, alpha, p)
            if "r" in raw and not (1 <= raw["r"] < q):
                errors.append(f"r must satisfy 1 <= r < q = {q:g}")
        except ExponentError as exc:
            errors.append(f"inadmissible exponents (need 0 < alpha < n and 1 < p < n/alpha): {exc}")
    res = raw.get("resolution")
    if res is not None and res < 2 and kind != "point":
        errors.append("resolution must be >= 2")
    for key in ("max_iter", "ball_resolution", "bubbles"):
        if key in raw and raw[key] < 1:
            errors.append(f"{key} must be positive")
    if "bubbles" in raw and raw["bubbles"] > 2:
        errors.append("bubbles must be 1 or 2")
    for key in ("tol", "delta"):
        if key in raw and not raw[key] > 0:
            errors.append(f"{key} must be positive")
    if "threshold" in raw and not (0 < raw["threshold"] < 1):
        errors.append("threshold must lie in (0, 1)")
    for key in ("lambdas", "radii", "rhos"):
        if key in raw and any(not x > 0 for x in raw[key]):
            errors.append(f"{key} must be positive")
    if "lambdas" in raw and any(b >= a for a, b in zip(raw["lambdas"], raw["lambdas"][1:])):
        errors.append("lambdas must be strictly decreasing")


def parse_summary(text: str) -> dict:
    """``key -> value`` strings of a ``summary.txt``."""
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def config_from_summary(text: str) -> JobConfig:
    """Rebuild the run configuration from the ``config.*`` echo of a summary."""
    echo = [f"{k[len('config.'):]}={v}" for k, v in parse_summary(text).items() if k.startswith("config.")]
    return parse_config("\n".join(echo))


__all__ = ["ConfigError", "JobConfig", "WORKFLOWS", "config_from_summary", "parse_config", "parse_summary"]
