"""Flat ``key = value`` experiment configuration files.

Lines are ``key = value``; ``#`` starts a comment. Recognised keys:

====================================  =========================================
``p``                                 per-attempt emission probability, (0, 1)
``phi_A``, ``phi_B``                  pair phases in radians (``pi/3`` allowed)
``c1``, ``c2``                        vacuum admixture of the A and B pairs
``alpha``, ``beta``                   input qubit amplitudes (``0.6+0.8j``)
``prep_detector.number_resolving``    true/false (also ``prep_detector = bucket``)
``prep_detector.efficiency``          [0, 1]
``prep_detector.dark_prob``           per-window dark-click probability
``bell_detector.*``                   as for ``prep_detector``
``eta_retrieval``                     readout transfer efficiency
``eta_storage``                       A1/B1 transfer efficiency during storage
``max_prep_attempts``                 preparation attempts before giving up
``trials``, ``seed``                  Monte Carlo size and master seed
``memory``                            ``direct`` or ``heralded``
``mode``                              ``exact``, ``montecarlo`` or ``both``
``out``                               output directory
``format``                            comma list drawn from ``json``, ``csv``
====================================  =========================================

The Greek spellings ``Φ_A``, ``Φ_B``, ``α``, ``β`` and ``η_retrieval`` are
accepted as aliases.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .detection import DetectorModel
from .errors import ConfigError
from .protocol import ProtocolConfig

MODES = ("exact", "montecarlo", "both")
FORMATS = ("json", "csv")
ALIASES = {"Φ_A": "phi_A", "Φ_B": "phi_B", "α": "alpha", "β": "beta", "η_retrieval": "eta_retrieval"}
_DETECTOR_FIELDS = ("number_resolving", "efficiency", "dark_prob")
_PI = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)?)\*?pi(?:/(\d+\.?\d*))?$")


@dataclass(frozen=True)
class ExperimentSpec:
    config: ProtocolConfig = field(default_factory=ProtocolConfig)
    mode: str = "both"
    output_dir: Path = Path("results")
    report_formats: tuple[str, ...] = ("json",)


@dataclass(frozen=True)
class Diagnostic:
    key: str | None
    message: str
    severity: str = "error"
    line: int | None = None

    def __str__(self) -> str:
        where = f" (line {self.line})" if self.line is not None else ""
        return f"{self.severity}: {self.key or '<file>'}{where}: {self.message}"


def _real(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    m = _PI.match(text.replace(" ", ""))
    if not m:
        raise ValueError(f"not a real number: {text!r}")
    coef = m.group(1)
    scale = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
    div = float(m.group(2)) if m.group(2) else 1.0
    return scale * math.pi / div


def _complex(text: str) -> complex:
    return complex(text.replace(" ", ""))


def _int(text: str) -> int:
    return int(text.replace("_", ""))


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "resolving"):
        return True
    if low in ("false", "no", "0", "bucket"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _formats(text: str) -> tuple[str, ...]:
    items = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [x for x in items if x not in FORMATS]
    if bad or not items:
        raise ValueError(f"formats must be drawn from {', '.join(FORMATS)}")
    return items


def _choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text

    return parse


_PARSERS = {
    "p": _real,
    "phi_A": _real,
    "phi_B": _real,
    "c1": _real,
    "c2": _real,
    "alpha": _complex,
    "beta": _complex,
    "eta_retrieval": _real,
    "eta_storage": _real,
    "max_prep_attempts": _int,
    "trials": _int,
    "seed": _int,
    "memory": str,
    "mode": _choice(MODES),
    "out": Path,
    "format": _formats,
}
for _det in ("prep_detector", "bell_detector"):
    _PARSERS[_det] = _bool
    _PARSERS[f"{_det}.number_resolving"] = _bool
    _PARSERS[f"{_det}.efficiency"] = _real
    _PARSERS[f"{_det}.dark_prob"] = _real


def read_lines(text: str) -> dict[str, tuple[str, int]]:
    """Raw ``key -> (value, line)`` association; raises on malformed lines."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError("expected 'key = value'", line=lineno)
        key = ALIASES.get(key, key)
        if key not in _PARSERS:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in out:
            raise ConfigError(f"duplicate key (first set on line {out[key][1]})", key=key, line=lineno)
        out[key] = (value, lineno)
    return out


def parse_values(raw: Mapping[str, tuple[str, int | None]]) -> dict:
    """Typed values for every raw entry; raises ConfigError naming key and line."""
    values = {}
    for key, (text, line) in raw.items():
        try:
            values[key] = _PARSERS[key](text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value {text!r}: {exc}", key=key, line=line) from None
    return values


def _detector(values: dict, name: str, base: DetectorModel, lines: Mapping) -> DetectorModel:
    kw = {f: getattr(base, f) for f in _DETECTOR_FIELDS}
    if name in values:
        kw["number_resolving"] = values[name]
    for f in _DETECTOR_FIELDS:
        if f"{name}.{f}" in values:
            kw[f] = values[f"{name}.{f}"]
    try:
        return DetectorModel(**kw)
    except ValueError as exc:
        key = next((k for k in lines if k.startswith(name)), name)
        raise ConfigError(str(exc), key=key, line=lines.get(key)) from None


def build_spec(values: dict, lines: Mapping[str, int | None] | None = None, base: ExperimentSpec | None = None) -> ExperimentSpec:
    lines = lines or {}
    base = base or ExperimentSpec()
    cfg_fields = {f.name for f in fields(ProtocolConfig)}
    kw = {k: v for k, v in values.items() if k in cfg_fields}
    kw["prep_detector"] = _detector(values, "prep_detector", base.config.prep_detector, lines)
    kw["bell_detector"] = _detector(values, "bell_detector", base.config.bell_detector, lines)
    config = replace(base.config, **kw)
    return ExperimentSpec(
        config=config,
        mode=values.get("mode", base.mode),
        output_dir=values.get("out", base.output_dir),
        report_formats=values.get("format", base.report_formats),
    )


def load_spec(path: str | Path) -> ExperimentSpec:
    raw = read_lines(Path(path).read_text(encoding="utf-8"))
    values = parse_values(raw)
    return build_spec(values, {k: line for k, (_, line) in raw.items()})


def diagnose(spec: ExperimentSpec, lines: Mapping[str, int | None] | None = None) -> list[Diagnostic]:
    lines = lines or {}
    ignored = {"trials", "seed"} if spec.mode == "exact" else set()
    out = [
        Diagnostic(k, msg, "error", lines.get(k))
        for k, msg in spec.config.problems()
        if k not in ignored
    ]
    if spec.mode not in MODES:
        out.append(Diagnostic("mode", f"must be one of {', '.join(MODES)}", "error", lines.get("mode")))
    return out


def validate_mapping(raw: Mapping[str, tuple[str, int | None]]) -> list[Diagnostic]:
    try:
        values = parse_values(raw)
        spec = build_spec(values, {k: line for k, (_, line) in raw.items()})
    except ConfigError as exc:
        return [Diagnostic(exc.key, str(exc), "error", exc.line)]
    return diagnose(spec, {k: line for k, (_, line) in raw.items()})


def validate_config(path: str | Path) -> list[Diagnostic]:
    """Diagnostics for a config file; an empty list means it is runnable."""
    try:
        raw = read_lines(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        return [Diagnostic(None, f"cannot read config: {exc}")]
    except ConfigError as exc:
        return [Diagnostic(exc.key, str(exc), "error", exc.line)]
    return validate_mapping(raw)


def _fmt_complex(z: complex) -> str:
    return f"{z.real!r}{z.imag:+}j"


def config_echo(config: ProtocolConfig) -> dict[str, str]:
    """Config as ``key -> value text``, re-readable by :func:`validate_mapping`."""
    out = {
        "p": repr(config.p),
        "phi_A": repr(config.phi_A),
        "phi_B": repr(config.phi_B),
        "c1": repr(config.c1),
        "c2": repr(config.c2),
        "alpha": _fmt_complex(complex(config.alpha)),
        "beta": _fmt_complex(complex(config.beta)),
    }
    for name in ("prep_detector", "bell_detector"):
        det = getattr(config, name)
        out[f"{name}.number_resolving"] = "true" if det.number_resolving else "false"
        out[f"{name}.efficiency"] = repr(det.efficiency)
        out[f"{name}.dark_prob"] = repr(det.dark_prob)
    out.update(
        eta_retrieval=repr(config.eta_retrieval),
        eta_storage=repr(config.eta_storage),
        max_prep_attempts=str(config.max_prep_attempts),
        trials=str(config.trials),
        seed=str(config.seed),
        memory=config.memory,
    )
    return out
