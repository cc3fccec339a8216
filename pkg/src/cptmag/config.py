"""Scenario configuration: INI-style key-value text with a canonical form."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidConfigurationError
from .estimator import DEFAULT_POINTS
from .physics import FieldProfile, PhysicsParams
from .policy import PhaseSearchConfig, Schedule

SCENARIOS = ("coherence", "frequentist", "bayesian", "track", "scaling", "compare")
TRACK_STEP = 20.0  # nT
TRACK_INTERVAL = 18.031  # s, one full Bayesian estimate at the default schedule


@dataclass(frozen=True)
class EstimatorSettings:
    n_points: int = DEFAULT_POINTS
    prior_center: float = 0.0  # nT
    # When positive, each run draws a static field uniformly within
    # ±field_spread·B_max of prior_center instead of using [field].
    field_spread: float = 0.0

    def __post_init__(self):
        if self.n_points < 16:
            raise InvalidConfigurationError("n_points must be at least 16")
        if not 0.0 <= self.field_spread < 0.5:
            raise InvalidConfigurationError("field_spread must lie in [0, 0.5)")


@dataclass(frozen=True)
class LockSettings:
    T_R: float = 7.1e-3
    loop_gain: float = 1.0
    measurements: int = 141  # f_p determinations per run, ≈ 2 s of interrogation at T_R = 7.1 ms

    def __post_init__(self):
        if not self.T_R > 0:
            raise InvalidConfigurationError("frequentist T_R must be positive")
        if not 0 < self.loop_gain <= 2:
            raise InvalidConfigurationError("loop_gain must lie in (0, 2]")
        if self.measurements < 1:
            raise InvalidConfigurationError("measurements must be at least 1")


@dataclass(frozen=True)
class CoherenceSettings:
    t_min: float = 0.1e-3
    t_max: float = 12e-3
    n_samples: int = 240
    beat_hz: float = 300.0  # Δf − f_B of the swept fringe
    shot_noise: bool = True

    def __post_init__(self):
        if not 0 <= self.t_min < self.t_max:
            raise InvalidConfigurationError("need 0 <= t_min < t_max")
        if self.n_samples < 20:
            raise InvalidConfigurationError("n_samples must be at least 20")


@dataclass(frozen=True)
class CompareSettings:
    t1_values: tuple[float, ...] = (0.245e-3, 0.49e-3, 0.98e-3)
    sweep_points: int = 40

    def __post_init__(self):
        object.__setattr__(self, "t1_values", tuple(float(t) for t in self.t1_values))
        if not self.t1_values or min(self.t1_values) <= 0:
            raise InvalidConfigurationError("t1_values must be positive")
        if self.sweep_points < 2:
            raise InvalidConfigurationError("sweep_points must be at least 2")


def track_profile(base: float = 30.0) -> FieldProfile:
    """+20 nT, +20 nT, then −40 nT back to ``base``, one estimate apart."""
    return FieldProfile((
        (0.0, base),
        (TRACK_INTERVAL, base + TRACK_STEP),
        (2 * TRACK_INTERVAL, base + 2 * TRACK_STEP),
        (3 * TRACK_INTERVAL, base),
    ))


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "bayesian"
    seed: int = 0
    runs: int = 1
    physics: PhysicsParams = dataclasses.field(default_factory=PhysicsParams)
    schedule: Schedule = dataclasses.field(default_factory=Schedule)
    phase_search: PhaseSearchConfig = dataclasses.field(default_factory=PhaseSearchConfig)
    estimator: EstimatorSettings = dataclasses.field(default_factory=EstimatorSettings)
    field: FieldProfile = dataclasses.field(default_factory=lambda: FieldProfile.static(30.0))
    frequentist: LockSettings = dataclasses.field(default_factory=LockSettings)
    coherence: CoherenceSettings = dataclasses.field(default_factory=CoherenceSettings)
    compare: CompareSettings = dataclasses.field(default_factory=CompareSettings)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidConfigurationError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.runs < 1:
            raise InvalidConfigurationError("runs must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfigurationError("seed must be a 64-bit unsigned integer")

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


# Section name -> ScenarioConfig attribute holding a flat dataclass.
_SECTIONS = ("physics", "schedule", "phase_search", "estimator", "frequentist", "coherence", "compare")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse_value(text: str, like, key: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InvalidConfigurationError(f"bad value for {key}: {text!r}") from None
    return text


def _format_segments(profile: FieldProfile) -> str:
    return ", ".join(f"{t!r}:{b!r}" for t, b in profile.segments)


def _parse_segments(text: str) -> FieldProfile:
    segs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            t, b = part.split(":")
            segs.append((float(t), float(b)))
        except ValueError:
            raise InvalidConfigurationError(f"bad field segment {part!r}; expected start_s:B_nT") from None
    return FieldProfile(tuple(segs))


def parse_config(text: str, scenario: str | None = None) -> ScenarioConfig:
    """Build a ScenarioConfig from INI text; missing keys take their defaults.

    ``scenario`` overrides the [scenario] name given in the text.

    Without a [field] section the track scenario uses the stepped tracking
    profile and every other scenario a static 30 nT field.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfigurationError(f"unreadable config: {exc}".replace("\n", " ")) from None
    known = {"scenario", "field", *_SECTIONS}
    extra = set(cp.sections()) - known
    if extra:
        raise InvalidConfigurationError(f"unknown config sections: {sorted(extra)}")

    base = ScenarioConfig()
    top = dict(cp["scenario"]) if cp.has_section("scenario") else {}
    unknown = set(top) - {"name", "seed", "runs"}
    if unknown:
        raise InvalidConfigurationError(f"unknown keys in [scenario]: {sorted(unknown)}")
    scenario = scenario or top.get("name", base.scenario).strip()
    seed = _parse_value(top.get("seed", str(base.seed)), 0, "scenario.seed")
    runs = _parse_value(top.get("runs", str(base.runs)), 0, "scenario.runs")

    parts = {}
    for section in _SECTIONS:
        default = getattr(base, section)
        values = {}
        if cp.has_section(section):
            names = {f.name: f for f in fields(default)}
            for key, raw in cp[section].items():
                if key not in names:
                    raise InvalidConfigurationError(f"unknown key {section}.{key}")
                values[key] = _parse_value(raw, getattr(default, key), f"{section}.{key}")
        try:
            parts[section] = dataclasses.replace(default, **values)
        except TypeError as exc:
            raise InvalidConfigurationError(str(exc)) from None

    if cp.has_section("field"):
        sec = dict(cp["field"])
        if set(sec) - {"segments"}:
            raise InvalidConfigurationError("[field] accepts only 'segments'")
        profile = _parse_segments(sec.get("segments", ""))
    elif scenario == "track":
        profile = track_profile()
    else:
        profile = base.field
    return ScenarioConfig(scenario=scenario, seed=seed, runs=runs, field=profile, **parts)


def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical text: every section and key, fixed order, floats by repr."""
    lines = ["[scenario]", f"name = {cfg.scenario}", f"seed = {cfg.seed}", f"runs = {cfg.runs}", ""]
    lines += ["[field]", f"segments = {_format_segments(cfg.field)}", ""]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        lines += [f"{f.name} = {_format(getattr(obj, f.name))}" for f in fields(obj)]
        lines.append("")
    return "\n".join(lines)


def config_as_dict(cfg: ScenarioConfig) -> dict:
    out = {"scenario": cfg.scenario, "seed": cfg.seed, "runs": cfg.runs,
           "field": [list(s) for s in cfg.field.segments]}
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        out[section] = {f.name: (list(v) if isinstance(v := getattr(obj, f.name), tuple) else v)
                        for f in fields(obj)}
    return out


def load_config(path: str | Path, scenario: str | None = None) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, scenario)
