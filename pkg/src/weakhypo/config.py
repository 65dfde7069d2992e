"""Experiment configuration: strict JSON documents, one kind per experiment.

Unknown fields are rejected at every level except inside potential specs and
rate-case parameters, which are validated by the owning module.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

KINDS = ("rates", "simulate", "operator-lab", "check-assumptions")
ENV_PREFIX = "WEAKHYPO_"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _strict(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    extra = sorted(set(data) - names)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {extra}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def _potential(spec: Any, where: str) -> dict:
    from .potentials import make_potential

    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigError(f"{where}: potential needs a 'family'")
    try:
        make_potential(spec)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"{where}: {e}") from None
    return dict(spec)


def _positive(v, name, integer=False):
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok or v <= 0:
        raise ConfigError(f"{name} must be a positive {'integer' if integer else 'number'}")


@dataclass
class RateCase:
    case: str
    params: dict = field(default_factory=dict)


@dataclass
class RatesSection:
    cases: list = field(default_factory=lambda: [{"case": "A1", "params": {"delta": 1, "eps": 1}}])
    t_min: float = 1e2
    t_max: float = 1e8
    points: int = 40
    c1: float = 1.0
    c2: float = 1.0
    exponent_tol: float = 0.1

    def validate(self):
        from .rates import case_rates

        self.cases = [c if isinstance(c, RateCase) else _strict(RateCase, c, "rates.cases[]") for c in self.cases]
        if not self.cases:
            raise ConfigError("rates.cases is empty")
        for c in self.cases:
            if c.case not in ("A1", "A2", "A3", "B1", "B2", "B3", "C1", "C2"):
                raise ConfigError(f"unknown case {c.case!r}")
            try:
                case_rates(c.case, c.params)
            except (ValueError, KeyError, TypeError) as e:
                raise ConfigError(f"case {c.case}: {e}") from None
        _positive(self.t_min, "t_min")
        _positive(self.points, "points", integer=True)
        if not self.t_max > self.t_min:
            raise ConfigError("t_max must exceed t_min")
        for k in ("c1", "c2", "exponent_tol"):
            _positive(getattr(self, k), k)


@dataclass
class Stationarity:
    moments: list = field(default_factory=lambda: ["x2", "y2", "tanh_x"])
    T: float = 10.0
    n: int | None = None


@dataclass
class SimulateSection:
    v1: dict = field(default_factory=lambda: {"family": "gaussian"})
    v2: dict = field(default_factory=lambda: {"family": "gaussian"})
    Q: Any = 1.0
    n: int = 100000
    h: float = 1e-3
    t_max: float = 20.0
    dt: float = 0.25
    observables: list = field(default_factory=lambda: ["tanh_x", "tanh_xy", "step_x"])
    expect: str | None = None
    stationarity: Any = None
    dump_samples: int = 0

    def validate(self):
        self.v1, self.v2 = _potential(self.v1, "simulate.v1"), _potential(self.v2, "simulate.v2")
        _positive(self.n, "n", integer=True)
        if self.n < 1000:
            raise ConfigError("n must be at least 1000")
        for k in ("h", "t_max", "dt"):
            _positive(getattr(self, k), k)
        from .sampling import standard_observables

        known = {o.tag for o in standard_observables()}
        if not self.observables or not set(self.observables) <= known:
            raise ConfigError(f"observables must be a non-empty subset of {sorted(known)}")
        if self.expect not in (None, "exponential", "polynomial"):
            raise ConfigError("expect must be 'exponential' or 'polynomial'")
        if self.stationarity is not None and not isinstance(self.stationarity, Stationarity):
            self.stationarity = _strict(Stationarity, self.stationarity, "simulate.stationarity")
        if not isinstance(self.dump_samples, int) or self.dump_samples < 0:
            raise ConfigError("dump_samples must be a non-negative integer")


@dataclass
class LabSystem:
    v1: dict
    v2: dict = field(default_factory=lambda: {"family": "gaussian"})
    Q: float = 1.0
    name: str | None = None


@dataclass
class LabSection:
    systems: list = field(default_factory=lambda: [{"v1": {"family": "gaussian"}}])
    n: int = 64
    refine: int | None = None
    trials: int = 1000
    subordination_pairs: int = 1000
    decay_initial: int = 0
    identity_tol: float = 0.05
    refinement_factor: float = 1.8

    def validate(self):
        self.systems = [s if isinstance(s, LabSystem) else _strict(LabSystem, s, "operator-lab.systems[]")
                        for s in self.systems]
        if not self.systems:
            raise ConfigError("operator-lab.systems is empty")
        for s in self.systems:
            s.v1, s.v2 = _potential(s.v1, "v1"), _potential(s.v2, "v2")
        _positive(self.n, "n", integer=True)
        if self.refine is not None:
            _positive(self.refine, "refine", integer=True)
        for k in ("trials", "subordination_pairs"):
            _positive(getattr(self, k), k, integer=True)
        if not isinstance(self.decay_initial, int) or self.decay_initial < 0:
            raise ConfigError("decay_initial must be a non-negative integer")


@dataclass
class AssumptionSection:
    v1: dict = field(default_factory=lambda: {"family": "gaussian"})
    v2: dict = field(default_factory=lambda: {"family": "gaussian"})
    Q: Any = 1.0
    tau: float = 1.0
    M: float = 10.0
    samples: int = 4096
    radius: float = 100.0

    def validate(self):
        self.v1, self.v2 = _potential(self.v1, "v1"), _potential(self.v2, "v2")
        for k in ("tau", "M", "radius"):
            _positive(getattr(self, k), k)
        _positive(self.samples, "samples", integer=True)


SECTIONS = {"rates": RatesSection, "simulate": SimulateSection, "operator-lab": LabSection,
            "check-assumptions": AssumptionSection}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    threads: int = 1
    out: str = "out"
    params: Any = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {list(KINDS)}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        _positive(self.threads, "threads", integer=True)
        sec = SECTIONS[self.kind]
        if self.params is None:
            self.params = sec()
        elif not isinstance(self.params, sec):
            self.params = _strict(sec, self.params, self.kind)
        self.params.validate()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _strict(cls, data, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hashable(self) -> dict:
        """The fields that determine results (output location and thread
        count excluded)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("threads")
        return d
