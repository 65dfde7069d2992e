"""Check reports, experiment reports and versioned CSV tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import numbers
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

CSV_SCHEMAS = {
    "rates": (1, ["t", "xi_implicit", "xi_closed_form", "xi_hw", "case", "params_hash"]),
    "simulate": (1, ["t", "var_hat", "se", "n", "h", "seed", "system_hash"]),
    "samples": (1, None),
    "vector": (1, ["index", "value"]),
}


NOISE_BAND = 4.0  # standard errors of a difference counted as noise


class SchemaError(ValueError):
    """Raised when a CSV table carries an unknown or mismatching schema."""


@dataclass
class CheckReport:
    """Outcome of one numerical check.

    ``measured`` is compared against ``threshold``; ``details`` carries the
    sampled range, worst points and anything needed to reproduce a failure.
    """

    name: str
    passed: bool
    measured: float
    threshold: float
    provenance: str = "measured"
    details: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.passed)

    def to_dict(self) -> dict:
        return {
            "check": self.name,
            "pass": bool(self.passed),
            "measured": _jsonable(self.measured),
            "tolerance": _jsonable(self.threshold),
            "provenance": self.provenance,
            "details": _jsonable(self.details),
        }

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured={self.measured:.6g} threshold={self.threshold:.6g}"


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, (int, str, bool)) or obj is None:
        return obj
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return repr(obj)


def stable_hash(obj: Any, length: int = 12) -> str:
    """Short sha256 digest of the canonical JSON form of ``obj``."""
    text = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:length]


def write_csv(path: Path | str | None, kind: str, rows: Iterable[Sequence], columns: Sequence[str] | None = None) -> str:
    """Write a versioned table; returns the text. ``path=None`` only renders."""
    version, fixed = CSV_SCHEMAS[kind]
    cols = list(fixed if fixed is not None else columns)
    buf = io.StringIO()
    buf.write(f"# schema: {kind}/{version}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, str)):
        return str(v)
    if isinstance(v, numbers.Integral):
        return str(int(v))
    if isinstance(v, numbers.Real):
        return repr(float(v))
    return str(v)


def read_csv(source: Path | str, kind: str) -> list[dict]:
    """Read a table written by :func:`write_csv`, rejecting unknown schemas."""
    text = Path(source).read_text() if not str(source).startswith("# schema") else str(source)
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema:"):
        raise SchemaError("missing schema line")
    tag = lines[0].split(":", 1)[1].strip()
    name, _, ver = tag.partition("/")
    if name not in CSV_SCHEMAS:
        raise SchemaError(f"unknown table kind {name!r}")
    if name != kind:
        raise SchemaError(f"expected {kind!r} table, found {name!r}")
    if not ver.isdigit() or int(ver) != CSV_SCHEMAS[name][0]:
        raise SchemaError(f"unsupported schema version {tag!r}")
    reader = csv.DictReader(lines[1:])
    return list(reader)


@dataclass
class ResultEntry:
    name: str
    value: Any
    tolerance: float | None
    provenance: str  # "measured" | "theory"
    passed: bool | None = None
    stochastic: bool = False
    refinement_sensitive: bool = False
    se: float | None = None  # standard error of a stochastic value


@dataclass
class ExperimentReport:
    kind: str
    config_hash: str
    version: str
    results: list[ResultEntry] = field(default_factory=list)
    started: str = ""
    finished: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.results)

    def add(self, name, value, tolerance=None, provenance="measured", passed=None, **flags) -> None:
        self.results.append(ResultEntry(name, value, tolerance, provenance, passed, **flags))

    def add_check(self, rep: CheckReport, **flags) -> None:
        self.add(rep.name, rep.measured, rep.threshold, rep.provenance, bool(rep.passed), **flags)

    def summary(self) -> dict:
        n_fail = sum(r.passed is False for r in self.results)
        return {"checks": sum(r.passed is not None for r in self.results), "failed": n_fail, "pass": n_fail == 0}

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "kind": self.kind,
                "config_hash": self.config_hash,
                "version": self.version,
                "started": self.started,
                "finished": self.finished,
                "meta": self.meta,
                "results": [asdict(r) for r in self.results],
                "summary": self.summary(),
            }
        )

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentReport":
        rep = cls(
            kind=data["kind"],
            config_hash=data["config_hash"],
            version=data["version"],
            started=data.get("started", ""),
            finished=data.get("finished", ""),
            meta=data.get("meta", {}),
        )
        for r in data.get("results", []):
            rep.results.append(ResultEntry(**r))
        return rep

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: Path | str) -> "ExperimentReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Drift:
    name: str
    a: Any
    b: Any
    tolerance: float | None
    status: str  # "drift" | "within-noise" | "expected-drift" | "missing"


def compare(report_a: ExperimentReport, report_b: ExperimentReport) -> list[Drift]:
    """List result entries that differ between two reports of the same kind.

    Stochastic entries differing by less than their tolerance, or by less than
    NOISE_BAND standard errors of the difference when both carry an ``se``,
    are reported as ``within-noise``; refinement-sensitive entries are ``expected-drift`` when
    the two reports were produced at different resolutions.
    """
    if report_a.kind != report_b.kind:
        raise ValueError(f"cannot compare {report_a.kind!r} with {report_b.kind!r}")
    res_changed = report_a.meta.get("resolution") != report_b.meta.get("resolution")
    b_by_name = {r.name: r for r in report_b.results}
    out: list[Drift] = []
    for ra in report_a.results:
        rb = b_by_name.pop(ra.name, None)
        if rb is None:
            out.append(Drift(ra.name, ra.value, None, ra.tolerance, "missing"))
            continue
        if _equal(ra.value, rb.value):
            continue
        tol = ra.tolerance if ra.tolerance is not None else rb.tolerance
        if ra.stochastic and ra.se is not None and rb.se is not None:
            tol = NOISE_BAND * math.hypot(ra.se, rb.se)
        if ra.refinement_sensitive and res_changed:
            status = "expected-drift"
        elif ra.stochastic and tol is not None and _absdiff(ra.value, rb.value) <= tol:
            status = "within-noise"
        else:
            status = "drift"
        out.append(Drift(ra.name, ra.value, rb.value, tol, status))
    for rb in b_by_name.values():
        out.append(Drift(rb.name, None, rb.value, rb.tolerance, "missing"))
    return out


def _equal(a, b) -> bool:
    return json.dumps(_jsonable(a), sort_keys=True) == json.dumps(_jsonable(b), sort_keys=True)


def _absdiff(a, b) -> float:
    try:
        return abs(float(a) - float(b))
    except (TypeError, ValueError):
        return math.inf
