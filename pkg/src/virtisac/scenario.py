"""Scenario configuration, experiment dispatch and result emission."""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import __version__
from . import envsynth as env
from .experiments import RUNNERS, Metric, square_room
from .netsynth import SCHEDULE_KINDS, DelayVelocityMap, RangeProfile
from .otfs import PlanError, RangeVelocityMap


class ConfigError(ValueError):
    """Invalid scenario configuration; message carries the offending field."""


# Allowed keys per section, with the expected scalar type (None = nested/list).
SCHEMA: dict[str, dict[str, Any]] = {
    "scene": {"targets": list},
    "schedule": {"kind": str, "n": int, "f_min": float, "f_max": float, "pri": float,
                 "hop_bandwidth": float, "subcarriers": int},
    "map": {"path": str, "segments": list, "sensor": list},
    "sampler": {"nyquist_rate": float, "L": int},
    "frame": {"M": int, "N": int, "constellation": str, "carrier": float, "n_pilots": int,
              "guard_doppler": int, "guard_delay": int, "delay_offset": int},
    "noise": {"snr_db": float, "sigma_range": float},
    "output": {"path": str, "format": str},
}
TOP_LEVEL = {"experiment": str, "seed": int, "mc_trials": int, **{k: dict for k in SCHEMA}}
TARGET_KEYS = {"position", "velocity", "amplitude"}
SEGMENT_KEYS = {"a", "b", "loss_db", "blocking"}
FORMATS = ("csv", "json-lines")

_A2_TAPS = [
    {"position": [13 * 299_792_458.0 / 4e8, 0.0], "amplitude": [1.0, 0.0]},
    {"position": [14 * 299_792_458.0 / 4e8, 0.0],
     "amplitude": [0.8 * math.cos(math.pi / 3), 0.8 * math.sin(math.pi / 3)]},
]

PRESETS: dict[str, dict] = {
    "A1": {
        "mc_trials": 100,
        "scene": {"targets": [{"position": [10.0, 0.0]}, {"position": [10.8, 0.0]}]},
        "schedule": {"kind": "linear", "n": 16, "f_min": 3.0e9, "f_max": 3.1875e9, "pri": 1.0e-4,
                     "hop_bandwidth": 12.5e6, "subcarriers": 16},
        "noise": {"snr_db": 20.0},
    },
    "A2": {
        "mc_trials": 200,
        "scene": {"targets": _A2_TAPS},
        "sampler": {"nyquist_rate": 2.0e8, "L": 16},
        "frame": {"M": 64, "N": 16, "constellation": "qpsk", "carrier": 5.0e9, "n_pilots": 4,
                  "guard_doppler": 0, "guard_delay": 3, "delay_offset": 12},
        "noise": {"snr_db": 20.0},
    },
    "A3": {
        "schedule": {"kind": "balanced", "n": 16, "f_min": 3.0e9, "f_max": 3.1875e9, "pri": 1.0e-4},
        "noise": {"snr_db": 20.0},
    },
    "A4": {
        "schedule": {"kind": "balanced", "n": 16, "f_min": 3.0e9, "f_max": 3.1875e9, "pri": 1.0e-4},
        "noise": {"snr_db": 20.0},
    },
    "A5": {
        "mc_trials": 500,
        "scene": {"targets": [{"position": [6.5, 2.5]}]},
        "map": {"sensor": [1.0, 1.0]},
        "noise": {"sigma_range": 0.01},
    },
    "A6": {},
    "A7": {},
    "A8": {"frame": {"M": 32, "N": 16, "constellation": "qpsk"}},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _where(marks: dict, key: str) -> str:
    line = marks.get(key)
    return f" (line {line})" if line else ""


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based source lines, for diagnostics."""
    marks: dict[str, int] = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return marks

    def walk(n, prefix):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                path = f"{prefix}{k.value}"
                marks[path] = k.start_mark.line + 1
                walk(v, path + ".")
    walk(node, "")
    return marks


def _coerce(value, typ, where):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, typ):
        raise ConfigError(f"{where}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def _vec2(value, where):
    if not (isinstance(value, list) and len(value) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ConfigError(f"{where}: expected [x, y]")
    return [float(v) for v in value]


@dataclass
class ScenarioConfig:
    experiment: str
    seed: int = 0
    mc_trials: int = 1
    scene: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    map: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    frame: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    # -- loading ---------------------------------------------------------

    @classmethod
    def from_yaml(cls, text: str, base_dir: Path = Path(".")) -> "ScenarioConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"YAML parse error: {exc}") from None
        return cls.from_dict(raw, _key_lines(text), base_dir)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_yaml(text, path.parent)

    @classmethod
    def from_dict(cls, raw, marks: Optional[dict] = None, base_dir: Path = Path(".")) -> "ScenarioConfig":
        marks = marks or {}
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        for key in raw:
            if key not in TOP_LEVEL:
                raise ConfigError(f"unknown key '{key}'{_where(marks, str(key))}")
        if "experiment" not in raw:
            raise ConfigError("missing required key 'experiment'")
        exp = raw["experiment"]
        if exp not in RUNNERS:
            raise ConfigError(f"experiment: unknown experiment {exp!r}{_where(marks, 'experiment')}; "
                              f"choose from {', '.join(RUNNERS)}")
        merged = _merge({"seed": 0, "mc_trials": 1, **PRESETS[exp]}, raw)
        for key, typ in TOP_LEVEL.items():
            if key in merged:
                merged[key] = _coerce(merged[key], typ, f"{key}{_where(marks, key)}")
        for section, allowed in SCHEMA.items():
            body = merged.get(section) or {}
            for key, value in body.items():
                where = f"{section}.{key}{_where(marks, f'{section}.{key}')}"
                if key not in allowed:
                    raise ConfigError(f"unknown key '{section}.{key}'{_where(marks, f'{section}.{key}')}")
                body[key] = _coerce(value, allowed[key], where)
            merged[section] = body
        cfg = cls(**merged, base_dir=base_dir)
        cfg._validate(marks)
        return cfg

    # -- validation ------------------------------------------------------

    def _validate(self, marks: dict) -> None:
        def fail(path, msg):
            raise ConfigError(f"{path}{_where(marks, path)}: {msg}")

        if self.mc_trials < 1:
            fail("mc_trials", "must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            fail("seed", "must be an unsigned 64-bit integer")
        for i, t in enumerate(self.scene.get("targets", [])):
            where = f"scene.targets[{i}]"
            if not isinstance(t, dict):
                fail("scene.targets", f"entry {i} must be a mapping")
            extra = set(t) - TARGET_KEYS
            if extra:
                fail("scene.targets", f"unknown key '{sorted(extra)[0]}' in entry {i}")
            if "position" not in t:
                fail("scene.targets", f"entry {i} needs a position")
            t["position"] = _vec2(t["position"], where + ".position")
            if "velocity" in t:
                t["velocity"] = _vec2(t["velocity"], where + ".velocity")
            if "amplitude" in t:
                amp = t["amplitude"]
                if isinstance(amp, list):
                    re, im = _vec2(amp, where + ".amplitude")
                    amp = complex(re, im)
                elif isinstance(amp, (int, float)) and not isinstance(amp, bool):
                    amp = complex(amp)
                else:
                    fail("scene.targets", f"entry {i}: amplitude must be a number or [re, im]")
                if abs(amp) == 0:
                    fail("scene.targets", f"entry {i}: amplitude must be nonzero")
                t["amplitude"] = amp
        s = self.schedule
        if s:
            if "kind" in s and s["kind"] not in SCHEDULE_KINDS:
                fail("schedule.kind", f"must be one of {', '.join(SCHEDULE_KINDS)}")
            if s.get("n", 1) < 1:
                fail("schedule.n", "must be >= 1")
            for key in ("f_min", "f_max", "pri", "hop_bandwidth"):
                if key in s and not s[key] > 0:
                    fail(f"schedule.{key}", "must be > 0")
            if s.get("f_max", math.inf) < s.get("f_min", 0):
                fail("schedule.f_max", "must be >= f_min")
            if s.get("subcarriers", 1) < 1:
                fail("schedule.subcarriers", "must be >= 1")
        if self.sampler.get("L", 1) < 1:
            fail("sampler.L", "must be >= 1")
        if "nyquist_rate" in self.sampler and not self.sampler["nyquist_rate"] > 0:
            fail("sampler.nyquist_rate", "must be > 0")
        if self.frame.get("constellation", "qpsk") != "qpsk":
            fail("frame.constellation", "only 'qpsk' is supported")
        for key in ("M", "N"):
            if self.frame.get(key, 1) < 1:
                fail(f"frame.{key}", "must be >= 1")
        if "format" in self.output and self.output["format"] not in FORMATS:
            fail("output.format", f"must be one of {', '.join(FORMATS)}")
        if "sigma_range" in self.noise and not self.noise["sigma_range"] > 0:
            fail("noise.sigma_range", "must be > 0")
        if "segments" in self.map and "path" in self.map:
            fail("map", "give either 'path' or 'segments', not both")
        for i, seg in enumerate(self.map.get("segments", [])):
            if not isinstance(seg, dict) or set(seg) - SEGMENT_KEYS or not {"a", "b"} <= set(seg):
                fail("map.segments", f"entry {i} needs keys a, b and optionally loss_db, blocking")
        if "sensor" in self.map:
            self.map["sensor"] = _vec2(self.map["sensor"], "map.sensor")
        self.map_obj  # parse eagerly: referenced files must exist
        if self.experiment == "A5" and "sensor" not in self.map:
            fail("map.sensor", "required for A5")

    # -- derived ---------------------------------------------------------

    @property
    def map_obj(self) -> env.Map2D:
        if "path" in self.map:
            return load_map(self.base_dir / self.map["path"])
        if "segments" in self.map:
            try:
                return env.Map2D([env.Segment(s["a"], s["b"], float(s.get("loss_db", 0.0)),
                                              bool(s.get("blocking", True))) for s in self.map["segments"]])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"map.segments: {exc}") from None
        return square_room()

    def with_overrides(self, seed=None, trials=None, out=None, fmt=None) -> "ScenarioConfig":
        cfg = copy.deepcopy(self)
        if seed is not None:
            cfg.seed = int(seed)
        if trials is not None:
            if trials < 1:
                raise ConfigError("--trials must be >= 1")
            cfg.mc_trials = int(trials)
        if out is not None:
            cfg.output["path"] = str(out)
        if fmt is not None:
            if fmt not in FORMATS:
                raise ConfigError(f"--format must be one of {', '.join(FORMATS)}")
            cfg.output["format"] = fmt
        return cfg

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        out = {"experiment": self.experiment, "seed": self.seed, "mc_trials": self.mc_trials}
        for section in SCHEMA:
            body = copy.deepcopy(getattr(self, section))
            if not body:
                continue
            for t in body.get("targets", []):
                if "amplitude" in t:
                    t["amplitude"] = [t["amplitude"].real, t["amplitude"].imag]
            out[section] = body
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def load_map(path) -> env.Map2D:
    """Read a map file with columns ax,ay,bx,by,loss_db,blocking."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read map file {path}: {exc.strerror}") from None
    reader = csv.DictReader(io.StringIO(text))
    expected = ["ax", "ay", "bx", "by", "loss_db", "blocking"]
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
        raise ConfigError(f"{path}: header must be {','.join(expected)}")
    segs = []
    for lineno, row in enumerate(reader, start=2):
        try:
            vals = {k.strip(): v.strip() for k, v in row.items()}
            blocking = vals["blocking"].lower()
            if blocking not in ("0", "1", "true", "false"):
                raise ValueError(f"blocking must be 0/1/true/false, got {vals['blocking']!r}")
            segs.append(env.Segment([float(vals["ax"]), float(vals["ay"])],
                                    [float(vals["bx"]), float(vals["by"])],
                                    float(vals["loss_db"]), blocking in ("1", "true")))
        except (ValueError, TypeError, AttributeError) as exc:
            raise ConfigError(f"{path} line {lineno}: {exc}") from None
    return env.Map2D(segs)


# --------------------------------------------------------------------------
# running

@dataclass
class RunReport:
    experiment: str
    seed: int
    mc_trials: int
    metrics: list
    artifacts: dict
    wall_time: float = 0.0
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.metrics)


def run_experiment(cfg: ScenarioConfig) -> RunReport:
    runner = RUNNERS[cfg.experiment][0]
    start = time.perf_counter()
    try:
        result = runner(cfg)
    except PlanError as exc:
        raise ConfigError(f"frame: {exc}") from None
    return RunReport(cfg.experiment, cfg.seed, cfg.mc_trials, result.metrics, result.artifacts,
                     time.perf_counter() - start)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def table_of(obj) -> tuple[list, list]:
    """Columns and rows of any emittable object."""
    if isinstance(obj, RunReport):
        cols = ["metric", "value", "tolerance", "pass"]
        rows = [[m.name, m.value, m.tolerance, m.passed] for m in obj.metrics]
        return cols, rows
    if isinstance(obj, RangeProfile):
        return ["axis_value", "magnitude"], [[r, b] for r, b in zip(obj.axis, obj.bins)]
    if isinstance(obj, (DelayVelocityMap, RangeVelocityMap)):
        xs, ys = (obj.delays, obj.velocities) if isinstance(obj, DelayVelocityMap) else (obj.ranges, obj.velocities)
        xo, yo = np.argsort(xs, kind="stable"), np.argsort(ys, kind="stable")
        rows = [[xs[i], ys[j], obj.magnitude[i, j]] for i in xo for j in yo]
        return ["x", "y", "magnitude"], rows
    if isinstance(obj, list) and all(isinstance(r, dict) for r in obj):
        cols = list(obj[0]) if obj else []
        return cols, [[r[c] for c in cols] for r in obj]
    raise TypeError(f"cannot emit {type(obj).__name__}")


def emit(obj, fmt: str = "csv") -> str:
    cols, rows = table_of(obj)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()
    if fmt == "json-lines":
        def jv(v):
            if isinstance(v, (bool, np.bool_)):
                return bool(v)
            if isinstance(v, (int, np.integer)):
                return int(v)
            if isinstance(v, (float, np.floating)):
                return float(v) if math.isfinite(v) else str(v)
            return v
        return "".join(json.dumps({c: jv(v) for c, v in zip(cols, r)}) + "\n" for r in rows)
    raise ValueError(f"unknown format {fmt!r}")


def write_outputs(report: RunReport, out_dir, fmt: str = "csv") -> list[Path]:
    out_dir = Path(out_dir)
    ext = "csv" if fmt == "csv" else "jsonl"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        items = [("report", report)] + sorted(report.artifacts.items())
        for name, obj in items:
            p = out_dir / f"{report.experiment}_{name}.{ext}"
            p.write_text(emit(obj, fmt))
            paths.append(p)
    except OSError as exc:
        raise ConfigError(f"cannot write output to {out_dir}: {exc.strerror}") from None
    return paths


__all__ = ["ConfigError", "ScenarioConfig", "RunReport", "Metric", "run_experiment", "emit",
           "write_outputs", "load_map", "PRESETS", "RUNNERS", "FORMATS"]
