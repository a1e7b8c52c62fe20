"""Run configuration: flat dotted keys in a TOML file, validated up front."""
import math
from dataclasses import dataclass

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError, InvalidParameterError
from .scenarios import KINDS, BoxParams, Geometry, build

# key: (type, default); a None default means "derived at run time"
SCHEMA = {
    "scenario.kind": (str, "no_device"),
    "geometry.theta": (float, 0.15),
    "geometry.separation": (float, 20.0),
    "geometry.speed": (float, 500.0),
    "geometry.sigma0": (float, 1.0),
    "geometry.mass": (float, 1.0),
    "geometry.upper_is_d1": (bool, True),
    "device.alpha_re": (float, 0.5),
    "device.alpha_im": (float, 0.0),
    "device.sigma": (float, 1.0),
    "device.n0": (int, 1),
    "device.n1": (int, 2),
    "device.L": (float, math.pi),
    "device.mass": (float, 1.0),
    "device.dynamic_phase": (bool, False),
    "pointer.d": (float, 16.0),
    "pointer.sigma": (float, 1.0),
    "ionization.distance": (float, 20.0),
    "ionization.sigma": (float, 1.0),
    "ensemble.n": (int, 1000),
    "ensemble.seed": (int, 0),
    "ensemble.sampler": (str, "auto"),
    "integrator.dt": (float, 0.0),          # 0: default rule
    "integrator.t_end": (float, 0.0),       # 0: symmetric exit time
    "integrator.record_every": (int, 50),
    "integrator.refine_tol": (float, 1e-7),
    "output.dir": (str, "out"),
    "output.grid_nx": (int, 121),
    "output.grid_nz": (int, 121),
    "output.time": (float, -1.0),           # < 0: crossing time
    "output.rb_slice": (float, -1.0),       # < 0: per-scenario default
    "output.figures": (bool, True),
    "output.max_paths": (int, 60),
}

SWEEPABLE = {k for k in SCHEMA if k.startswith(("geometry.", "pointer.", "ionization."))} | {
    "device.alpha_re", "device.alpha_im", "device.L", "device.sigma"}
SWEEPABLE.discard("geometry.upper_is_d1")


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, val):
    typ = SCHEMA[key][0]
    if typ is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{key}: expected true/false, got {val!r}")
        return val
    if typ is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{key}: expected an integer, got {val!r}")
        return val
    if typ is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {val!r}")
        if not math.isfinite(val):
            raise ConfigError(f"{key}: must be finite")
        return float(val)
    if not isinstance(val, str):
        raise ConfigError(f"{key}: expected a string, got {val!r}")
    return val


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **kv):
        v = dict(self.values)
        for k, x in kv.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            v[key] = _coerce(key, x)
        return validate(v)

    def nested(self):
        out = {}
        for k, v in self.values.items():
            sec, name = k.split(".", 1)
            out.setdefault(sec, {})[name] = v
        return out

    def geometry(self):
        v = self.values
        return Geometry(theta=v["geometry.theta"], separation=v["geometry.separation"],
                        speed=v["geometry.speed"], sigma0=v["geometry.sigma0"],
                        mass=v["geometry.mass"], upper_is_d1=v["geometry.upper_is_d1"])

    def scenario(self):
        v = self.values
        kind = v["scenario.kind"]
        box = BoxParams(v["device.n0"], v["device.n1"], v["device.L"], v["device.mass"],
                        v["device.dynamic_phase"])
        return build(kind, self.geometry(), box=box,
                     alpha=complex(v["device.alpha_re"], v["device.alpha_im"]),
                     sigma_b=v["device.sigma"], d=v["pointer.d"], sigma=v["pointer.sigma"]
                     if kind == "detector_d3" else v["ionization.sigma"],
                     distance=v["ionization.distance"])


def validate(flat):
    for k in flat:
        if k not in SCHEMA:
            raise ConfigError(f"unknown key {k!r}")
    v = {k: d for k, (_, d) in SCHEMA.items()}
    for k, x in flat.items():
        v[k] = _coerce(k, x)
    if v["scenario.kind"] not in KINDS:
        raise ConfigError(f"scenario.kind: unknown kind {v['scenario.kind']!r}")
    if v["ensemble.sampler"] not in ("auto", "branch", "rejection"):
        raise ConfigError(f"ensemble.sampler: unknown sampler {v['ensemble.sampler']!r}")
    for k in ("ensemble.n", "integrator.record_every", "output.grid_nx", "output.grid_nz"):
        if v[k] < 1:
            raise ConfigError(f"{k}: must be >= 1")
    if v["ensemble.seed"] < 0:
        raise ConfigError("ensemble.seed: must be >= 0")
    for k in ("integrator.dt", "integrator.t_end", "integrator.refine_tol", "output.max_paths"):
        if v[k] < 0:
            raise ConfigError(f"{k}: must be >= 0")
    cfg = RunConfig(v)
    try:
        cfg.scenario()
    except InvalidParameterError as e:
        raise ConfigError(f"invalid scenario parameters: {e}") from e
    return cfg


def loads(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse config: {e}") from e
    # an emitted report carries its resolved config under [config]
    if "config" in data and "report" in data:
        data = data["config"]
    return validate(_flatten(data))


def load(path):
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"{path}: not UTF-8 text") from e
    return loads(text)


def default():
    return validate({})
