"""Run configuration: an INI document with one section per component.

Example::

    [run]
    seed = 42
    out = out

    [paths]
    grooms = fixture:straight:20:0, fixture:wavy:20:1
    body = fixture:bust

    [material]
    preset = guide_hair
    k_pr = 1000

    [solver]
    method = lbfgs

Groom and body paths may name built-in fixtures (``fixture:...``, see
:func:`resolve_groom`); anything else is a file that must exist.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError
from .neural.train import TrainConfig
from .potentials import MaterialParams
from .solvers import SolveConfig

DEFAULT_SEED = 42
GROOM_FIXTURES = ("straight", "wavy", "hanging", "helix", "bundles")
BODY_FIXTURES = ("bust",)


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(text, item=str):
    parts = [p for p in text.replace(",", " ").split() if p]
    return tuple(item(p) for p in parts)


def _coerce(text, annotation, default):
    """Parse ``text`` for a dataclass field annotated ``annotation``."""
    ann = str(annotation).replace("typing.", "")
    optional = ann.startswith("Optional[")
    if optional:
        ann = ann[len("Optional["):-1]
        if text.strip().lower() in ("", "none"):
            return None
    if ann == "bool":
        return _parse_bool(text)
    if ann == "int":
        return int(text)
    if ann == "float":
        return float(text)
    if ann == "str":
        return text.strip()
    if ann == "tuple":
        sample = default[0] if isinstance(default, tuple) and default else ""
        return _parse_list(text, type(sample) if sample != "" else _auto)
    raise ConfigError(f"cannot parse a value of type {annotation}")


def _auto(token):
    for cast in (int, float):
        try:
            return cast(token)
        except ValueError:
            pass
    return token


def dataclass_from_section(cls, section, base=None):
    """Build ``cls`` from string key/values, starting from ``base`` (or defaults)."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = {} if base is None else dataclasses.asdict(base)
    for key, text in section.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        f = fields[key]
        default = values.get(key, f.default)
        try:
            values[key] = _coerce(text, f.type, default)
        except ValueError as exc:
            raise ConfigError(f"{cls.__name__}.{key}: {exc}") from None
    for k, v in list(values.items()):
        if isinstance(v, list):
            values[k] = tuple(v)
    return cls(**values)


@dataclass(frozen=True)
class SamplerConfig:
    joints: tuple = ("neck",)
    max_angle: float = 30.0
    max_delta: float = 3.0
    shape_range: float = 0.5


@dataclass(frozen=True)
class BenchConfig:
    batch_sizes: tuple = (1, 10, 100, 1000)
    warmup: int = 5
    repeats: int = 10


@dataclass
class RunConfig:
    """Everything a command needs; CLI flags override file values."""

    seed: int = DEFAULT_SEED
    threads: int = 0
    deterministic: bool = False
    out: str = "out"
    grooms: List[str] = field(default_factory=lambda: ["fixture:straight:20:0"])
    body: Optional[str] = "fixture:bust"
    poses: Optional[str] = None
    checkpoint: Optional[str] = None
    drapes: List[str] = field(default_factory=list)
    material: MaterialParams = field(default_factory=MaterialParams.guide_hair)
    solver: SolveConfig = field(default_factory=SolveConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    beta: Optional[np.ndarray] = None
    pose: Optional[np.ndarray] = None
    groom_index: int = 0
    source_path: Optional[str] = None

    @classmethod
    def from_file(cls, path=None):
        cfg = cls()
        if path is None:
            return cfg
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} not found")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        cfg.source_path = os.path.abspath(path)
        base = os.path.dirname(cfg.source_path)
        known = {"run", "paths", "material", "solver", "training", "sampler", "bench", "scene"}
        unknown = set(parser.sections()) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        if parser.has_section("run"):
            run = dict(parser["run"])
            for key in list(run):
                text = run.pop(key)
                if key == "seed":
                    cfg.seed = int(text)
                elif key == "threads":
                    cfg.threads = int(text)
                elif key == "deterministic":
                    cfg.deterministic = _parse_bool(text)
                elif key == "out":
                    cfg.out = _rel(text.strip(), base)
                else:
                    raise ConfigError(f"unknown key {key!r} in [run]")
        if parser.has_section("paths"):
            p = dict(parser["paths"])
            for key in list(p):
                text = p.pop(key).strip()
                if key == "grooms":
                    cfg.grooms = [_rel(s.strip(), base) for s in text.split(",") if s.strip()]
                elif key == "drapes":
                    cfg.drapes = [_rel(s.strip(), base) for s in text.split(",") if s.strip()]
                elif key in ("body", "poses", "checkpoint"):
                    setattr(cfg, key, _rel(text, base) if text and text.lower() != "none" else None)
                else:
                    raise ConfigError(f"unknown key {key!r} in [paths]")
        if parser.has_section("material"):
            sec = dict(parser["material"])
            preset = sec.pop("preset", "guide_hair").strip()
            if preset not in ("guide_hair", "default"):
                raise ConfigError(f"unknown material preset {preset!r}")
            start = MaterialParams.guide_hair() if preset == "guide_hair" else MaterialParams()
            cfg.material = _material(sec, start)
        if parser.has_section("solver"):
            cfg.solver = dataclass_from_section(SolveConfig, dict(parser["solver"]))
        if parser.has_section("training"):
            cfg.training = dataclass_from_section(TrainConfig, dict(parser["training"]))
        if parser.has_section("sampler"):
            cfg.sampler = dataclass_from_section(SamplerConfig, dict(parser["sampler"]))
        if parser.has_section("bench"):
            cfg.bench = dataclass_from_section(BenchConfig, dict(parser["bench"]))
        if parser.has_section("scene"):
            sc = dict(parser["scene"])
            for key in list(sc):
                text = sc.pop(key)
                if key == "beta":
                    cfg.beta = np.array(_parse_list(text, float))
                elif key == "pose":
                    cfg.pose = np.array(_parse_list(text, float))
                elif key == "groom_index":
                    cfg.groom_index = int(text)
                else:
                    raise ConfigError(f"unknown key {key!r} in [scene]")
        return cfg

    def with_overrides(self, solver=None, iters=None, seed=None, threads=None, out=None, deterministic=None):
        """Apply CLI flag values (``None`` leaves the file value)."""
        if solver is not None:
            self.solver = self.solver.replace(method=solver)
        if iters is not None:
            if self.solver.method == "xpbd":
                self.solver = self.solver.replace(xpbd_steps=iters)
            else:
                self.solver = self.solver.replace(max_iter=iters)
            self.training = self.training.replace(steps=iters)
        if seed is not None:
            self.seed = int(seed)
        self.training = self.training.replace(seed=self.seed)
        if threads is not None:
            self.threads = int(threads)
        if out is not None:
            self.out = out
        if deterministic:
            self.deterministic = True
        return self

    def validate(self, needs=("grooms",)):
        """Check that every referenced file exists before any compute."""
        if "grooms" in needs:
            if not self.grooms:
                raise ConfigError("no grooms configured")
            for g in self.grooms:
                _check_source(g, GROOM_FIXTURES, "groom")
        if "body" in needs and self.body is not None:
            _check_source(self.body, BODY_FIXTURES, "body")
            if not self.body.startswith("fixture:"):
                sidecar = os.path.splitext(self.body)[0] + ".json"
                if not os.path.exists(sidecar):
                    raise ConfigError(f"body sidecar {sidecar} not found")
        if "checkpoint" in needs:
            if not self.checkpoint:
                raise ConfigError("no checkpoint configured")
            manifest = self.checkpoint if self.checkpoint.endswith(".json") else self.checkpoint + ".json"
            if not os.path.exists(manifest):
                raise ConfigError(f"checkpoint {manifest} not found")
        if "drapes" in needs:
            if not self.drapes:
                raise ConfigError("no drape files configured")
            for d in self.drapes:
                if not os.path.exists(d):
                    raise ConfigError(f"drape file {d} not found")
        if self.poses is not None and not os.path.exists(self.poses):
            raise ConfigError(f"pose sequence {self.poses} not found")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        return self


def _rel(path, base):
    if not path or path.startswith("fixture:") or os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base, path))


def _check_source(spec, fixtures, kind):
    if spec.startswith("fixture:"):
        name = spec.split(":")[1]
        if name not in fixtures:
            raise ConfigError(f"unknown {kind} fixture {name!r}; expected one of {fixtures}")
    elif not os.path.exists(spec):
        raise ConfigError(f"{kind} file {spec} not found")


def _material(section, start: MaterialParams):
    values = start.to_dict()
    fields = {f.name: f for f in dataclasses.fields(MaterialParams)}
    for key, text in section.items():
        if key not in fields:
            raise ConfigError(f"unknown material key {key!r}")
        try:
            if key == "gravity":
                values[key] = _parse_list(text, float)
            elif key in ("variant", "elastic"):
                values[key] = text.strip()
            elif key == "n_pose_reg":
                values[key] = int(text)
            else:
                values[key] = float(text)
        except ValueError as exc:
            raise ConfigError(f"material.{key}: {exc}") from None
    return MaterialParams(**values)


def resolve_body(spec):
    """Body from a fixture name or an OBJ path (with JSON sidecar)."""
    from .fixtures import procedural_body
    from .io import load_body

    if spec is None:
        return None
    if spec.startswith("fixture:"):
        return procedural_body()
    return load_body(spec)


def resolve_groom(spec, body=None):
    """Groom from ``fixture:<kind>[:n_strands[:seed]]`` or a groom file.

    Kinds: ``straight`` and ``wavy`` (combed over the bust), ``hanging``
    (one free strand), ``helix`` (curly strands), ``bundles`` (the rest
    state of the two-bundle fixture).
    """
    from . import fixtures
    from .io import load_groom

    if not spec.startswith("fixture:"):
        return load_groom(spec, body)
    parts = spec.split(":")[1:]
    kind = parts[0]
    nums = [int(p) for p in parts[1:]]
    if kind in ("straight", "wavy"):
        if body is None:
            raise ConfigError(f"groom fixture {kind!r} needs a body")
        n = nums[0] if nums else 20
        seed = nums[1] if len(nums) > 1 else 0
        return fixtures.demo_groom(body, n, style=kind, seed=seed, name=f"{kind}-{n}-{seed}")
    if kind == "hanging":
        return fixtures.hanging_strand()
    if kind == "helix":
        return fixtures.helix_groom(*(nums[:1]))
    if kind == "bundles":
        return fixtures.two_bundles()[0]
    raise ConfigError(f"unknown groom fixture {kind!r}")
