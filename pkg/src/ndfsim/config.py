"""Scenario configuration and its compiled, trainable form."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .energy import LoadSpec, MaterialParams, MaterialRange
from .errors import ConfigurationError
from .geometry import SurfaceSpec
from .ndf import ConstraintSpec, FieldModel, InputEmbedding, SirenConfig


@dataclass
class SamplingPlan:
    """Stratified Monte-Carlo plan: one draw per (cell x time stratum) per iteration."""

    n1: int = 16
    n2: int = 16
    nt: int = 8
    seed: int = 0
    resample: bool = True

    def __post_init__(self):
        if min(self.n1, self.n2, self.nt) < 1:
            raise ConfigurationError("sampling counts must be >= 1")


@dataclass
class TrainingConfig:
    hidden_layers: int = 3
    hidden_width: int = 64
    omega0: float = 15.0
    activation: str = "sine"
    lr: float = 1e-4
    iterations: int = 3000
    output_scale: float = 1.0
    nonlinear: bool = True
    hard_constraints: bool = True
    penalty_weight: float = 1e3
    checkpoint_every: int = 0
    seed: int = 0


@dataclass
class Probe:
    """Measurement recipe: mean over ``points`` of ``u . direction`` (or |u3|-style component)."""

    points: list
    directions: list
    reference: float
    tolerance: float
    rescale: float = 1.0
    label: str = ""

    def measure(self, u: np.ndarray) -> float:
        d = np.asarray(self.directions, dtype=float)
        return float(np.mean(np.sum(u * d, -1))) * self.rescale


@dataclass
class ScenarioConfig:
    name: str
    surface: SurfaceSpec
    constraints: ConstraintSpec
    load: LoadSpec
    material: MaterialParams
    mode: str = "quasi-static"
    horizon: float | None = None
    material_range: dict | None = None
    sampling: SamplingPlan = field(default_factory=SamplingPlan)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    probe: Probe | None = None
    notes: str = ""

    def __post_init__(self):
        if self.mode not in ("quasi-static", "dynamic"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.mode == "dynamic" and not (self.horizon and self.horizon > 0):
            raise ConfigurationError("dynamic scenarios need a positive horizon T")
        if self.mode == "quasi-static":
            self.horizon = None
        if self.load.is_point and self.mode == "dynamic":
            raise ConfigurationError("point loads are quasi-static only")
        if self.probe is not None:
            for p in self.probe.points:
                for axis, c in enumerate(p[:2]):
                    lo, hi = self.surface.domain[axis]
                    if not lo <= c <= hi:
                        raise ConfigurationError(f"probe point {p} outside the domain")

    @property
    def dynamic(self) -> bool:
        return self.mode == "dynamic"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "surface": self.surface.to_dict(),
            "constraints": self.constraints.to_dict(),
            "load": self.load.to_dict(),
            "material": self.material.as_dict(),
            "mode": self.mode,
            "horizon": self.horizon,
            "material_range": None if self.material_range is None else {k: list(v) for k, v in self.material_range.items()},
            "sampling": asdict(self.sampling),
            "training": asdict(self.training),
            "probe": None if self.probe is None else asdict(self.probe),
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
        probe = d.get("probe")
        return cls(
            name=d["name"],
            surface=SurfaceSpec.from_dict(d["surface"]),
            constraints=ConstraintSpec.from_dict(d["constraints"]),
            load=LoadSpec.from_dict(d["load"]),
            material=MaterialParams(**d["material"]),
            mode=d.get("mode", "quasi-static"),
            horizon=d.get("horizon"),
            material_range=None if d.get("material_range") is None else {k: tuple(v) for k, v in d["material_range"].items()},
            sampling=_dataclass_from(SamplingPlan, d.get("sampling", {})),
            training=_dataclass_from(TrainingConfig, d.get("training", {})),
            probe=None if probe is None else Probe(**probe),
            notes=d.get("notes", ""),
        )

    def compile(self) -> "Problem":
        return Problem.from_config(self)


def _dataclass_from(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def deep_update(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_update(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> ScenarioConfig:
    """Read a YAML scenario file.

    A file may name a builtin with ``base:`` and override any subtree;
    otherwise it must spell out the full scenario.
    """
    import yaml

    from .scenarios import builtin_scenarios

    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    base = data.pop("base", None)
    if base is not None:
        reg = builtin_scenarios()
        if base not in reg:
            raise ConfigurationError(f"unknown base scenario {base!r}")
        data = deep_update(reg[base].config.to_dict(), data)
    return ScenarioConfig.from_dict(data)


def dump_config(config: ScenarioConfig, path):
    import yaml

    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))


@dataclass
class Problem:
    """A scenario bound to a network configuration, ready for training."""

    config: ScenarioConfig
    surface: SurfaceSpec
    model: FieldModel
    load: LoadSpec
    material: MaterialParams
    material_range: MaterialRange | None
    dynamic: bool
    nonlinear: bool

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "Problem":
        s = cfg.surface
        periodic = {a: s.period(a) for a in s.periodic}
        emb = InputEmbedding(s.domain, periodic, cfg.horizon if cfg.dynamic else None,
                             dict(cfg.material_range or {}))
        tr = cfg.training
        siren = SirenConfig(emb.n_inputs, tr.hidden_layers, tr.hidden_width, tr.omega0, 3, tr.seed,
                            tr.activation, tr.output_scale)
        model = FieldModel(siren, emb, cfg.constraints.compile(s.domain, s.rotation), tr.hard_constraints)
        prior = None if cfg.material_range is None else MaterialRange(cfg.material, dict(cfg.material_range))
        return cls(cfg, s, model, cfg.load, cfg.material, prior, cfg.dynamic, tr.nonlinear)

    @property
    def horizon(self):
        return self.model.embedding.horizon

    def with_load(self, load: LoadSpec) -> "Problem":
        return replace(self, load=load)

    def with_pose(self, rotation, translation) -> "Problem":
        surface = self.surface.with_pose(rotation, translation)
        model = replace(self.model, constraints=self.config.constraints.compile(surface.domain, rotation))
        return replace(self, surface=surface, model=model)
