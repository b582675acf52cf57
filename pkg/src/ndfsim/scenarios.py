"""Builtin scenarios, budget profiles and the benchmark runner."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import Probe, SamplingPlan, ScenarioConfig, TrainingConfig
from .energy import LoadSpec, MaterialParams
from .errors import ConfigurationError, NumericAbort
from .geometry import SurfaceSpec
from .ndf import ConstraintSpec, Factor, Motion, MotionBranch, displacement

DEG = math.pi / 180.0
SIGMA = 0.01

# Cloth defaults for the dynamic scenes.
CLOTH = MaterialParams(rho=0.144, h=0.0012, E=5000.0, nu=0.25)

PROFILES = {
    "ci": {"hidden_layers": 3, "hidden_width": 64, "n": (16, 16), "nt": 8, "iterations": 3000},
    "paper": {"hidden_layers": 5, "hidden_width": 512, "n": (20, 20), "nt": 20, "iterations": 2500},
}


@dataclass
class BenchmarkCase:
    config: ScenarioConfig
    reference: float
    recipe: str
    source: str
    tolerance: dict = field(default_factory=lambda: {"ci": 0.10, "paper": 0.02})
    # per-profile training overrides, e.g. a larger ci learning rate
    overrides: dict = field(default_factory=dict)


def _gauss(c1=None, c2=None, components=(0, 1, 2), complement=False, sigma=SIGMA):
    return Factor("gaussian", (c1, c2), sigma, complement, components=components)


def _ci_training(**kw) -> TrainingConfig:
    return TrainingConfig(**kw)


def square_plate() -> BenchmarkCase:
    L = 100.0
    cfg = ScenarioConfig(
        name="square-plate",
        surface=SurfaceSpec("plane", {"L": L}),
        constraints=ConstraintSpec([Factor("polynomial", axes=(0, 1))]),
        load=LoadSpec("constant", (0.0, 0.0, -1.0)),
        material=MaterialParams(rho=0.0, h=1.0, E=1e7, nu=0.0),
        sampling=SamplingPlan(16, 16, 1),
        training=_ci_training(output_scale=1.6e-7, nonlinear=False),
        probe=Probe([[L / 2, L / 2]], [[0.0, 0.0, -1.0]], 0.487, 0.10, label="-u3 at plate centre"),
    )
    return BenchmarkCase(cfg, 0.487, "-u3 at plate centre (grid max also reported)", "obstacle-course table, analytical")


def scordelis_lo() -> BenchmarkCase:
    R, L = 25.0, 50.0
    cfg = ScenarioConfig(
        name="scordelis-lo",
        surface=SurfaceSpec("roof", {"R": R, "L": L, "angle": 80 * DEG, "offset": 50 * DEG}),
        constraints=ConstraintSpec([Factor("polynomial", axes=(1,), components=(0, 1))]),
        load=LoadSpec("constant", (0.0, -90.0, 0.0)),
        material=MaterialParams(rho=0.0, h=0.25, E=4.32e8, nu=0.0),
        sampling=SamplingPlan(16, 16, 1),
        training=_ci_training(output_scale=1e-3, nonlinear=False),
        probe=Probe([[0.0, L / 2], [80 * DEG, L / 2]], [[0.0, -1.0, 0.0]] * 2, 0.3024, 0.10,
                    label="-u2 averaged over the two free-edge midpoints"),
    )
    return BenchmarkCase(cfg, 0.3024, "-u2 averaged over both free-edge midpoints", "obstacle-course table, analytical",
                         {"ci": 0.10, "paper": 0.03}, {"ci": {"lr": 1e-3}})


_PINCH_POINTS = ((90 * DEG, 300.0), (270 * DEG, 300.0))
_PINCH_FORCES = ((0.0, 0.0, 1.0), (0.0, 0.0, -1.0))
# E is lowered 1e5-fold to speed up training; the linear response rescales exactly.
_PINCH_E_SCALE = 1e-5


def pinched_cylinder_rigid() -> BenchmarkCase:
    R, L = 300.0, 600.0
    cfg = ScenarioConfig(
        name="pinched-cylinder-rigid",
        surface=SurfaceSpec("cylinder", {"R": R, "L": L}),
        constraints=ConstraintSpec([Factor("polynomial", axes=(1,), components=(0, 2))]),
        load=LoadSpec("points", points=_PINCH_POINTS, vectors=_PINCH_FORCES),
        material=MaterialParams(rho=0.0, h=3.0, E=30.0, nu=0.3),
        sampling=SamplingPlan(16, 16, 1),
        training=_ci_training(output_scale=2e-5, nonlinear=False),
        probe=Probe([list(p) for p in _PINCH_POINTS], [list(f) for f in _PINCH_FORCES], 1.825e-5, 0.10,
                    rescale=_PINCH_E_SCALE, label="displacement along the load at the load points"),
    )
    return BenchmarkCase(cfg, 1.825e-5, "u . f_hat at the load points, x1e-5 for the E rescale",
                         "obstacle-course table, analytical", {"ci": 0.10, "paper": 0.08})


def pinched_cylinder_free() -> BenchmarkCase:
    R, L = 300.0, 600.0
    pins = [_gauss(p[0], p[1], components=(0, 1)) for p in _PINCH_POINTS]
    cfg = ScenarioConfig(
        name="pinched-cylinder-free",
        surface=SurfaceSpec("cylinder", {"R": R, "L": L}),
        constraints=ConstraintSpec(pins),
        load=LoadSpec("points", points=_PINCH_POINTS, vectors=_PINCH_FORCES),
        material=MaterialParams(rho=0.0, h=3.0, E=30.0, nu=0.3),
        sampling=SamplingPlan(16, 16, 1),
        training=_ci_training(output_scale=10.0, nonlinear=False),
        probe=Probe([list(p) for p in _PINCH_POINTS], [list(f) for f in _PINCH_FORCES], 4.52e-4, 0.10,
                    rescale=_PINCH_E_SCALE, label="displacement along the load at the load points"),
    )
    return BenchmarkCase(cfg, 4.52e-4, "u . f_hat at the load points, x1e-5 for the E rescale",
                         "obstacle-course table, analytical", {"ci": 0.10, "paper": 0.08})


def _napkin(name, constraints, load=None, material=CLOTH, horizon=2.0, scale=0.1, **kw) -> ScenarioConfig:
    return ScenarioConfig(
        name=name,
        surface=SurfaceSpec("plane", {"L": 1.0}),
        constraints=constraints,
        load=load or LoadSpec("gravity"),
        material=material,
        mode="dynamic",
        horizon=horizon,
        sampling=SamplingPlan(16, 16, 8),
        training=_ci_training(output_scale=scale),
        **kw,
    )


def napkin_corner() -> ScenarioConfig:
    return _napkin("napkin-corner", ConstraintSpec([_gauss(0.0, 1.0)], initial=True))


def napkin_moving_corners() -> ScenarioConfig:
    v = Motion("translation-ramp", (0.2, 0.0, 0.0))
    return _napkin("napkin-moving-corners", ConstraintSpec(
        [_gauss(0.0, 1.0), _gauss(1.0, 1.0)], initial=True,
        branches=[MotionBranch(+1.0, [_gauss(0.0, 1.0, complement=True)], v),
                  MotionBranch(-1.0, [_gauss(1.0, 1.0, complement=True)], v)]))


def napkin_fixed_edges() -> ScenarioConfig:
    return _napkin("napkin-fixed-edges", ConstraintSpec([_gauss(c1=0.0), _gauss(c2=0.0)], initial=True))


def napkin_wind() -> ScenarioConfig:
    # sinusoidal wind along +z on top of the fixed-corner setup
    return _napkin("napkin-wind", ConstraintSpec([_gauss(0.0, 1.0)], initial=True),
                   load=LoadSpec("sinusoidal", (0.0, 0.0, 1.0), amplitude=0.5, omega=2.0, phase=1.0))


def napkin_material() -> ScenarioConfig:
    cfg = napkin_corner()
    return replace(cfg, name="napkin-material", material_range={"h": (0.0005, 0.0025)})


def _sleeve(name, constraints, horizon=1.0, scale=0.05) -> ScenarioConfig:
    return ScenarioConfig(
        name=name,
        surface=SurfaceSpec("cylinder", {"R": 0.25, "L": 1.0}),
        constraints=constraints,
        load=LoadSpec("constant", (0.0, 0.0, 0.0)),
        material=CLOTH,
        mode="dynamic",
        horizon=horizon,
        sampling=SamplingPlan(16, 16, 8),
        training=_ci_training(output_scale=scale),
    )


def sleeve_compression() -> ScenarioConfig:
    v = Motion("translation-ramp", (0.0, 0.1, 0.0))
    return _sleeve("sleeve-compression", ConstraintSpec(
        [_gauss(c2=0.0), _gauss(c2=1.0)], initial=True,
        branches=[MotionBranch(+1.0, [_gauss(c2=0.0, complement=True)], v),
                  MotionBranch(-1.0, [_gauss(c2=1.0, complement=True)], v)]))


def sleeve_twist(theta: float = 3 * math.pi / 4) -> ScenarioConfig:
    R = 0.25
    # top rim turns by +theta*t, bottom rim by -theta*t; both enter with a plus
    # sign so each rim motion is a rigid rotation
    return _sleeve("sleeve-twist", ConstraintSpec(
        [_gauss(c2=0.0), _gauss(c2=1.0)], initial=True,
        branches=[MotionBranch(+1.0, [_gauss(c2=0.0, complement=True)], Motion("rim-rotation", radius=R, rate=-theta)),
                  MotionBranch(+1.0, [_gauss(c2=1.0, complement=True)], Motion("rim-rotation", radius=R, rate=theta))]))


def skirt() -> ScenarioConfig:
    return ScenarioConfig(
        name="skirt",
        surface=SurfaceSpec("cone", {"R_top": 0.25, "R_bottom": 0.5, "L": 1.0}),
        constraints=ConstraintSpec([_gauss(c2=1.0)], initial=True),
        load=LoadSpec("gravity"),
        material=CLOTH,
        mode="dynamic",
        horizon=1.0,
        sampling=SamplingPlan(16, 16, 8),
        training=_ci_training(output_scale=0.1),
    )


@dataclass
class RegistryEntry:
    config: ScenarioConfig
    case: BenchmarkCase | None = None


def builtin_scenarios() -> dict[str, RegistryEntry]:
    reg = {}
    for build in (square_plate, scordelis_lo, pinched_cylinder_rigid, pinched_cylinder_free):
        case = build()
        reg[case.config.name] = RegistryEntry(case.config, case)
    for build in (napkin_corner, napkin_moving_corners, napkin_fixed_edges, napkin_wind, napkin_material,
                  sleeve_compression, sleeve_twist, skirt):
        cfg = build()
        reg[cfg.name] = RegistryEntry(cfg)
    return reg


def get_scenario(name: str) -> ScenarioConfig:
    reg = builtin_scenarios()
    if name not in reg:
        raise ConfigurationError(f"unknown scenario {name!r}; known: {', '.join(reg)}")
    return reg[name].config


def benchmark_cases() -> dict[str, BenchmarkCase]:
    return {k: v.case for k, v in builtin_scenarios().items() if v.case is not None}


def apply_profile(cfg: ScenarioConfig, profile: str) -> ScenarioConfig:
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}")
    p = PROFILES[profile]
    training = replace(cfg.training, hidden_layers=p["hidden_layers"], hidden_width=p["hidden_width"],
                       iterations=p["iterations"])
    sampling = replace(cfg.sampling, n1=p["n"][0], n2=p["n"][1], nt=p["nt"] if cfg.dynamic else 1)
    return replace(cfg, training=training, sampling=sampling)


@dataclass
class BenchmarkReport:
    name: str
    profile: str
    measured: float
    reference: float
    rel_error: float
    tolerance: float
    passed: bool
    grid_max: float | None = None
    wall_s: float = 0.0
    train_report: object = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = "" if self.grid_max is None else f" grid_max={self.grid_max:.6g}"
        return (f"{status} {self.name} [{self.profile}] measured={self.measured:.6g} "
                f"reference={self.reference:.6g} rel_err={self.rel_error:.3%} tol={self.tolerance:.0%}"
                f"{extra} ({self.wall_s:.1f}s)")


def measure(case: BenchmarkCase, weights, problem) -> tuple[float, float | None]:
    probe = case.config.probe
    u = displacement(np.asarray(probe.points, dtype=float), None, None, weights, problem.model)
    value = probe.measure(u)
    grid_max = None
    if case.config.name == "square-plate":
        L = case.config.surface.params["L"]
        g = np.linspace(0.0, L, 41)
        pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        grid_max = float(np.max(np.abs(displacement(pts, None, None, weights, problem.model)[:, 2])))
    return value, grid_max


def run_benchmark(case: BenchmarkCase, profile: str = "ci", iterations: int | None = None,
                  seed: int | None = None, **train_kw) -> BenchmarkReport:
    """Train the case under a budget profile and compare the probe with the reference."""
    from .trainer import train

    cfg = apply_profile(case.config, profile)
    if case.overrides.get(profile):
        cfg = replace(cfg, training=replace(cfg.training, **case.overrides[profile]))
    if seed is not None:
        cfg = replace(cfg, training=replace(cfg.training, seed=seed), sampling=replace(cfg.sampling, seed=seed))
    problem = cfg.compile()
    t0 = time.perf_counter()
    try:
        weights, report = train(problem, iterations=iterations, **train_kw)
    except NumericAbort as exc:
        exc.report = BenchmarkReport(case.config.name, profile, float("nan"), case.reference, float("nan"),
                                     case.tolerance[profile], False, wall_s=time.perf_counter() - t0)
        raise
    value, grid_max = measure(case, weights, problem)
    rel = abs(value - case.reference) / abs(case.reference)
    tol = case.tolerance[profile]
    passed = rel <= tol
    if grid_max is not None:
        passed = passed and abs(grid_max - case.reference) / case.reference <= tol
    return BenchmarkReport(case.config.name, profile, value, case.reference, rel, tol, passed, grid_max,
                           time.perf_counter() - t0, report)
