"""Hyperelastic, external and kinetic energy terms and the Monte-Carlo loss."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .diffmath import Jet
from .errors import ConfigurationError, DomainError
from .geometry import SurfaceFrame, elasticity_parts
from .kinematics import StrainState, strains

GRAVITY = 9.8


@dataclass
class MaterialParams:
    rho: float
    h: float
    E: float
    nu: float

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigurationError("thickness h must be positive")
        if not self.E > 0:
            raise ConfigurationError("Young's modulus E must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ConfigurationError(f"Poisson ratio {self.nu} outside [0, 0.5)")
        if self.rho < 0:
            raise ConfigurationError("density must be non-negative")

    @property
    def D(self) -> float:
        return self.E * self.h / (1.0 - self.nu ** 2)

    @property
    def B(self) -> float:
        return self.E * self.h ** 3 / (12.0 * (1.0 - self.nu ** 2))

    def as_dict(self) -> dict:
        return {"rho": self.rho, "h": self.h, "E": self.E, "nu": self.nu}


def stiffness(material: MaterialParams) -> tuple[float, float]:
    """In-plane and bending stiffness ``(D, B)``."""
    if material.nu >= 0.5:
        raise ConfigurationError("nu must be < 0.5")
    return material.D, material.B


@dataclass
class MaterialRange:
    """Uniform material prior ``[lo, hi]`` per field; fields absent from ``ranges`` are fixed."""

    base: MaterialParams
    ranges: dict = field(default_factory=dict)

    def sample(self, rng: np.random.Generator) -> MaterialParams:
        vals = self.base.as_dict()
        for key in sorted(self.ranges):
            lo, hi = self.ranges[key]
            vals[key] = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        return MaterialParams(**vals)

    def contains(self, m: MaterialParams) -> bool:
        d = m.as_dict()
        for key, (lo, hi) in self.ranges.items():
            if not lo - 1e-12 * abs(lo) <= d[key] <= hi + 1e-12 * abs(hi):
                return False
        return True


@dataclass
class LoadSpec:
    """External load.

    ``constant``: force density ``vector``.
    ``gravity``: ``[0, -g rho, 0]`` (density taken from the material draw).
    ``sinusoidal``: ``amplitude * sin(omega t + phase) * vector``.
    ``points``: concentrated forces ``vectors`` at ``points`` (quasi-static only).
    """

    kind: str = "constant"
    vector: tuple = (0.0, 0.0, 0.0)
    amplitude: float = 1.0
    omega: float = 0.0
    phase: float = 0.0
    g: float = GRAVITY
    points: tuple = ()
    vectors: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "gravity", "sinusoidal", "points"):
            raise ConfigurationError(f"unknown load kind {self.kind!r}")
        self.vector = tuple(float(v) for v in self.vector)
        self.points = tuple(tuple(float(c) for c in p) for p in self.points)
        self.vectors = tuple(tuple(float(c) for c in v) for v in self.vectors)
        if self.kind == "points" and len(self.points) != len(self.vectors):
            raise ConfigurationError("one force vector per load point")

    @property
    def is_point(self) -> bool:
        return self.kind == "points"

    def density(self, n: int, t, material: MaterialParams) -> torch.Tensor:
        """Cartesian force density at ``n`` samples, shape ``(n, 3)``."""
        if self.kind == "points":
            raise ConfigurationError("point loads have no force density")
        if self.kind == "gravity":
            v = torch.tensor([0.0, -self.g * material.rho, 0.0], dtype=torch.float64)
            return v.expand(n, 3)
        v = torch.tensor(self.vector, dtype=torch.float64)
        if self.kind == "constant":
            return v.expand(n, 3)
        if t is None:
            raise ConfigurationError("sinusoidal load needs time samples")
        tt = torch.as_tensor(t, dtype=torch.float64).reshape(-1, 1)
        return self.amplitude * torch.sin(self.omega * tt + self.phase) * v

    def lerp(self, target: "LoadSpec", s: float) -> "LoadSpec":
        """Blend force vectors (and amplitudes) toward ``target``."""
        if self.kind != target.kind:
            raise ConfigurationError("can only interpolate loads of the same kind")
        mix = lambda a, b: tuple((1 - s) * x + s * y for x, y in zip(a, b))  # noqa: E731
        return replace(self, vector=mix(self.vector, target.vector),
                       vectors=tuple(mix(a, b) for a, b in zip(self.vectors, target.vectors)),
                       amplitude=(1 - s) * self.amplitude + s * target.amplitude,
                       g=(1 - s) * self.g + s * target.g)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("constant", "sinusoidal"):
            d["vector"] = list(self.vector)
        if self.kind == "sinusoidal":
            d.update(amplitude=self.amplitude, omega=self.omega, phase=self.phase)
        if self.kind == "gravity":
            d["g"] = self.g
        if self.kind == "points":
            d.update(points=[list(p) for p in self.points], vectors=[list(v) for v in self.vectors])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LoadSpec":
        d = dict(d)
        return cls(**{k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v)
                      for k, v in d.items()})


def elasticity_matrix(fr: SurfaceFrame, nu) -> torch.Tensor:
    """Per-sample 4x4 elasticity matrix; ``nu`` may be a float or a 0-d tensor."""
    A, S = elasticity_parts(fr.tensor("metric_inv"))
    n = A.shape[0]
    return (nu * A + (1.0 - nu) * S).reshape(n, 4, 4)


def quadratic(x: torch.Tensor, H: torch.Tensor) -> torch.Tensor:
    return torch.einsum("ni,nij,nj->n", x, H, x)


def energy_density(strain: StrainState, H: torch.Tensor, D, B) -> torch.Tensor:
    """``0.5 * (D eps^T H eps + B kappa^T H kappa)`` per sample."""
    return 0.5 * (D * quadratic(strain.eps_flat, H) + B * quadratic(strain.kappa_flat, H))


def external_energy_density(load: LoadSpec, fr: SurfaceFrame, u: Jet, t=None,
                            material: MaterialParams | None = None) -> torch.Tensor:
    """``f^al u_al + f^3 u_3``, computed from contravariant force and covariant displacement."""
    if load.is_point:
        raise ConfigurationError("external_energy_density is for distributed loads")
    f = load.density(len(fr), t, material)
    contra, normal, a = fr.tensor("contra"), fr.tensor("normal"), fr.tensor("a")
    f_up = torch.cat([torch.einsum("ni,nai->na", f, contra), (f * normal).sum(-1, keepdim=True)], -1)
    u_lo = torch.cat([torch.einsum("ni,nai->na", u.value, a), (u.value * normal).sum(-1, keepdim=True)], -1)
    return (f_up * u_lo).sum(-1)


def kinetic_density(u: Jet, rho) -> torch.Tensor:
    v = u.d1[2]
    if v is None:
        return torch.zeros(u.value.shape[0], dtype=u.value.dtype)
    return 0.5 * rho * (v * v).sum(-1)


@dataclass
class EnergyTerms:
    membrane: torch.Tensor
    bending: torch.Tensor
    external: torch.Tensor
    kinetic: torch.Tensor
    sqrt_a: torch.Tensor

    def integrand(self) -> torch.Tensor:
        return (self.membrane + self.bending - self.external + self.kinetic) * self.sqrt_a


def energy_terms(fr: SurfaceFrame, u: Jet, material: MaterialParams, load: LoadSpec, t=None,
                 nonlinear: bool = True, dynamic: bool = True) -> EnergyTerms:
    st = strains(fr, u, nonlinear)
    H = elasticity_matrix(fr, material.nu)
    D, B = stiffness(material)
    mem = 0.5 * D * quadratic(st.eps_flat, H)
    ben = 0.5 * B * quadratic(st.kappa_flat, H)
    if load.is_point:
        ext = torch.zeros_like(mem)
    else:
        ext = external_energy_density(load, fr, u, t, material)
    kin = kinetic_density(u, material.rho) if dynamic else torch.zeros_like(mem)
    return EnergyTerms(mem, ben, ext, kin, fr.tensor("sqrt_a"))


def monte_carlo(terms: EnergyTerms, area: float) -> torch.Tensor:
    if terms.membrane.numel() == 0:
        raise DomainError("empty sample set")
    return area * terms.integrand().mean()


def point_load_energy(load: LoadSpec, u_points: torch.Tensor) -> torch.Tensor:
    """``sum f . u`` over the load points; ``u_points`` has shape ``(P, 3)``."""
    f = torch.tensor(load.vectors, dtype=torch.float64)
    return (f * u_points).sum()


def assemble_loss(terms: EnergyTerms, area: float, load: LoadSpec, u_points: torch.Tensor | None = None):
    """Monte-Carlo loss; point loads subtract the exact sum over load points."""
    loss = monte_carlo(terms, area)
    if load.is_point:
        if u_points is None:
            raise ConfigurationError("point-load loss needs the displacement at the load points")
        loss = loss - point_load_energy(load, u_points)
    return loss


def loss_and_field(weights, problem, samples, material: MaterialParams | None = None):
    """Training loss plus the displacement jet at the samples.

    ``problem`` is a :class:`ndfsim.config.Problem`; ``samples`` is
    ``(xi, t)`` with ``t`` ignored for quasi-static problems.
    """
    from .geometry import frame
    from .ndf import eval_ndf

    xi, t = samples
    if len(xi) == 0:
        raise DomainError("empty sample set")
    t = t if problem.dynamic else None
    material = material or problem.material
    phi = material.as_dict() if problem.model.embedding.material_ranges else None
    fr = frame(problem.surface, xi)
    u = eval_ndf(xi, t, phi, weights, problem.model)
    terms = energy_terms(fr, u, material, problem.load, t, problem.nonlinear, problem.dynamic)
    u_points = None
    if problem.load.is_point:
        u_points = eval_ndf(np.asarray(problem.load.points), None, phi, weights, problem.model).value
    return assemble_loss(terms, problem.surface.area, problem.load, u_points), u


def total_loss(weights, problem, samples, material: MaterialParams | None = None) -> torch.Tensor:
    return loss_and_field(weights, problem, samples, material)[0]


def material_conditioned_loss(weights, problem, samples, draw: MaterialParams) -> torch.Tensor:
    """Loss of a material-conditioned network at one material draw."""
    if problem.material_range is None:
        raise ConfigurationError("problem is not material-conditioned")
    if not problem.material_range.contains(draw):
        raise DomainError(f"material draw {draw} outside the conditioning range")
    return total_loss(weights, problem, samples, draw)
