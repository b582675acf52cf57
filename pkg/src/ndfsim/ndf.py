"""Neural deformation field: sine network, input embedding and hard constraints.

The field is evaluated on batches. Inputs are physical coordinates ``xi``
(shape ``(N, 2)``), times ``t`` (shape ``(N,)`` or ``None`` for quasi-static
scenes) and optional material values. The output is a :class:`Jet` of shape
``(N, 3)`` holding the Cartesian displacement and its input derivatives.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import diffmath as dm
from .diffmath import Jet
from .errors import CheckpointMismatch, ConfigurationError

DTYPE = torch.float64
ACTIVATIONS = ("sine", "gelu")


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

@dataclass
class SirenConfig:
    in_features: int
    hidden_layers: int = 3
    hidden_width: int = 64
    omega0: float = 15.0
    out_features: int = 3
    seed: int = 0
    activation: str = "sine"
    output_scale: float = 1.0

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ConfigurationError("hidden_layers must be >= 1")
        if not self.omega0 > 0:
            raise ConfigurationError("omega0 must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> list[int]:
        return [self.in_features] + [self.hidden_width] * self.hidden_layers + [self.out_features]


@dataclass
class NdfWeights:
    """Layer weights ``W`` (out x in) and biases as float64 leaf tensors."""

    weights: list[torch.Tensor]
    biases: list[torch.Tensor]

    def parameters(self) -> list[torch.Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def clone(self) -> "NdfWeights":
        return NdfWeights([w.detach().clone().requires_grad_(True) for w in self.weights],
                          [b.detach().clone().requires_grad_(True) for b in self.biases])

    def numpy(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(w.detach().numpy().copy(), b.detach().numpy().copy()) for w, b in zip(self.weights, self.biases)]

    def norms(self) -> list[float]:
        return [float(p.detach().norm()) for p in self.parameters()]

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_siren(config: SirenConfig) -> NdfWeights:
    """Sine-network initialization, deterministic in ``config.seed``.

    First layer ``U(-1/n_in, 1/n_in)``; deeper layers
    ``U(-sqrt(6/n_in)/omega0, +sqrt(6/n_in)/omega0)``; biases
    ``U(-1/sqrt(n_in), 1/sqrt(n_in))``. The GELU variant uses the
    fan-in uniform rule ``U(-1/sqrt(n_in), 1/sqrt(n_in))`` for everything.
    """
    rng = np.random.default_rng(config.seed)
    widths = config.widths
    ws, bs = [], []
    for i in range(len(widths) - 1):
        n_in, n_out = widths[i], widths[i + 1]
        if config.activation == "gelu":
            bound = 1.0 / math.sqrt(n_in)
        elif i == 0:
            bound = 1.0 / n_in
        else:
            bound = math.sqrt(6.0 / n_in) / config.omega0
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-1.0 / math.sqrt(n_in), 1.0 / math.sqrt(n_in), size=n_out)
        ws.append(torch.tensor(w, dtype=DTYPE, requires_grad=True))
        bs.append(torch.tensor(b, dtype=DTYPE, requires_grad=True))
    return NdfWeights(ws, bs)


def gelu_jet(z: Jet) -> Jet:
    phi = torch.exp(-0.5 * z.value * z.value) / math.sqrt(2 * math.pi)
    cdf = 0.5 * (1 + torch.erf(z.value / math.sqrt(2)))
    return dm.compose(z, z.value * cdf, cdf + z.value * phi, phi * (2 - z.value * z.value))


def network(x: Jet, weights: NdfWeights, config: SirenConfig) -> Jet:
    """Raw network output ``F_Theta`` (before constraints), times ``output_scale``."""
    h = x
    last = len(weights.weights) - 1
    for i, (w, b) in enumerate(zip(weights.weights, weights.biases)):
        if i == last:
            h = h.linear(w, b)
        elif config.activation == "sine":
            h = dm.affine_sine(h, w, b, config.omega0)
        else:
            h = gelu_jet(h.linear(w, b))
    return h * config.output_scale if config.output_scale != 1.0 else h


# ---------------------------------------------------------------------------
# input embedding
# ---------------------------------------------------------------------------

@dataclass
class InputEmbedding:
    """Maps physical ``(xi, t, Phi)`` to network inputs.

    Non-periodic axes go to ``[0, 1]``; periodic axes to
    ``(cos 2 pi xi / P, sin 2 pi xi / P)``; time (dynamic scenes) to
    ``t / T``; material values from their range to ``[0, 1]``.
    """

    domain: tuple
    periodic: dict = field(default_factory=dict)
    horizon: float | None = None
    material_ranges: dict = field(default_factory=dict)

    @property
    def n_inputs(self) -> int:
        n = sum(2 if a in self.periodic else 1 for a in range(2))
        if self.horizon is not None:
            n += 1
        return n + len(self.material_ranges)

    @property
    def material_keys(self) -> tuple:
        return tuple(sorted(self.material_ranges))


def coordinate_jets(xi, t=None):
    """Seeded coordinate jets ``(xi1, xi2, t)``; ``t`` is ``None`` when quasi-static."""
    xi = torch.as_tensor(np.array(xi, dtype=float), dtype=DTYPE)
    x1 = Jet.variable(xi[:, 0], 0)
    x2 = Jet.variable(xi[:, 1], 1)
    tj = None if t is None else Jet.variable(torch.as_tensor(np.array(t, dtype=float), dtype=DTYPE).reshape(-1), 2)
    return x1, x2, tj


def embed_inputs(xi, t, phi, embedding: InputEmbedding) -> Jet:
    """Network input jet of shape ``(N, n_inputs)``.

    The affine normalization factors live in the derivative seeds, so
    downstream derivative slots are derivatives with respect to physical
    coordinates.
    """
    x1, x2, tj = coordinate_jets(xi, t)
    cols = []
    for axis, xj in enumerate((x1, x2)):
        lo, hi = embedding.domain[axis]
        if axis in embedding.periodic:
            omega = 2 * math.pi / embedding.periodic[axis]
            arg = xj * omega
            cols += [dm.cos(arg), dm.sin(arg)]
        else:
            cols.append((xj - lo) * (1.0 / (hi - lo)))
    if embedding.horizon is not None:
        if tj is None:
            raise ConfigurationError("dynamic embedding needs t")
        cols.append(tj * (1.0 / embedding.horizon))
    n = cols[0].value.shape[0]
    for key in embedding.material_keys:
        lo, hi = embedding.material_ranges[key]
        if phi is None or key not in phi:
            raise ConfigurationError(f"material value {key!r} required by the embedding")
        v = torch.as_tensor(phi[key], dtype=DTYPE).expand(n) if np.ndim(phi[key]) == 0 else torch.as_tensor(phi[key], dtype=DTYPE)
        norm = (v - lo) / (hi - lo) if hi > lo else torch.zeros_like(v)
        cols.append(Jet.constant(norm))
    return dm.stack(cols, -1)


# ---------------------------------------------------------------------------
# constraint algebra
# ---------------------------------------------------------------------------

@dataclass
class Factor:
    """One multiplicative constraint factor.

    ``gaussian``: ``1 - exp(-d^2/sigma)`` with ``d`` the distance to
    ``center`` over the axes where ``center`` is not ``None`` (a point
    anchor sets both, an edge anchor one). ``complement`` gives
    ``exp(-d^2/sigma)`` instead.
    ``polynomial``: ``prod_a (xi_a - lo_a)(hi_a - xi_a)`` over ``axes``.
    ``components`` lists the Cartesian components the factor multiplies.
    """

    kind: str = "gaussian"
    center: tuple = (None, None)
    sigma: float = 0.01
    complement: bool = False
    axes: tuple = ()
    bounds: tuple | None = None
    components: tuple = (0, 1, 2)

    def __post_init__(self):
        if self.kind not in ("gaussian", "polynomial"):
            raise ConfigurationError(f"unknown factor kind {self.kind!r}")
        self.center = tuple(None if c is None else float(c) for c in self.center)
        self.axes = tuple(int(a) for a in self.axes)
        self.components = tuple(int(c) for c in self.components)
        if self.bounds is not None:
            self.bounds = tuple(tuple(float(v) for v in b) for b in self.bounds)
        if self.kind == "gaussian" and all(c is None for c in self.center):
            raise ConfigurationError("gaussian factor needs at least one anchor coordinate")


@dataclass
class Motion:
    """Prescribed motion: ``translation-ramp`` (``velocity * t``) or
    ``rim-rotation`` (rotation of radius ``radius`` about the y axis at
    angular rate ``rate``)."""

    kind: str
    velocity: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("translation-ramp", "rim-rotation"):
            raise ConfigurationError(f"unknown motion kind {self.kind!r}")
        self.velocity = tuple(float(v) for v in self.velocity)


@dataclass
class MotionBranch:
    sign: float
    weights: list
    motion: Motion


@dataclass
class ConstraintSpec:
    """``u = F * prod(factors) * I(t) + sum_k sign_k * prod(weights_k) * motion_k``."""

    factors: list = field(default_factory=list)
    initial: bool = False
    branches: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"factors": [asdict(f) for f in self.factors], "initial": self.initial,
                "branches": [{"sign": b.sign, "weights": [asdict(w) for w in b.weights],
                              "motion": asdict(b.motion)} for b in self.branches]}

    @classmethod
    def from_dict(cls, d: dict) -> "ConstraintSpec":
        def fac(x):
            return Factor(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in x.items()})

        return cls([fac(f) for f in d.get("factors", [])], bool(d.get("initial", False)),
                   [MotionBranch(float(b["sign"]), [fac(w) for w in b.get("weights", [])],
                                 Motion(**b["motion"])) for b in d.get("branches", [])])

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()

    def compile(self, domain, rotation=None) -> "CompiledConstraints":
        return CompiledConstraints(self, tuple(tuple(d) for d in domain), rotation)


def _column(j: Jet) -> Jet:
    return j[:, None]


def _components_jet(j: Jet, components) -> Jet:
    """Broadcast a scalar factor onto the selected columns of a (N, 3) jet; others are 1."""
    if tuple(components) == (0, 1, 2):
        return _column(j)
    one = Jet.constant(torch.ones_like(j.value))
    return dm.stack([j if c in components else one for c in range(3)], -1)


def factor_jet(f: Factor, x1: Jet, x2: Jet, domain) -> Jet:
    coords = (x1, x2)
    if f.kind == "gaussian":
        d2 = None
        for axis, c in enumerate(f.center):
            if c is None:
                continue
            term = dm.square(coords[axis] - c)
            d2 = term if d2 is None else d2 + term
        g = dm.exp(d2 * (-1.0 / f.sigma))
        return g if f.complement else 1.0 - g
    prod = None
    for k, axis in enumerate(f.axes):
        lo, hi = f.bounds[k] if f.bounds is not None else domain[axis]
        term = (coords[axis] - lo) * (hi - coords[axis])
        prod = term if prod is None else prod * term
    return prod


def prescribed_motion(motion: Motion, x1: Jet, t: Jet) -> Jet:
    """Closed-form motion as a (N, 3) jet."""
    if t is None:
        raise ConfigurationError("prescribed motions need a time input")
    if motion.kind == "translation-ramp":
        v = torch.tensor(motion.velocity, dtype=DTYPE)
        return Jet(t.value[:, None] * v, (None, None, t.d1[2][:, None] * v), (None, None, None))
    if motion.kind == "rim-rotation":
        ang = x1 + t * motion.rate
        zero = Jet.constant(torch.zeros_like(x1.value))
        r = motion.radius
        return dm.stack([(dm.cos(ang) - dm.cos(x1)) * r, zero, (dm.sin(ang) - dm.sin(x1)) * r], -1)
    raise ConfigurationError(f"unknown motion kind {motion.kind!r}")


def motion_value(kind: str, params: dict, xi, t) -> np.ndarray:
    """Plain-array convenience wrapper around :func:`prescribed_motion`."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    m = Motion(kind, **params)
    x1, _, tj = coordinate_jets(xi, np.broadcast_to(np.asarray(t, dtype=float), (xi.shape[0],)))
    return prescribed_motion(m, x1, tj).value.numpy()


class CompiledConstraints:
    """Constraint expression bound to a parametric domain."""

    def __init__(self, spec: ConstraintSpec, domain, rotation=None):
        self.spec = spec
        self.domain = domain
        self.rotation = None if rotation is None else torch.as_tensor(np.asarray(rotation), dtype=DTYPE)

    def envelope(self, x1, x2, t) -> Jet | None:
        """Product of all multiplicative factors and I(t), as a (N, 1) or (N, 3) jet."""
        env = None
        for f in self.spec.factors:
            fj = _components_jet(factor_jet(f, x1, x2, self.domain), f.components)
            env = fj if env is None else env * fj
        if self.spec.initial:
            if t is None:
                raise ConfigurationError("initial-condition factor needs a time input")
            i_t = _column(dm.square(t))
            env = i_t if env is None else env * i_t
        return env

    def motion(self, x1, x2, t) -> Jet | None:
        out = None
        for br in self.spec.branches:
            m = prescribed_motion(br.motion, x1, t)
            if self.rotation is not None:
                m = m.linear(self.rotation)
            for w in br.weights:
                m = m * _components_jet(factor_jet(w, x1, x2, self.domain), w.components)
            m = m * br.sign
            out = m if out is None else out + m
        return out

    def apply(self, raw: Jet, x1, x2, t, constrained: bool = True) -> Jet:
        if not constrained:
            # soft-constraint ablation: only the time envelope stays structural
            return raw * _column(dm.square(t)) if self.spec.initial else raw
        env = self.envelope(x1, x2, t)
        u = raw if env is None else raw * env
        m = self.motion(x1, x2, t)
        return u if m is None else u + m

    def target(self, xi, t) -> np.ndarray:
        """Prescribed displacement at constrained points (the motion branches alone)."""
        x1, x2, tj = coordinate_jets(xi, t)
        m = self.motion(x1, x2, tj)
        return np.zeros((len(xi), 3)) if m is None else m.value.detach().numpy()


@dataclass
class FieldModel:
    config: SirenConfig
    embedding: InputEmbedding
    constraints: CompiledConstraints
    hard_constraints: bool = True


def eval_ndf(xi, t, phi, weights: NdfWeights, model: FieldModel) -> Jet:
    """Constrained displacement jet ``u(xi, t; Theta, Phi)``."""
    x1, x2, tj = coordinate_jets(xi, t)
    inp = embed_inputs(xi, t, phi, model.embedding)
    raw = network(inp, weights, model.config)
    return model.constraints.apply(raw, x1, x2, tj, model.hard_constraints)


def displacement(xi, t, phi, weights: NdfWeights, model: FieldModel) -> np.ndarray:
    """Displacement values only (no gradient tracking)."""
    with torch.no_grad():
        return eval_ndf(xi, t, phi, weights, model).value.numpy()


# ---------------------------------------------------------------------------
# NDF1 checkpoint
# ---------------------------------------------------------------------------

MAGIC = b"NDF1"
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}


@dataclass
class CheckpointHeader:
    config: SirenConfig
    domain: tuple
    horizon: float | None
    digest: bytes
    scenario: dict


def save_checkpoint(path, weights: NdfWeights, config: SirenConfig, embedding: InputEmbedding,
                    constraints: ConstraintSpec, scenario: dict | None = None) -> Path:
    """Write an NDF1 file: header, then float32 weights layer by layer (W row-major, then b)."""
    path = Path(path)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<7I", config.in_features, config.hidden_layers, config.hidden_width,
                          config.out_features, config.seed & 0xFFFFFFFF, _ACT_CODE[config.activation],
                          0 if embedding.horizon is None else 1))
    buf.write(struct.pack("<2d", config.omega0, config.output_scale))
    (l1, h1), (l2, h2) = embedding.domain
    buf.write(struct.pack("<5d", l1, h1, l2, h2, embedding.horizon or 0.0))
    buf.write(constraints.digest())
    blob = json.dumps(scenario or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for w, b in zip(weights.weights, weights.biases):
        buf.write(w.detach().numpy().astype("<f4").tobytes(order="C"))
        buf.write(b.detach().numpy().astype("<f4").tobytes())
    try:
        path.write_bytes(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path, constraints: ConstraintSpec | None = None) -> tuple[NdfWeights, CheckpointHeader]:
    """Read an NDF1 file. With ``constraints`` given, the stored digest must match."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointMismatch(f"{path}: not an NDF1 checkpoint")
    off = 4
    n_in, layers, width, n_out, seed, act, dyn = struct.unpack_from("<7I", data, off)
    off += 28
    omega0, scale = struct.unpack_from("<2d", data, off)
    off += 16
    l1, h1, l2, h2, horizon = struct.unpack_from("<5d", data, off)
    off += 40
    digest = data[off:off + 32]
    off += 32
    (n_blob,) = struct.unpack_from("<I", data, off)
    off += 4
    scenario = json.loads(data[off:off + n_blob].decode())
    off += n_blob
    config = SirenConfig(n_in, layers, width, omega0, n_out, seed, ACTIVATIONS[act], scale)
    if constraints is not None and constraints.digest() != digest:
        raise CheckpointMismatch(f"{path}: constraint digest does not match the scenario")
    ws, bs = [], []
    widths = config.widths
    for i in range(len(widths) - 1):
        nw = widths[i + 1] * widths[i]
        w = np.frombuffer(data, "<f4", nw, off).reshape(widths[i + 1], widths[i])
        off += 4 * nw
        b = np.frombuffer(data, "<f4", widths[i + 1], off)
        off += 4 * widths[i + 1]
        ws.append(torch.tensor(w.astype(np.float64), requires_grad=True))
        bs.append(torch.tensor(b.astype(np.float64), requires_grad=True))
    if off != len(data):
        raise CheckpointMismatch(f"{path}: {len(data) - off} trailing bytes")
    header = CheckpointHeader(config, ((l1, h1), (l2, h2)), horizon if dyn else None, digest, scenario)
    return NdfWeights(ws, bs), header


def weights_from_arrays(layers: Sequence[tuple]) -> NdfWeights:
    return NdfWeights([torch.tensor(np.asarray(w, dtype=float), requires_grad=True) for w, _ in layers],
                      [torch.tensor(np.asarray(b, dtype=float), requires_grad=True) for _, b in layers])
