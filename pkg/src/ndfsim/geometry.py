"""Analytic reference midsurfaces and their differential geometry.

All quantities are batched over sample points: a coordinate array of shape
``(N, 2)`` yields arrays with a leading ``N`` axis. Index conventions used in
the array shapes below:

* ``a[n, al]`` -- covariant tangent ``a_al`` (3-vector in the last axis)
* ``da[n, al, be]`` -- ``a_{al,be} = x_{,al be}``
* ``gamma[n, la, al, be]`` -- Christoffel symbol ``Gamma^la_{al be}``
* ``b_mixed[n, al, la]`` -- ``b_al^la = b_{al mu} a^{mu la}``
* a trailing extra axis ``g`` on a derivative array is the differentiation
  direction ``xi^g``.

Symmetric 2x2 tensors are flattened in the order (11, 12, 21, 22).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSurfaceError, DomainError

SURFACE_KINDS = ("plane", "cylinder", "roof", "cone")


@dataclass
class SurfaceSpec:
    """Reference midsurface.

    ``params`` keys by kind: plane ``L``; cylinder ``R, L``; roof ``R, L,
    angle, offset`` (radians); cone ``R_top, R_bottom, L``. ``rotation`` and
    ``translation`` place the surface rigidly in world space (pose edits).
    """

    kind: str
    params: dict
    domain: tuple = None
    periodic: tuple = ()
    rotation: np.ndarray | None = None
    translation: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SURFACE_KINDS:
            raise DomainError(f"unknown surface kind {self.kind!r}")
        if self.domain is None:
            self.domain = default_domain(self.kind, self.params)
        self.domain = tuple(tuple(float(v) for v in d) for d in self.domain)
        if not self.periodic and self.kind in ("cylinder", "cone"):
            self.periodic = (0,)
        self.periodic = tuple(self.periodic)

    @property
    def area(self) -> float:
        """Area of the parametric domain."""
        (l1, h1), (l2, h2) = self.domain
        return (h1 - l1) * (h2 - l2)

    def period(self, axis: int) -> float:
        lo, hi = self.domain[axis]
        return hi - lo

    def with_pose(self, rotation, translation) -> "SurfaceSpec":
        return SurfaceSpec(self.kind, dict(self.params), self.domain, self.periodic,
                           np.asarray(rotation, dtype=float), np.asarray(translation, dtype=float))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "params": dict(self.params),
               "domain": [list(d) for d in self.domain], "periodic": list(self.periodic)}
        if self.rotation is not None:
            out["rotation"] = np.asarray(self.rotation).tolist()
        if self.translation is not None:
            out["translation"] = np.asarray(self.translation).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SurfaceSpec":
        rot = d.get("rotation")
        tr = d.get("translation")
        return cls(d["kind"], dict(d.get("params", {})), d.get("domain"), tuple(d.get("periodic", ())),
                   None if rot is None else np.asarray(rot, dtype=float),
                   None if tr is None else np.asarray(tr, dtype=float))


def default_domain(kind: str, p: dict):
    if kind == "plane":
        return ((0.0, p["L"]), (0.0, p["L"]))
    if kind in ("cylinder", "cone"):
        return ((0.0, 2 * math.pi), (0.0, p["L"]))
    if kind == "roof":
        return ((0.0, p["angle"]), (0.0, p["L"]))
    raise DomainError(kind)


# These helpers build the batched analytic derivatives of x(xi).

def _check_domain(spec: SurfaceSpec, xi: np.ndarray, tol=1e-9):
    for axis in range(2):
        if axis in spec.periodic:
            continue
        lo, hi = spec.domain[axis]
        span = hi - lo
        c = xi[:, axis]
        if np.any(c < lo - tol * span) or np.any(c > hi + tol * span):
            raise DomainError(f"xi{axis + 1} outside [{lo}, {hi}]")


def eval_reference(spec: SurfaceSpec, xi) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Position and partial derivatives up to order three.

    Returns ``x (N,3)``, ``dx (N,2,3)``, ``ddx (N,2,2,3)``, ``dddx (N,2,2,2,3)``.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    _check_domain(spec, xi)
    n = xi.shape[0]
    u, v = xi[:, 0], xi[:, 1]
    x = np.zeros((n, 3))
    dx = np.zeros((n, 2, 3))
    ddx = np.zeros((n, 2, 2, 3))
    dddx = np.zeros((n, 2, 2, 2, 3))
    p = spec.params
    zero = np.zeros(n)
    if spec.kind == "plane":
        x[:] = np.stack([u, v, zero], -1)
        dx[:, 0, 0] = 1.0
        dx[:, 1, 1] = 1.0
    elif spec.kind in ("cylinder", "cone"):
        if spec.kind == "cylinder":
            r = np.full(n, float(p["R"]))
            k = 0.0
        else:
            k = (p["R_top"] - p["R_bottom"]) / p["L"]
            r = k * v + p["R_bottom"]
        c, s = np.cos(u), np.sin(u)
        x[:] = np.stack([r * c, v, r * s], -1)
        dx[:, 0] = np.stack([-r * s, zero, r * c], -1)
        dx[:, 1] = np.stack([k * c, np.ones(n), k * s], -1)
        ddx[:, 0, 0] = np.stack([-r * c, zero, -r * s], -1)
        ddx[:, 0, 1] = ddx[:, 1, 0] = np.stack([-k * s, zero, k * c], -1)
        dddx[:, 0, 0, 0] = np.stack([r * s, zero, -r * c], -1)
        t = np.stack([-k * c, zero, -k * s], -1)
        dddx[:, 0, 0, 1] = dddx[:, 0, 1, 0] = dddx[:, 1, 0, 0] = t
    elif spec.kind == "roof":
        R = float(p["R"])
        ang = u + float(p.get("offset", math.radians(50.0)))
        c, s = np.cos(ang), np.sin(ang)
        x[:] = np.stack([R * c, R * s, v], -1)
        dx[:, 0] = np.stack([-R * s, R * c, zero], -1)
        dx[:, 1, 2] = 1.0
        ddx[:, 0, 0] = np.stack([-R * c, -R * s, zero], -1)
        dddx[:, 0, 0, 0] = np.stack([R * s, -R * c, zero], -1)
    if spec.rotation is not None:
        Q = np.asarray(spec.rotation, dtype=float)
        x = x @ Q.T
        dx = dx @ Q.T
        ddx = ddx @ Q.T
        dddx = dddx @ Q.T
    if spec.translation is not None:
        x = x + np.asarray(spec.translation, dtype=float)
    return x, dx, ddx, dddx


@dataclass
class SurfaceFrame:
    """Reference-geometry quantities at a batch of points (see module docstring)."""

    xi: np.ndarray
    x: np.ndarray
    a: np.ndarray
    da: np.ndarray
    dda: np.ndarray
    normal: np.ndarray
    dnormal: np.ndarray
    ddnormal: np.ndarray
    metric: np.ndarray
    metric_inv: np.ndarray
    dmetric_inv: np.ndarray
    contra: np.ndarray
    dcontra: np.ndarray
    b: np.ndarray
    db: np.ndarray
    b_mixed: np.ndarray
    db_mixed: np.ndarray
    gamma: np.ndarray
    dgamma: np.ndarray
    sqrt_a: np.ndarray
    _torch: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.x.shape[0]

    def tensor(self, name: str):
        """Cached float64 torch view of a field."""
        import torch

        if name not in self._torch:
            self._torch[name] = torch.from_numpy(np.ascontiguousarray(getattr(self, name)))
        return self._torch[name]


def frame(spec: SurfaceSpec, xi) -> SurfaceFrame:
    """Evaluate every reference-geometry quantity at ``xi`` (shape ``(N, 2)``)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    x, a, da, dda = eval_reference(spec, xi)
    cross = np.cross(a[:, 0], a[:, 1])
    sqrt_a = np.linalg.norm(cross, axis=-1)
    if np.any(sqrt_a < 1e-12):
        raise DegenerateSurfaceError("|a1 x a2| < 1e-12")
    n = cross / sqrt_a[:, None]

    metric = np.einsum("nai,nbi->nab", a, a)
    metric_inv = np.linalg.inv(metric)
    # dmetric[n, al, be, g] = a_{al,g}.a_be + a_al.a_{be,g}
    dmetric = np.einsum("nagi,nbi->nabg", da, a) + np.einsum("nai,nbgi->nabg", a, da)
    dmetric_inv = -np.einsum("nal,nlmg,nmb->nabg", metric_inv, dmetric, metric_inv)

    contra = np.einsum("nal,nli->nai", metric_inv, a)
    dcontra = np.einsum("nalg,nli->nagi", dmetric_inv, a) + np.einsum("nal,nlgi->nagi", metric_inv, da)

    b = np.einsum("nabi,ni->nab", da, n)
    # Weingarten: n_{,be} = -b_{be la} a^la
    dn = -np.einsum("nbl,nli->nbi", b, contra)
    db = np.einsum("nabgi,ni->nabg", dda, n) + np.einsum("nabi,ngi->nabg", da, dn)
    ddn = -(np.einsum("nblg,nli->nbgi", db, contra) + np.einsum("nbl,nlgi->nbgi", b, dcontra))

    b_mixed = np.einsum("nam,nml->nal", b, metric_inv)
    db_mixed = np.einsum("namg,nml->nalg", db, metric_inv) + np.einsum("nam,nmlg->nalg", b, dmetric_inv)

    gamma = np.einsum("nli,nabi->nlab", contra, da)
    dgamma = np.einsum("nlgi,nabi->nlabg", dcontra, da) + np.einsum("nli,nabgi->nlabg", contra, dda)

    return SurfaceFrame(xi=xi, x=x, a=a, da=da, dda=dda, normal=n, dnormal=dn, ddnormal=ddn,
                        metric=metric, metric_inv=metric_inv, dmetric_inv=dmetric_inv,
                        contra=contra, dcontra=dcontra, b=b, db=db, b_mixed=b_mixed,
                        db_mixed=db_mixed, gamma=gamma, dgamma=dgamma, sqrt_a=sqrt_a)


def flatten_sym(t):
    """(…, 2, 2) -> (…, 4) in the order (11, 12, 21, 22)."""
    return t.reshape(*t.shape[:-2], 4)


@dataclass
class ElasticityTensor:
    full: np.ndarray  # (N, 2, 2, 2, 2)

    @property
    def matrix(self) -> np.ndarray:
        """(N, 4, 4) in the flattening order (11, 12, 21, 22)."""
        return self.full.reshape(*self.full.shape[:-4], 4, 4)

    def component(self, a, b, c, d):
        return self.full[..., a - 1, b - 1, c - 1, d - 1]

    @property
    def independent(self) -> dict:
        return {k: self.component(*map(int, k)) for k in ("1111", "1112", "1122", "1212", "1222", "2222")}


def elasticity_parts(metric_inv):
    """Split H = nu * A + (1 - nu) * S with A, S built from the inverse metric."""
    lib = _lib(metric_inv)
    A = lib.einsum("nab,nld->nabld", metric_inv, metric_inv)
    S = 0.5 * (lib.einsum("nal,nbd->nabld", metric_inv, metric_inv)
               + lib.einsum("nad,nbl->nabld", metric_inv, metric_inv))
    return A, S


def elasticity_tensor(fr: SurfaceFrame | np.ndarray, nu: float) -> ElasticityTensor:
    """Isotropic in-plane elasticity tensor."""
    if not 0.0 <= nu < 0.5:
        raise DomainError(f"Poisson ratio {nu} outside [0, 0.5)")
    g = fr.metric_inv if isinstance(fr, SurfaceFrame) else fr
    A, S = elasticity_parts(g)
    return ElasticityTensor(nu * A + (1.0 - nu) * S)


def _lib(x):
    import torch

    return torch if isinstance(x, torch.Tensor) else np


def to_covariant(fr: SurfaceFrame, u):
    """Covariant components ``(u_1, u_2, u_3)`` of a Cartesian vector or vector jet.

    ``u_al = u . a_al`` and ``u_3 = u . a_3``. For a :class:`~ndfsim.diffmath.Jet`
    the basis is itself treated as a spatial jet, so derivative slots include
    the basis derivatives.
    """
    from .diffmath import Jet

    if not isinstance(u, Jet):
        u = np.asarray(u, dtype=float)
        a = fr.a if u.ndim == 2 else fr.a[0]
        n = fr.normal if u.ndim == 2 else fr.normal[0]
        return np.concatenate([np.einsum("...i,...ai->...a", u, a), np.sum(u * n, -1)[..., None]], -1)
    basis = basis_jets(fr, torch_backend=_is_torch(u.value))
    comps = []
    for e in basis:
        p = u * e
        comps.append(Jet(p.value.sum(-1), [None if d is None else d.sum(-1) for d in p.d1],
                         [None if d is None else d.sum(-1) for d in p.d2]))
    return comps


def _is_torch(x):
    import torch

    return isinstance(x, torch.Tensor)


def basis_jets(fr: SurfaceFrame, torch_backend: bool = True):
    """``a_1, a_2, a_3`` as spatial jets (value, xi-derivatives, no time dependence)."""
    from .diffmath import D2_PAIRS, Jet

    get = fr.tensor if torch_backend else (lambda name: getattr(fr, name))
    a, da, dda = get("a"), get("da"), get("dda")
    n, dn, ddn = get("normal"), get("dnormal"), get("ddnormal")
    out = []
    for al in range(2):
        out.append(Jet(a[:, al], (da[:, al, 0], da[:, al, 1], None),
                       [dda[:, al, p, q] for p, q in D2_PAIRS]))
    out.append(Jet(n, (dn[:, 0], dn[:, 1], None), [ddn[:, p, q] for p, q in D2_PAIRS]))
    return out


def force_components(fr: SurfaceFrame, f) -> np.ndarray:
    """Contravariant components ``(f^1, f^2, f^3)`` of a Cartesian force density."""
    f = np.asarray(f, dtype=float)
    f = np.broadcast_to(f, fr.x.shape)
    return np.concatenate([np.einsum("ni,nai->na", f, fr.contra), np.sum(f * fr.normal, -1)[:, None]], -1)
