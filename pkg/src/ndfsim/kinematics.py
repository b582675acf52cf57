"""Kirchhoff-Love membrane and bending strains.

Index layout follows :mod:`ndfsim.geometry`: ``phi[n, al, la]`` is
``phi_{al la}``, ``phi3[n, al]`` is ``phi_{al 3}`` and a trailing axis is the
differentiation direction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .diffmath import Jet
from .errors import DegenerateSurfaceError
from .geometry import SurfaceFrame, SurfaceSpec, eval_reference, frame, to_covariant


@dataclass
class CovariantField:
    """Covariant displacement components and their xi-derivatives.

    ``u[n, i]``, ``du[n, i, al]``, ``ddu[n, i, al, be]`` for ``i`` in (1, 2, 3).
    """

    u: torch.Tensor
    du: torch.Tensor
    ddu: torch.Tensor


@dataclass
class DeformationGradients:
    phi: torch.Tensor           # phi_{al la}
    phi3: torch.Tensor          # phi_{al 3}
    phi_mixed: torch.Tensor     # phi_be^la
    phi3_up: torch.Tensor       # phi^la_3
    cov_phi: torch.Tensor       # phi_{al la}|_be, indexed [n, al, la, be]
    cov_phi3: torch.Tensor      # phi_{al 3}|_be, indexed [n, al, be]
    b: torch.Tensor
    b_mixed: torch.Tensor


@dataclass
class StrainState:
    eps: torch.Tensor    # (N, 2, 2)
    kappa: torch.Tensor  # (N, 2, 2)

    @property
    def eps_flat(self):
        return self.eps.reshape(-1, 4)

    @property
    def kappa_flat(self):
        return self.kappa.reshape(-1, 4)


def _slot(x, ref):
    return torch.zeros_like(ref) if x is None else x


def covariant_field(fr: SurfaceFrame, u: Jet) -> CovariantField:
    """Covariant components of a Cartesian displacement jet, with basis derivatives included."""
    comps = to_covariant(fr, u)
    vals, d1s, d2s = [], [], []
    for c in comps:
        ref = c.value
        vals.append(ref)
        d1s.append(torch.stack([_slot(c.d1[0], ref), _slot(c.d1[1], ref)], -1))
        d11, d12, d22 = (_slot(c.d2[k], ref) for k in range(3))
        d2s.append(torch.stack([torch.stack([d11, d12], -1), torch.stack([d12, d22], -1)], -2))
    return CovariantField(torch.stack(vals, -1), torch.stack(d1s, 1), torch.stack(d2s, 1))


def deformation_gradients(fr: SurfaceFrame, cf: CovariantField) -> DeformationGradients:
    g = fr.tensor
    gamma, dgamma = g("gamma"), g("dgamma")
    b, db = g("b"), g("db")
    bm, dbm = g("b_mixed"), g("db_mixed")
    ginv = g("metric_inv")

    u2, u3 = cf.u[:, :2], cf.u[:, 2]
    du2, du3 = cf.du[:, :2], cf.du[:, 2]
    ddu2, ddu3 = cf.ddu[:, :2], cf.ddu[:, 2]

    # u_la|al - b_al la u3, with du2[n, la, al] = u_{la,al}
    phi = (du2.transpose(1, 2) - torch.einsum("nm,nmla->nal", u2, gamma)
           - b * u3[:, None, None])
    phi3 = du3 + torch.einsum("nal,nl->na", bm, u2)

    dphi = (ddu2.permute(0, 2, 1, 3)
            - torch.einsum("nmb,nmla->nalb", du2, gamma)
            - torch.einsum("nm,nmlab->nalb", u2, dgamma)
            - db * u3[:, None, None, None]
            - b[..., None] * du3[:, None, None, :])
    dphi3 = (ddu3 + torch.einsum("nalb,nl->nab", dbm, u2)
             + torch.einsum("nal,nlb->nab", bm, du2))

    cov_phi = (dphi - torch.einsum("nml,nmab->nalb", phi, gamma)
               - torch.einsum("nam,nmlb->nalb", phi, gamma))
    cov_phi3 = dphi3 - torch.einsum("nm,nmab->nab", phi3, gamma)

    phi_mixed = torch.einsum("nbm,nml->nbl", phi, ginv)
    phi3_up = torch.einsum("nm,nml->nl", phi3, ginv)
    return DeformationGradients(phi, phi3, phi_mixed, phi3_up, cov_phi, cov_phi3, b, bm)


def membrane_strain(gr: DeformationGradients, nonlinear: bool = True) -> torch.Tensor:
    eps = gr.phi + gr.phi.transpose(1, 2)
    if nonlinear:
        eps = eps + torch.einsum("nal,nbl->nab", gr.phi, gr.phi_mixed) + gr.phi3[:, :, None] * gr.phi3[:, None, :]
    return 0.5 * eps


def bending_strain(gr: DeformationGradients, nonlinear: bool = True) -> torch.Tensor:
    kappa = -gr.cov_phi3 - torch.einsum("nbl,nal->nab", gr.b_mixed, gr.phi)
    if nonlinear:
        inner = (gr.cov_phi
                 + 0.5 * gr.b[:, :, None, :] * gr.phi3[:, None, :, None]
                 - gr.b.transpose(1, 2)[:, None, :, :] * gr.phi3[:, :, None, None])
        # inner[n, al, la, be] = phi_{al la}|be + b_{al be} phi_{la 3}/2 - b_{be la} phi_{al 3}
        kappa = kappa + torch.einsum("nl,nalb->nab", gr.phi3_up, inner)
    return 0.5 * (kappa + kappa.transpose(1, 2))


def strains(fr: SurfaceFrame, u: Jet, nonlinear: bool = True) -> StrainState:
    gr = deformation_gradients(fr, covariant_field(fr, u))
    return StrainState(membrane_strain(gr, nonlinear), bending_strain(gr, nonlinear))


def projected_gradients(fr: SurfaceFrame, u: Jet) -> tuple[torch.Tensor, torch.Tensor]:
    """``phi_{al la} = u_{,al} . a_la`` and ``phi_{al 3} = u_{,al} . a_3`` by direct projection."""
    du = torch.stack([_slot(u.d1[0], u.value), _slot(u.d1[1], u.value)], 1)  # [n, al, i]
    phi = torch.einsum("nai,nli->nal", du, fr.tensor("a"))
    phi3 = torch.einsum("nai,ni->na", du, fr.tensor("normal"))
    return phi, phi3


# ---------------------------------------------------------------------------
# fundamental-form oracle
# ---------------------------------------------------------------------------

_D1 = (np.array([1, -8, 0, 8, -1]) / 12.0)
_D2 = (np.array([-1, 16, -30, 16, -1]) / 12.0)
_OFF = np.array([-2, -1, 0, 1, 2])


def strain_oracle(spec: SurfaceSpec, xi, field, step: float = 1e-5, step2: float = 1e-3):
    """Strains from the deformed fundamental forms.

    ``field`` maps an ``(M, 2)`` array of coordinates to Cartesian
    displacements ``(M, 3)``. Tangent derivatives use 4th-order central
    differences with spacing ``step`` times the domain extent, second
    derivatives ``step2`` times the extent. Returns ``(eps, kappa)`` as
    ``(N, 2, 2)`` arrays.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n = len(xi)
    ext = np.array([hi - lo for lo, hi in spec.domain])
    _, a_bar, x2_bar, _ = eval_reference(spec, xi)
    fr = frame(spec, xi)

    def shifted(offsets):
        return np.asarray(field(xi + offsets), dtype=float)

    h1 = step * ext
    du = np.zeros((n, 2, 3))
    for al in range(2):
        e = np.zeros(2)
        e[al] = h1[al]
        du[:, al] = sum(c * shifted(o * e) for c, o in zip(_D1, _OFF) if c != 0) / h1[al]

    h2 = step2 * ext
    ddu = np.zeros((n, 2, 2, 3))
    for al in range(2):
        e = np.zeros(2)
        e[al] = h2[al]
        ddu[:, al, al] = sum(c * shifted(o * e) for c, o in zip(_D2, _OFF)) / h2[al] ** 2
    e1 = np.array([h2[0], 0.0])
    e2 = np.array([0.0, h2[1]])
    mixed = np.zeros((n, 3))
    for ci, oi in zip(_D1, _OFF):
        if ci == 0:
            continue
        for cj, oj in zip(_D1, _OFF):
            if cj == 0:
                continue
            mixed += ci * cj * shifted(oi * e1 + oj * e2)
    ddu[:, 0, 1] = ddu[:, 1, 0] = mixed / (h2[0] * h2[1])

    a = a_bar + du
    cross = np.cross(a[:, 0], a[:, 1])
    norm = np.linalg.norm(cross, axis=-1)
    if np.any(norm < 1e-12):
        raise DegenerateSurfaceError("deformed tangents are parallel")
    normal = cross / norm[:, None]
    metric = np.einsum("nai,nbi->nab", a, a)
    b = np.einsum("nabi,ni->nab", x2_bar + ddu, normal)
    eps = 0.5 * (metric - fr.metric)
    kappa = fr.b - b
    return eps, kappa
