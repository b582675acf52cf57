"""Wavefront OBJ export of the deformed midsurface."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import Problem
from .errors import ConfigurationError
from .geometry import eval_reference
from .ndf import NdfWeights, displacement


def grid_coordinates(domain, n1: int, n2: int, periodic=(), seam: str = "duplicate"):
    """Parameter grid ``lo + (hi - lo) * (i / (n - 1))``.

    With ``seam="wrap"`` a periodic axis drops its duplicate last column
    and uses spacing ``(hi - lo) / n`` instead.
    """
    axes = []
    for axis, n in enumerate((n1, n2)):
        lo, hi = domain[axis]
        i = np.arange(n, dtype=float)
        if axis in periodic and seam == "wrap":
            axes.append(lo + (hi - lo) * (i / n))
        else:
            axes.append(lo + (hi - lo) * (i / (n - 1)))
    g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.stack([g1, g2], -1)


def grid_faces(n1: int, n2: int, wrap1: bool = False, wrap2: bool = False) -> np.ndarray:
    """Quad-split triangles over an ``n1 x n2`` vertex grid (row-major, 0-based)."""
    faces = []
    m1 = n1 if wrap1 else n1 - 1
    m2 = n2 if wrap2 else n2 - 1
    for i in range(m1):
        for j in range(m2):
            a = i * n2 + j
            b = ((i + 1) % n1) * n2 + j
            c = ((i + 1) % n1) * n2 + (j + 1) % n2
            d = i * n2 + (j + 1) % n2
            faces += [(a, b, c), (a, c, d)]
    return np.asarray(faces, dtype=int)


def write_obj(path, vertices: np.ndarray, uvs: np.ndarray, faces: np.ndarray):
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in vertices]
    lines += [f"vt {u:.17g} {v:.17g}" for u, v in uvs]
    lines += [f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}" for a, b, c in faces]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write mesh {path}: {exc}") from exc


def read_obj_vertices(path) -> np.ndarray:
    rows = [ln.split()[1:4] for ln in Path(path).read_text().splitlines() if ln.startswith("v ")]
    return np.asarray(rows, dtype=float)


def frame_times(problem: Problem, frames: int, fps: float | None = None) -> np.ndarray:
    if not problem.dynamic:
        return np.zeros(1)
    if fps:
        return np.arange(frames) / fps
    T = problem.horizon
    return np.linspace(0.0, T, frames) if frames > 1 else np.zeros(1)


def export_meshes(weights: NdfWeights, problem: Problem, grid: tuple[int, int], frames: int, out_dir,
                  fps: float | None = None, seam: str = "duplicate", phi: dict | None = None) -> list[Path]:
    """Write ``frame_%04d.obj`` files of ``x_bar(xi) + u(xi, t_k)``.

    UVs are the normalized parameters. Periodic axes either duplicate the
    seam column (``seam="duplicate"``, the last column coincides with the
    first) or close the seam by index wrap (``seam="wrap"``).
    """
    n1, n2 = grid
    if n1 < 2 or n2 < 2 or frames < 1:
        raise ConfigurationError("grid needs >= 2 points per axis and frames >= 1")
    if seam not in ("duplicate", "wrap"):
        raise ConfigurationError(f"unknown seam mode {seam!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    surf = problem.surface
    periodic = tuple(surf.periodic)
    xi = grid_coordinates(surf.domain, n1, n2, periodic, seam).reshape(-1, 2)
    x_bar = eval_reference(surf, xi)[0]
    (l1, h1), (l2, h2) = surf.domain
    uv = np.stack([(xi[:, 0] - l1) / (h1 - l1), (xi[:, 1] - l2) / (h2 - l2)], -1)
    wrap = seam == "wrap"
    faces = grid_faces(n1, n2, wrap and 0 in periodic, wrap and 1 in periodic)
    if phi is None and problem.model.embedding.material_ranges:
        phi = problem.material.as_dict()
    paths = []
    for k, t in enumerate(frame_times(problem, frames, fps)):
        tt = np.full(len(xi), t) if problem.dynamic else None
        u = displacement(xi, tt, phi, weights, problem.model)
        p = out / f"frame_{k:04d}.obj"
        write_obj(p, x_bar + u, uv, faces)
        paths.append(p)
    return paths
