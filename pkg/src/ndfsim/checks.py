"""Fast property harness behind ``ndfsim check``.

Every check builds its own tiny inputs, compares against an independent
route (finite differences, the fundamental-form oracle, the scalar tape,
closed forms) and returns a :class:`CheckResult`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import diffmath as dm
from .config import SamplingPlan
from .geometry import SurfaceSpec, frame
from .kinematics import strain_oracle, strains
from .ndf import (ConstraintSpec, Factor, FieldModel, InputEmbedding, Motion, MotionBranch, SirenConfig,
                  coordinate_jets, eval_ndf, init_siren, network)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.3g} (limit {self.threshold:.3g})"


SURFACES = {
    "plane": SurfaceSpec("plane", {"L": 1.0}),
    "cylinder": SurfaceSpec("cylinder", {"R": 0.25, "L": 1.0}),
    "cone": SurfaceSpec("cone", {"R_top": 0.25, "R_bottom": 0.5, "L": 1.0}),
}


def smooth_field(rng: np.random.Generator, spec: SurfaceSpec, modes: int = 3):
    """Random trigonometric displacement, as a jet function and a numpy function of amplitude."""
    ext = np.array([hi - lo for lo, hi in spec.domain])
    A = rng.normal(size=(modes, 3, 2)) * 2.0 / ext
    C = rng.uniform(0, 2 * math.pi, size=(modes, 3))
    W = rng.normal(size=(modes, 3)) / modes

    def as_jet(xi, s):
        x1, x2, _ = coordinate_jets(xi)
        cols = []
        for i in range(3):
            acc = None
            for m in range(modes):
                term = dm.sin(x1 * A[m, i, 0] + x2 * A[m, i, 1] + C[m, i]) * (s * W[m, i])
                acc = term if acc is None else acc + term
            cols.append(acc)
        return dm.stack(cols, -1)

    def as_array(xi, s):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros((len(xi), 3))
        for m in range(modes):
            out += s * W[m] * np.sin(np.einsum("ij,nj->ni", A[m], xi) + C[m])
        return out

    return as_jet, as_array


def interior_points(rng, spec: SurfaceSpec, n: int) -> np.ndarray:
    lo = np.array([d[0] for d in spec.domain])
    hi = np.array([d[1] for d in spec.domain])
    return lo + rng.uniform(0.1, 0.9, size=(n, 2)) * (hi - lo)


def check_jet_fd(seed: int = 0) -> CheckResult:
    torch.manual_seed(seed)
    cfg = SirenConfig(in_features=3, hidden_layers=2, hidden_width=8, seed=seed)
    w = init_siren(cfg)
    rprt = dm.check_derivatives(lambda x: network(x, w, cfg), [0.3, 0.6, 0.2], step=1e-4)
    worst = max(rprt.d1, rprt.d2)
    return CheckResult("jet derivatives vs central differences", worst < 1e-5, worst, 1e-5)


def check_tape_vs_torch(seed: int = 0) -> CheckResult:
    """Scalar tape gradients of a jet-built loss agree with torch autograd."""
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(3, 2)) * 0.5
    b = rng.normal(size=3) * 0.1
    x = np.array([0.3, 0.7])

    def loss(Wl, bl, lib_x):
        jet = dm.stack([dm.Jet.variable(lib_x[0], 0), dm.Jet.variable(lib_x[1], 1)], -1)
        out = dm.affine_sine(jet, Wl, bl, 15.0)
        total = out.value * out.value
        for d in out.d1[:2] + out.d2:
            total = total + d * d
        return total

    tape = dm.ParamTape()
    Wv = tape.parameter_array(W, "W")
    bv = tape.parameter_array(b, "b")
    xs = np.array([tape.constant(v) for v in x], dtype=object)
    t_loss = sum(loss(Wv, bv, xs))
    grads = tape.backward(t_loss)
    g_tape = np.array([grads[v.index] for v in list(Wv.ravel()) + list(bv)])

    Wt = torch.tensor(W, requires_grad=True)
    bt = torch.tensor(b, requires_grad=True)
    xt = torch.tensor(x)
    tl = loss(Wt, bt, xt).sum()
    gW, gb = torch.autograd.grad(tl, [Wt, bt])
    g_torch = np.concatenate([gW.numpy().ravel(), gb.numpy()])
    err = float(np.max(np.abs(g_tape - g_torch) / (np.abs(g_torch) + 1e-12)))
    return CheckResult("scalar tape vs torch autograd", err < 1e-10, err, 1e-10)


def check_loss_gradient(seed: int = 0, probes: int = 4) -> CheckResult:
    """Autograd gradient of the full training loss vs central differences (2 x 8 network)."""
    from dataclasses import replace

    from .energy import total_loss
    from .scenarios import get_scenario
    from .trainer import stratified_samples

    cfg = get_scenario("napkin-corner")
    cfg = replace(cfg, training=replace(cfg.training, hidden_layers=2, hidden_width=8, output_scale=1.0, seed=seed),
                  sampling=replace(cfg.sampling, n1=4, n2=4, nt=2))
    problem = cfg.compile()
    w = init_siren(problem.model.config)
    samples = stratified_samples(cfg.sampling, problem.surface.domain, problem.horizon, 0)
    loss = total_loss(w, problem, samples)
    grads = torch.autograd.grad(loss, w.parameters())
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(w.parameters(), grads):
            flat = p.view(-1)
            for k in rng.choice(flat.numel(), size=min(probes, flat.numel()), replace=False):
                old = float(flat[k])
                h = 1e-6 * max(1.0, abs(old))
                flat[k] = old + h
                lp = float(total_loss(w, problem, samples))
                flat[k] = old - h
                lm = float(total_loss(w, problem, samples))
                flat[k] = old
                gv = float(g.view(-1)[k])
                worst = max(worst, abs((lp - lm) / (2 * h) - gv) / max(abs(gv), 1e-8 * abs(float(loss))))
    return CheckResult("loss parameter gradient vs central differences", worst < 1e-4, worst, 1e-4)


def check_membrane_oracle(seed: int = 0, fields: int = 10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in SURFACES.values():
        for _ in range(fields):
            jet_f, arr_f = smooth_field(rng, spec)
            xi = interior_points(rng, spec, 4)
            st = strains(frame(spec, xi), jet_f(xi, 1e-2))
            eps, _ = strain_oracle(spec, xi, lambda p: arr_f(p, 1e-2))
            worst = max(worst, float(np.max(np.abs(st.eps.numpy() - eps))))
    return CheckResult("membrane strain vs fundamental forms", worst < 1e-7, worst, 1e-7)


def bending_ratio(spec, jet_f, arr_f, xi, s=1e-2) -> float:
    errs = []
    for amp in (s, s / 2):
        st = strains(frame(spec, xi), jet_f(xi, amp))
        _, kap = strain_oracle(spec, xi, lambda p: arr_f(p, amp))
        errs.append(float(np.max(np.abs(st.kappa.numpy() - kap))))
    return errs[0] / max(errs[1], 1e-300)


def check_bending_order(seed: int = 0, fields: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = math.inf
    for spec in SURFACES.values():
        for _ in range(fields):
            jet_f, arr_f = smooth_field(rng, spec)
            worst = min(worst, bending_ratio(spec, jet_f, arr_f, interior_points(rng, spec, 4)))
    return CheckResult("bending truncation ratio under halving", worst >= 6.0, worst, 6.0)


def check_rigid_translation(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in list(SURFACES.values()) + [SurfaceSpec("roof", {"R": 25.0, "L": 50.0, "angle": 80 * math.pi / 180,
                                                                "offset": 50 * math.pi / 180})]:
        xi = interior_points(rng, spec, 16)
        c = torch.as_tensor(rng.normal(size=3))
        u = dm.Jet(c.expand(len(xi), 3).clone())
        st = strains(frame(spec, xi), u)
        worst = max(worst, float(st.eps.abs().max()), float(st.kappa.abs().max()))
    return CheckResult("rigid translation gives zero strain", worst < 1e-12, worst, 1e-12)


def _constraint_models():
    spec = SurfaceSpec("cylinder", {"R": 0.25, "L": 1.0})
    emb = InputEmbedding(spec.domain, {0: 2 * math.pi}, 1.0)
    top, bottom = Factor("gaussian", (None, 1.0)), Factor("gaussian", (None, 0.0))
    still = ConstraintSpec([top, bottom], initial=True)
    twist = ConstraintSpec([top, bottom], initial=True, branches=[
        MotionBranch(1.0, [Factor("gaussian", (None, 0.0), complement=True)],
                     Motion("rim-rotation", radius=0.25, rate=-3 * math.pi / 4)),
        MotionBranch(1.0, [Factor("gaussian", (None, 1.0), complement=True)],
                     Motion("rim-rotation", radius=0.25, rate=3 * math.pi / 4))])
    return spec, [FieldModel(SirenConfig(emb.n_inputs, 2, 16), emb, c.compile(spec.domain)) for c in (still, twist)]


def check_hard_constraints(seed: int = 0, draws: int = 20) -> CheckResult:
    """Initial state, anchors (fixed and moving) and periodic seam hold for random weights.

    With prescribed motions the velocity at t=0 is the motion's own
    velocity; the learned part must contribute nothing, so the check
    compares against it.
    """
    spec, models = _constraint_models()
    rng = np.random.default_rng(seed)
    worst = 0.0
    n = 8
    for d in range(draws):
        model = models[d % 2]
        model.config.seed = seed * 100_000 + d
        w = init_siren(model.config)
        xi = interior_points(rng, spec, n)
        with torch.no_grad():
            zeros = np.zeros(n)
            u0 = eval_ndf(xi, zeros, None, w, model)
            x1, x2, tj = coordinate_jets(xi, zeros)
            m0 = model.constraints.motion(x1, x2, tj)
            v0 = u0.d1[2] if m0 is None else u0.d1[2] - m0.d1[2]
            worst = max(worst, float(u0.value.abs().max()), float(v0.abs().max()))
            rim = np.stack([xi[:, 0], np.where(np.arange(n) % 2 == 0, 0.0, 1.0)], -1)
            t = rng.uniform(0, 1, n)
            ub = eval_ndf(rim, t, None, w, model).value.numpy()
            target = model.constraints.target(rim, t)
            worst = max(worst, float(np.abs(ub - target).max()))
            seam_a = eval_ndf(np.stack([np.zeros(n), xi[:, 1]], -1), t, None, w, model)
            seam_b = eval_ndf(np.stack([np.full(n, 2 * math.pi), xi[:, 1]], -1), t, None, w, model)
            for a, b in zip([seam_a.value] + list(seam_a.d1) + list(seam_a.d2),
                            [seam_b.value] + list(seam_b.d1) + list(seam_b.d2)):
                worst = max(worst, float((a - b).abs().max()))
    return CheckResult("hard constraints (t=0, anchors, motions, seam)", worst < 1e-12, worst, 1e-12)


def check_small_rotation(seed: int = 0) -> CheckResult:
    """Rigid rotation: nonlinear membrane strain vanishes, linear strain is O(theta^2).

    Reports the halving ratio of the linear-mode error (4 for a
    quadratic error); fails if the nonlinear strain exceeds round-off.
    """
    from .geometry import eval_reference

    rng = np.random.default_rng(seed)
    ratios, worst_nl = [], 0.0
    for spec in SURFACES.values():
        xi = interior_points(rng, spec, 8)
        fr = frame(spec, xi)
        x, dx, ddx, _ = eval_reference(spec, xi)
        errs = []
        for theta in (1e-2, 5e-3):
            c, s = math.cos(theta), math.sin(theta)
            M = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]) - np.eye(3)
            u = dm.Jet(torch.as_tensor(x @ M.T),
                       tuple(torch.as_tensor(dx[:, a] @ M.T) for a in range(2)) + (None,),
                       tuple(torch.as_tensor(ddx[:, a, b] @ M.T) for a, b in ((0, 0), (0, 1), (1, 1))))
            worst_nl = max(worst_nl, float(strains(fr, u, True).eps.abs().max()))
            errs.append(float(strains(fr, u, False).eps.abs().max()))
        ratios.append(errs[0] / errs[1])
    worst_ratio = max(ratios, key=lambda r: abs(r - 4.0))
    ok = worst_nl < 1e-12 and abs(worst_ratio - 4.0) < 0.05
    return CheckResult("small rotation: nonlinear eps ~ 0, linear eps ~ theta^2", ok, worst_ratio, 4.0)


def check_adam_vs_torch(seed: int = 0) -> CheckResult:
    from .trainer import OptimState, adam_step

    g = torch.Generator().manual_seed(seed)
    p1 = torch.randn(5, 3, generator=g, dtype=torch.float64)
    p2 = p1.clone().requires_grad_(True)
    st = OptimState.zeros_like([p1], lr=1e-2)
    opt = torch.optim.Adam([p2], lr=1e-2, betas=(0.9, 0.999), eps=1e-8)
    for _ in range(20):
        grad = torch.randn(5, 3, generator=g, dtype=torch.float64)
        adam_step(st, [grad], [p1])
        p2.grad = grad.clone()
        opt.step()
    err = float((p1 - p2.detach()).abs().max())
    return CheckResult("in-house Adam vs torch.optim.Adam", err < 1e-12, err, 1e-12)


def check_stratified(seed: int = 0) -> CheckResult:
    from .trainer import stratified_samples

    plan = SamplingPlan(20, 20, 1, seed)
    xi, _ = stratified_samples(plan, ((0.0, 1.0), (0.0, 1.0)), None, 3)
    cells = np.floor(xi * 20).astype(int)
    counts = np.zeros((20, 20), dtype=int)
    np.add.at(counts, (cells[:, 0], cells[:, 1]), 1)
    bad = int(np.sum(counts != 1))
    return CheckResult("stratified sampling: one draw per cell", bad == 0, bad, 0)


CHECKS = (check_jet_fd, check_loss_gradient, check_tape_vs_torch, check_membrane_oracle, check_bending_order,
          check_rigid_translation, check_small_rotation, check_hard_constraints, check_adam_vs_torch, check_stratified)


def run_all() -> list[CheckResult]:
    return [c() for c in CHECKS]
