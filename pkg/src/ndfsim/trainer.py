"""Stratified sampling, Adam, the training loop and simulation editing."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .config import Problem, SamplingPlan
from .energy import LoadSpec, loss_and_field
from .errors import CheckpointMismatch, ConfigurationError, NumericAbort
from .ndf import NdfWeights, init_siren, load_checkpoint, save_checkpoint

CSV_HEADER = ("iteration", "loss", "mean_abs_u", "wall_ms")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def stratified_samples(plan: SamplingPlan, domain, horizon: float | None, iteration: int):
    """One uniform draw per (spatial cell x time stratum).

    Returns ``(xi, t)`` with ``xi`` of shape ``(n1*n2*nt, 2)`` and ``t`` of
    shape ``(n1*n2*nt,)``, or ``None`` when ``horizon`` is ``None`` (only
    the spatial grid is sampled then).
    """
    nt = plan.nt if horizon is not None else 1
    key = iteration if plan.resample else 0
    rng = np.random.default_rng([plan.seed, key])
    i, j, k = np.meshgrid(np.arange(plan.n1), np.arange(plan.n2), np.arange(nt), indexing="ij")
    cells = np.stack([i.ravel(), j.ravel(), k.ravel()], -1).astype(float)
    r = rng.uniform(size=cells.shape)
    (l1, h1), (l2, h2) = domain
    xi = np.stack([l1 + (cells[:, 0] + r[:, 0]) / plan.n1 * (h1 - l1),
                   l2 + (cells[:, 1] + r[:, 1]) / plan.n2 * (h2 - l2)], -1)
    t = None if horizon is None else (cells[:, 2] + r[:, 2]) / nt * horizon
    return xi, t


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "OptimState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params], **kw)


def adam_step(state: OptimState, grads, params) -> None:
    """One bias-corrected Adam update, applied in place."""
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ConfigurationError("gradient shapes do not match parameters")
    for g in grads:
        if not torch.isfinite(g).all():
            raise NumericAbort("non-finite gradient")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.sub_(state.lr * (m / c1) / ((v / c2).sqrt() + state.eps))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    iterations: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    mean_abs_u: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    checkpoint: Path | None = None
    stopped_early: bool = False

    def record(self, it, loss, mean_u, wall):
        if self.iterations and it <= self.iterations[-1]:
            raise ValueError("iteration indices must increase")
        self.iterations.append(it)
        self.loss.append(loss)
        self.mean_abs_u.append(mean_u)
        self.wall_ms.append(wall)


def boundary_points(problem: Problem, n: int = 32) -> np.ndarray:
    """Points on every constrained anchor, used by the soft-constraint ablation."""
    dom = problem.surface.domain
    pts = []
    lin = [np.linspace(lo, hi, n) for lo, hi in dom]
    spec = problem.config.constraints
    for f in list(spec.factors) + [w for b in spec.branches for w in b.weights]:
        if f.kind == "gaussian":
            c = f.center
            if c[0] is not None and c[1] is not None:
                pts.append(np.array([c]))
            elif c[0] is not None:
                pts.append(np.stack([np.full(n, c[0]), lin[1]], -1))
            else:
                pts.append(np.stack([lin[0], np.full(n, c[1])], -1))
        else:
            for k, axis in enumerate(f.axes):
                lo, hi = f.bounds[k] if f.bounds else dom[axis]
                other = lin[1 - axis]
                for c in (lo, hi):
                    col = [None, None]
                    col[axis] = np.full(n, c)
                    col[1 - axis] = other
                    pts.append(np.stack(col, -1))
    return np.concatenate(pts) if pts else np.zeros((0, 2))


def _penalty(weights, problem: Problem, bpts, t_samples, material):
    from .ndf import eval_ndf

    if len(bpts) == 0:
        return 0.0
    if problem.dynamic:
        t = np.resize(t_samples, len(bpts))
    else:
        t = None
    phi = material.as_dict() if problem.model.embedding.material_ranges else None
    u = eval_ndf(bpts, t, phi, weights, problem.model).value
    target = torch.as_tensor(problem.model.constraints.target(bpts, t if t is not None else np.zeros(len(bpts))))
    # soft mode pins every component at every anchor
    return problem.config.training.penalty_weight * ((u - target) ** 2).sum(-1).mean()


def _snapshot(it, samples, weights):
    xi, t = samples
    return {"iteration": it, "xi": xi.copy(), "t": None if t is None else t.copy(),
            "parameter_norms": weights.norms()}


def train(problem: Problem, plan: SamplingPlan | None = None, iterations: int | None = None,
          weights: NdfWeights | None = None, lr: float | None = None,
          metrics_path=None, checkpoint_dir=None, checkpoint_every: int | None = None,
          schedule: Callable[[int], Problem] | None = None, plateau: bool = False,
          deterministic: bool = True, callback: Callable | None = None,
          start_iteration: int = 0) -> tuple[NdfWeights, TrainReport]:
    """Minimize the energy loss with Adam.

    ``schedule(i)`` may return a modified problem per iteration (editing).
    Metrics are appended to ``metrics_path`` as CSV. With
    ``checkpoint_dir`` set, an NDF1 file is written every
    ``checkpoint_every`` iterations and at the end.
    """
    plan = plan or problem.config.sampling
    iterations = problem.config.training.iterations if iterations is None else iterations
    weights = init_siren(problem.model.config) if weights is None else weights
    params = weights.parameters()
    state = OptimState.zeros_like(params, lr=problem.config.training.lr if lr is None else lr)
    report = TrainReport()
    every = problem.config.training.checkpoint_every if checkpoint_every is None else checkpoint_every
    prior_threads = torch.get_num_threads()
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    writer, fh = None, None
    if metrics_path is not None:
        metrics_path = Path(metrics_path)
        fresh = not metrics_path.exists() or metrics_path.stat().st_size == 0
        fh = metrics_path.open("a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(CSV_HEADER)
    soft = not problem.model.hard_constraints
    bpts = boundary_points(problem) if soft else None
    smooth, history = None, []
    t0 = time.perf_counter()
    try:
        for i in range(iterations):
            it = start_iteration + i
            prob = schedule(i) if schedule is not None else problem
            samples = stratified_samples(plan, prob.surface.domain, prob.horizon, it)
            material = prob.material
            if prob.material_range is not None:
                material = prob.material_range.sample(np.random.default_rng([plan.seed, it, 1]))
            loss, u = loss_and_field(weights, prob, samples, material)
            if soft:
                loss = loss + _penalty(weights, prob, bpts, samples[1], material)
            if not torch.isfinite(loss):
                raise NumericAbort(f"non-finite loss at iteration {it}", _snapshot(it, samples, weights))
            grads = torch.autograd.grad(loss, params)
            try:
                adam_step(state, list(grads), params)
            except NumericAbort as exc:
                raise NumericAbort(f"{exc} at iteration {it}", _snapshot(it, samples, weights)) from None
            mean_u = float(u.value.detach().norm(dim=-1).mean())
            wall = (time.perf_counter() - t0) * 1e3
            report.record(it, float(loss.detach()), mean_u, wall)
            if writer is not None:
                writer.writerow([it, repr(float(loss.detach())), repr(mean_u), f"{wall:.3f}"])
            if callback is not None:
                callback(it, weights, report)
            if checkpoint_dir is not None and every and (i + 1) % every == 0:
                report.checkpoint = _write_checkpoint(checkpoint_dir, it + 1, weights, prob)
            if plateau:
                smooth = mean_u if smooth is None else 0.98 * smooth + 0.02 * mean_u
                history.append(smooth)
                if len(history) > 200:
                    old = history[-201]
                    if old > 0 and abs(smooth - old) / old < 1e-4:
                        report.stopped_early = True
                        break
        if checkpoint_dir is not None:
            report.checkpoint = _write_checkpoint(checkpoint_dir, start_iteration + len(report.iterations),
                                                  weights, problem)
    finally:
        if fh is not None:
            fh.close()
        if deterministic:
            torch.set_num_threads(prior_threads)
            torch.use_deterministic_algorithms(False)
    return weights, report


def _write_checkpoint(directory, step, weights, problem: Problem) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    return save_checkpoint(d / f"ckpt_{step:06d}.ndf", weights, problem.model.config,
                           problem.model.embedding, problem.config.constraints, problem.config.to_dict())


# ---------------------------------------------------------------------------
# editing
# ---------------------------------------------------------------------------

@dataclass
class Edit:
    """Target scene parameters: a force (load) and/or a rigid reference pose."""

    load: LoadSpec | None = None
    rotation: np.ndarray | None = None
    translation: np.ndarray | None = None


def _as_constant(load: LoadSpec, problem: Problem) -> LoadSpec:
    if load.kind == "gravity":
        return LoadSpec("constant", (0.0, -load.g * problem.material.rho, 0.0))
    return load


def edit_schedule(problem: Problem, edit: Edit, iterations: int) -> Callable[[int], Problem]:
    """Scene at edit step ``i``: ``lerp(original, target, i / I)``.

    Poses interpolate translation linearly and rotation by slerp.
    """
    from scipy.spatial.transform import Rotation, Slerp

    base_load = problem.load
    target_load = edit.load
    if target_load is not None and target_load.kind != base_load.kind:
        base_load, target_load = _as_constant(base_load, problem), _as_constant(target_load, problem)
    slerp = None
    if edit.rotation is not None or edit.translation is not None:
        r0 = problem.surface.rotation if problem.surface.rotation is not None else np.eye(3)
        r1 = edit.rotation if edit.rotation is not None else r0
        t0 = problem.surface.translation if problem.surface.translation is not None else np.zeros(3)
        t1 = edit.translation if edit.translation is not None else t0
        slerp = Slerp([0.0, 1.0], Rotation.from_matrix(np.stack([r0, r1])))

    def scene(i: int) -> Problem:
        s = min(max(i / iterations, 0.0), 1.0) if iterations > 0 else 1.0
        prob = problem
        if target_load is not None:
            prob = prob.with_load(base_load.lerp(target_load, s))
        if slerp is not None:
            prob = prob.with_pose(slerp([s]).as_matrix()[0], (1 - s) * np.asarray(t0) + s * np.asarray(t1))
        return prob

    return scene


@dataclass
class EditResult:
    weights: NdfWeights
    report: TrainReport
    snapshots: list  # (iteration, NdfWeights) pairs
    schedule: Callable


def fine_tune_edit(pretrained, problem: Problem, edit: Edit, iterations: int,
                   plan: SamplingPlan | None = None, snapshot_every: int = 0, lr: float | None = None,
                   ramp: int | None = None, callback: Callable | None = None, **train_kw) -> EditResult:
    """Fine-tune a trained field toward interpolated scene parameters.

    ``pretrained`` is an :class:`NdfWeights` or an NDF1 checkpoint path; a
    checkpoint must match the problem's network configuration and
    constraint digest. The scene is interpolated over the first ``ramp``
    iterations (default: all of them) and held at the target afterwards.
    """
    if isinstance(pretrained, (str, Path)):
        weights, header = load_checkpoint(pretrained, problem.config.constraints)
        if header.config != problem.model.config:
            raise CheckpointMismatch(f"{pretrained}: network configuration differs from the scenario")
    else:
        weights = pretrained.clone()
    schedule = edit_schedule(problem, edit, iterations if ramp is None else ramp)
    snapshots = []

    def keep(it, w, rep):
        if snapshot_every and (it + 1) % snapshot_every == 0:
            snapshots.append((it + 1, w.clone()))
        if callback is not None:
            callback(it, w, rep)

    weights, report = train(problem, plan, iterations, weights, lr=lr, schedule=schedule, callback=keep, **train_kw)
    return EditResult(weights, report, snapshots, schedule)

