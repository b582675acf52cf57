import csv
import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import tiny_config
from ndfsim.config import SamplingPlan
from ndfsim.energy import LoadSpec
from ndfsim.errors import CheckpointMismatch, ConfigurationError, NumericAbort
from ndfsim.ndf import displacement, init_siren, load_checkpoint
from ndfsim.trainer import (CSV_HEADER, Edit, OptimState, TrainReport, adam_step, boundary_points, edit_schedule,
                            fine_tune_edit, stratified_samples, train)


def test_single_cell_sample():
    xi, t = stratified_samples(SamplingPlan(1, 1, 1, 0), ((0.0, 2.0), (1.0, 3.0)), 5.0, 0)
    assert xi.shape == (1, 2) and 0 <= xi[0, 0] < 2 and 1 <= xi[0, 1] < 3 and 0 <= t[0] < 5


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 5), st.integers(0, 99), st.integers(0, 999))
def test_one_draw_per_cell(n1, n2, nt, seed, it):
    plan = SamplingPlan(n1, n2, nt, seed)
    xi, t = stratified_samples(plan, ((0.0, 1.0), (-1.0, 1.0)), 2.0, it)
    cell = (np.floor(xi[:, 0] * n1).astype(int), np.floor((xi[:, 1] + 1) / 2 * n2).astype(int),
            np.floor(t / 2 * nt).astype(int))
    counts = np.zeros((n1, n2, nt), int)
    np.add.at(counts, cell, 1)
    assert (counts == 1).all()
    xi2, t2 = stratified_samples(plan, ((0.0, 1.0), (-1.0, 1.0)), 2.0, it)
    np.testing.assert_array_equal(xi, xi2)
    np.testing.assert_array_equal(t, t2)


def test_resample_flag():
    dom = ((0.0, 1.0), (0.0, 1.0))
    a, _ = stratified_samples(SamplingPlan(4, 4, 1, 0), dom, None, 0)
    b, _ = stratified_samples(SamplingPlan(4, 4, 1, 0), dom, None, 1)
    c, _ = stratified_samples(SamplingPlan(4, 4, 1, 0, resample=False), dom, None, 1)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, c)


def test_quasi_static_samples_have_no_time():
    xi, t = stratified_samples(SamplingPlan(3, 3, 8, 0), ((0.0, 1.0), (0.0, 1.0)), None, 0)
    assert t is None and len(xi) == 9


def _params(seed=0):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(4, 3, generator=g, dtype=torch.float64), torch.randn(3, generator=g, dtype=torch.float64)]


def test_adam_zero_gradient_and_zero_lr():
    p = _params()
    ref = [x.clone() for x in p]
    st_ = OptimState.zeros_like(p)
    for _ in range(5):
        adam_step(st_, [torch.zeros_like(x) for x in p], p)
    assert all(torch.equal(a, b) for a, b in zip(p, ref))
    st_ = OptimState.zeros_like(p, lr=0.0)
    adam_step(st_, [torch.ones_like(x) for x in p], p)
    assert all(torch.equal(a, b) for a, b in zip(p, ref))


def test_adam_constant_gradient_step_is_lr():
    p = _params()
    st_ = OptimState.zeros_like(p, lr=1e-3)
    g = [torch.full_like(x, 2.5) for x in p]
    for _ in range(200):
        before = p[0].clone()
        adam_step(st_, g, p)
    step = float((before - p[0]).abs().max())
    assert step == pytest.approx(1e-3, rel=1e-6)


def test_adam_matches_torch():
    p = _params(1)
    q = [x.clone().requires_grad_(True) for x in p]
    st_ = OptimState.zeros_like(p, lr=3e-3)
    opt = torch.optim.Adam(q, lr=3e-3)
    g = torch.Generator().manual_seed(9)
    for _ in range(50):
        grads = [torch.randn(x.shape, generator=g, dtype=torch.float64) for x in p]
        adam_step(st_, grads, p)
        for x, gr in zip(q, grads):
            x.grad = gr.clone()
        opt.step()
    for a, b in zip(p, q):
        torch.testing.assert_close(a, b.detach(), rtol=0, atol=1e-15)


def test_adam_errors():
    p = _params()
    st_ = OptimState.zeros_like(p)
    with pytest.raises(NumericAbort):
        adam_step(st_, [torch.full_like(p[0], math.nan), torch.zeros_like(p[1])], p)
    with pytest.raises(ConfigurationError):
        adam_step(st_, [torch.zeros(2)], p)


def test_report_monotone():
    r = TrainReport()
    r.record(0, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        r.record(0, 1.0, 0.0, 0.0)


def test_zero_iterations_keeps_weights():
    problem = tiny_config("square-plate").compile()
    w0 = init_siren(problem.model.config)
    ref = [p.detach().clone() for p in w0.parameters()]
    w, rep = train(problem, iterations=0, weights=w0)
    assert all(torch.equal(a.detach(), b) for a, b in zip(w.parameters(), ref))
    assert rep.iterations == []


def test_zero_gradient_problem_stays_put():
    problem = tiny_config("napkin-corner", output_scale=0.0).compile()
    w0 = init_siren(problem.model.config)
    ref = [p.detach().clone() for p in w0.parameters()]
    w, rep = train(problem, iterations=5, weights=w0)
    assert all(torch.equal(a.detach(), b) for a, b in zip(w.parameters(), ref))
    assert rep.loss == [0.0] * 5


def test_reproducible_trajectory():
    problem = tiny_config("napkin-corner").compile()
    a, ra = train(problem, iterations=6)
    b, rb = train(problem, iterations=6)
    assert ra.loss == rb.loss
    assert all(torch.equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


def test_metrics_and_checkpoints(tmp_path):
    problem = tiny_config("napkin-corner").compile()
    _, rep = train(problem, iterations=6, metrics_path=tmp_path / "m.csv", checkpoint_dir=tmp_path,
                   checkpoint_every=2)
    rows = list(csv.reader((tmp_path / "m.csv").open()))
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 7
    assert [int(r[0]) for r in rows[1:]] == list(range(6))
    assert float(rows[-1][1]) == rep.loss[-1]
    names = sorted(p.name for p in tmp_path.glob("ckpt_*.ndf"))
    assert names == ["ckpt_000002.ndf", "ckpt_000004.ndf", "ckpt_000006.ndf"]
    assert rep.checkpoint.name == "ckpt_000006.ndf"
    # appending does not repeat the header
    train(problem, iterations=1, metrics_path=tmp_path / "m.csv", start_iteration=6)
    rows = list(csv.reader((tmp_path / "m.csv").open()))
    assert len(rows) == 8 and rows[-1][0] == "6"


def test_constraints_hold_at_every_checkpoint(tmp_path):
    problem = tiny_config("napkin-fixed-edges").compile()
    train(problem, iterations=6, checkpoint_dir=tmp_path, checkpoint_every=2)
    rng = np.random.default_rng(0)
    for ck in sorted(tmp_path.glob("ckpt_*.ndf")):
        w, _ = load_checkpoint(ck, problem.config.constraints)
        xi = rng.uniform(0, 1, (16, 2))
        assert not displacement(xi, np.zeros(16), None, w, problem.model).any()
        for f in problem.config.constraints.factors:
            pts = xi.copy()
            axis = 0 if f.center[0] is not None else 1
            pts[:, axis] = f.center[axis]
            assert np.abs(displacement(pts, rng.uniform(0, 2, 16), None, w, problem.model)).max() == 0.0


def test_numeric_abort_snapshot():
    problem = tiny_config("square-plate").compile()
    w = init_siren(problem.model.config)
    with torch.no_grad():
        w.weights[0][0, 0] = math.nan
    with pytest.raises(NumericAbort) as info:
        train(problem, iterations=3, weights=w)
    snap = info.value.snapshot
    assert snap["iteration"] == 0 and len(snap["parameter_norms"]) == len(w.parameters())
    assert snap["xi"].shape[1] == 2


def test_soft_constraint_ablation_runs():
    problem = tiny_config("napkin-fixed-edges", hard_constraints=False).compile()
    assert len(boundary_points(problem)) > 0
    _, rep = train(problem, iterations=3)
    assert all(np.isfinite(rep.loss))


def test_edit_schedule_endpoints():
    problem = tiny_config("napkin-corner").compile()
    target = LoadSpec("constant", (0.5, -1.0, 0.0))
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    sched = edit_schedule(problem, Edit(target, rot, np.array([0.0, 1.0, 0.0])), 10)
    first, last, mid = sched(0), sched(10), sched(5)
    g = problem.material.rho * problem.load.g
    np.testing.assert_allclose(first.load.vector, (0.0, -g, 0.0))
    np.testing.assert_allclose(last.load.vector, target.vector)
    np.testing.assert_allclose(first.surface.rotation, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(last.surface.rotation, rot, atol=1e-15)
    np.testing.assert_allclose(last.surface.translation, [0.0, 1.0, 0.0])
    c = math.cos(math.pi / 4)
    np.testing.assert_allclose(mid.surface.rotation[:2, :2], [[c, -c], [c, c]], atol=1e-12)
    np.testing.assert_allclose(sched(20).load.vector, target.vector)


def test_noop_edit_is_continued_training():
    problem = tiny_config("napkin-wind").compile()
    w0, _ = train(problem, iterations=3)
    res = fine_tune_edit(w0, problem, Edit(problem.load), 4)
    plain, rep = train(problem, iterations=4, weights=w0.clone())
    np.testing.assert_allclose(res.report.loss, rep.loss, rtol=1e-12)


def test_edit_snapshots_and_checkpoint_checks(tmp_path):
    problem = tiny_config("napkin-corner").compile()
    _, rep = train(problem, iterations=2, checkpoint_dir=tmp_path)
    res = fine_tune_edit(rep.checkpoint, problem, Edit(LoadSpec("constant", (0.0, -2.0, 0.0))), 4,
                         snapshot_every=2)
    assert [k for k, _ in res.snapshots] == [2, 4]
    other = tiny_config("napkin-fixed-edges").compile()
    with pytest.raises(CheckpointMismatch):
        fine_tune_edit(rep.checkpoint, other, Edit(), 1)
    wider = replace(problem.config, training=replace(problem.config.training, hidden_width=9)).compile()
    with pytest.raises(CheckpointMismatch):
        fine_tune_edit(rep.checkpoint, wider, Edit(), 1)
