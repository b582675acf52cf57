import math

import numpy as np
import pytest

from conftest import tiny_config
from ndfsim.errors import ConfigurationError
from ndfsim.export import export_meshes, frame_times, grid_coordinates, grid_faces, read_obj_vertices
from ndfsim.geometry import eval_reference
from ndfsim.ndf import init_siren, save_checkpoint
from ndfsim.trainer import train


def test_grid_coordinates_formula():
    g = grid_coordinates(((0.0, 2.0), (1.0, 3.0)), 3, 5)
    assert g.shape == (3, 5, 2)
    np.testing.assert_array_equal(g[:, 0, 0], [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(g[0, :, 1], [1.0, 1.5, 2.0, 2.5, 3.0])
    w = grid_coordinates(((0.0, 2 * math.pi), (0.0, 1.0)), 4, 2, periodic=(0,), seam="wrap")
    np.testing.assert_allclose(w[:, 0, 0], [0, math.pi / 2, math.pi, 3 * math.pi / 2])


def test_faces():
    f = grid_faces(3, 3)
    assert f.shape == (8, 3) and f.max() == 8
    fw = grid_faces(4, 3, wrap1=True)
    assert fw.shape == (4 * 2 * 2, 3) and fw.max() == 11


def test_zero_field_frame0_is_reference(tmp_path):
    problem = tiny_config("napkin-corner").compile()
    w = init_siren(problem.model.config)
    paths = export_meshes(w, problem, (6, 7), 3, tmp_path)
    assert [p.name for p in paths] == ["frame_0000.obj", "frame_0001.obj", "frame_0002.obj"]
    v0 = read_obj_vertices(paths[0])
    xi = grid_coordinates(problem.surface.domain, 6, 7).reshape(-1, 2)
    np.testing.assert_array_equal(v0, eval_reference(problem.surface, xi)[0])
    assert not np.array_equal(read_obj_vertices(paths[2]), v0)
    text = paths[0].read_text()
    assert text.count("\nvt ") == 42 and text.count("\nf ") == 2 * 5 * 6


def test_resolution_consistency(tmp_path):
    problem = tiny_config("skirt").compile()
    w, _ = train(problem, iterations=2)
    a = read_obj_vertices(export_meshes(w, problem, (10, 10), 2, tmp_path / "a")[1]).reshape(10, 10, 3)
    b = read_obj_vertices(export_meshes(w, problem, (91, 91), 2, tmp_path / "b")[1]).reshape(91, 91, 3)
    # (91 - 1) / (10 - 1) = 10: every coarse vertex is a fine vertex
    np.testing.assert_allclose(b[::10, ::10], a, atol=1e-12, rtol=0)


def test_cylinder_seam(tmp_path):
    problem = tiny_config("sleeve-twist").compile()
    w, _ = train(problem, iterations=2)
    v = read_obj_vertices(export_meshes(w, problem, (9, 5), 2, tmp_path / "d")[1]).reshape(9, 5, 3)
    np.testing.assert_allclose(v[0], v[-1], atol=1e-12)
    p = export_meshes(w, problem, (8, 5), 2, tmp_path / "w", seam="wrap")[1]
    faces = [ln for ln in p.read_text().splitlines() if ln.startswith("f ")]
    assert len(faces) == 8 * 4 * 2
    # the wrapped grid is the duplicated grid without its seam column
    np.testing.assert_allclose(read_obj_vertices(p).reshape(8, 5, 3), v[:-1], atol=1e-12)


def test_frame_times():
    problem = tiny_config("napkin-corner").compile()
    np.testing.assert_allclose(frame_times(problem, 5), np.linspace(0, 2.0, 5))
    np.testing.assert_allclose(frame_times(problem, 3, fps=30), [0, 1 / 30, 2 / 30])
    assert frame_times(tiny_config("square-plate").compile(), 7).tolist() == [0.0]


def test_export_errors(tmp_path):
    problem = tiny_config("napkin-corner").compile()
    w = init_siren(problem.model.config)
    with pytest.raises(ConfigurationError):
        export_meshes(w, problem, (1, 5), 1, tmp_path)
    with pytest.raises(ConfigurationError):
        export_meshes(w, problem, (3, 3), 1, tmp_path, seam="glue")
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        export_meshes(w, problem, (3, 3), 1, blocker)


def test_checkpoint_size_independent_of_export(tmp_path):
    problem = tiny_config("napkin-corner").compile()
    w = init_siren(problem.model.config)
    ck = save_checkpoint(tmp_path / "c.ndf", w, problem.model.config, problem.model.embedding,
                         problem.config.constraints, problem.config.to_dict())
    size = ck.stat().st_size
    export_meshes(w, problem, (5, 5), 1, tmp_path / "small")
    export_meshes(w, problem, (50, 50), 3, tmp_path / "big")
    assert ck.stat().st_size == size
