import numpy as np
import pytest

from lamg.mesher.amr import AdaptiveRefinement, recovered_gradients, refine, zz_error
from lamg.models.config_models import AmrConfig
from lamg.models.run_models import NormKind
from lamg.solver.fem import relative_error, solve_problem
from lamg.solver.problem import corner_singular_problem
from lamg.utils.timing import StageTimer


def test_zz_error_vanishes_for_linear_solutions(cube_mesh, linear_cube_problem):
    """Test recovered gradients are exact, so the estimate vanishes, for a linear solution"""
    sol = solve_problem(cube_mesh, linear_cube_problem)
    np.testing.assert_allclose(recovered_gradients(cube_mesh, sol), np.tile([1.0, -2.0, 0.5], (cube_mesh.n_vertices, 1)), atol=1e-8)
    assert zz_error(cube_mesh, sol).max() < 1e-8


def test_zz_error_is_largest_near_the_singularity(cube, cube_mesh):
    """Test the largest error indicator sits near the singular corner"""
    prob = corner_singular_problem(cube)
    errors = zz_error(cube_mesh, solve_problem(cube_mesh, prob))
    worst = cube_mesh.centroids[np.argmax(errors)]
    assert (worst > 0.25).all()


def test_refine_without_errors_returns_the_same_mesh(cube_mesh):
    """Test refinement with zero errors returns the input mesh"""
    assert refine(cube_mesh, np.zeros(cube_mesh.n_tets), 0.5) is cube_mesh


def test_refine_rejects_wrong_lengths(cube_mesh):
    """Test an error array of the wrong length is rejected"""
    with pytest.raises(ValueError):
        refine(cube_mesh, np.ones(3), 0.5)


def test_refine_marks_by_threshold(cube, cube_mesh):
    """Test tets above the threshold fraction of the maximum error are bisected"""
    errors = np.zeros(cube_mesh.n_tets)
    errors[10] = 1.0
    errors[20] = 0.5
    only_peak = refine(cube_mesh, errors, 0.9, cube)
    both = refine(cube_mesh, errors, 0.4, cube)
    only_peak.validate()
    both.validate()
    assert only_peak.n_vertices > cube_mesh.n_vertices
    assert both.n_vertices > cube_mesh.n_vertices
    assert only_peak.volumes.sum() == pytest.approx(1.0)


def test_adaptive_refinement_history(cube, cube_mesh):
    """Test the loop stops at the iteration cap and records every pass"""
    timer = StageTimer()
    amr = AdaptiveRefinement(AmrConfig(threshold=0.5, vertex_budget=100000, max_iterations=3), timer=timer)
    mesh, sol = amr.run(corner_singular_problem(cube), cube_mesh)

    history = amr.history_frame()
    assert list(history.columns) == ["iteration", "vertices", "tets", "max_eta", "mean_eta", "re_l2"]
    assert history["iteration"].tolist() == [0, 1, 2, 3]
    assert history["vertices"].is_monotonic_increasing
    assert history["vertices"].iloc[-1] == mesh.n_vertices
    assert history["re_l2"].notna().all()
    assert sol.mesh is mesh
    assert timer.get("fem") > 0
    assert timer.get("refinement") > 0


def test_adaptive_refinement_stops_at_budget(cube, cube_mesh):
    """Test refinement stops before exceeding the vertex budget"""
    amr = AdaptiveRefinement(AmrConfig(threshold=0.3, vertex_budget=300, max_iterations=50))
    mesh, _ = amr.run(corner_singular_problem(cube), cube_mesh)
    assert mesh.n_vertices >= 300
    # the previous pass was still under budget
    assert amr.history[-2]["vertices"] < 300


def test_adaptive_refinement_with_injected_solver(mocker, cube_mesh, linear_cube_problem):
    """Test refinement solves through an injected solver"""
    solver = mocker.Mock(side_effect=solve_problem)
    amr = AdaptiveRefinement(AmrConfig(vertex_budget=10, max_iterations=0), solver=solver)
    mesh, _ = amr.run(linear_cube_problem, cube_mesh)
    assert mesh is cube_mesh
    solver.assert_called_once_with(cube_mesh, linear_cube_problem)


def test_save_history(tmp_path, cube, cube_mesh):
    """Test the refinement history is written as CSV"""
    amr = AdaptiveRefinement(AmrConfig(vertex_budget=10, max_iterations=0))
    amr.run(corner_singular_problem(cube), cube_mesh)
    path = tmp_path / "history.csv"
    amr.save_history(str(path))
    assert path.read_text(encoding="utf-8").startswith("iteration,vertices,tets,max_eta,mean_eta,re_l2")


@pytest.mark.slow
def test_amr_beats_uniform_on_a_corner_singularity(cube, cube_mesh, mesher, rng):
    """Test AMR beats a uniform mesh with as many vertices on a corner singularity"""
    prob = corner_singular_problem(cube)
    points = cube.sample_interior(4000, rng)
    amr_mesh, amr_sol = AdaptiveRefinement(AmrConfig(threshold=0.7, vertex_budget=3000)).run(prob, cube_mesh)
    uniform_mesh = mesher.for_vertex_count(cube, amr_mesh.n_vertices)
    uniform_sol = solve_problem(uniform_mesh, prob)

    amr_error = relative_error(amr_sol, prob.exact, points, NormKind.L2)
    uniform_error = relative_error(uniform_sol, prob.exact, points, NormKind.L2)
    assert amr_error <= 0.8 * uniform_error
