import pytest

from lamg.geometry.shapes import make_cube, make_icosphere, make_torus
from lamg.mesher.lattice_mesher import LatticeMesher
from lamg.models.config_models import ExperimentConfig, ProblemRanges, ShapeSpec, TrainConfig
from lamg.solver.problem import linear_problem, random_problem
from lamg.utils.cache_manager import CacheManager
from lamg.utils.rng import Rng


@pytest.fixture
def rng():
    """Fixed root stream"""
    return Rng(1234)


@pytest.fixture(scope="session")
def cube():
    """Unit cube centered at the origin"""
    return make_cube(1.0)


@pytest.fixture(scope="session")
def sphere():
    """Unit-radius icosphere"""
    return make_icosphere(1.0, subdivisions=3)


@pytest.fixture(scope="session")
def torus():
    """Torus with a hole of radius 0.65 around the z axis"""
    return make_torus(1.0, 0.35)


@pytest.fixture
def mesher():
    return LatticeMesher()


@pytest.fixture(scope="session")
def cube_mesh(cube):
    """216-vertex uniform mesh of the unit cube"""
    return LatticeMesher().uniform(cube, 0.25)


@pytest.fixture
def small_ranges():
    """Problem ranges small enough for quick walks"""
    return ProblemRanges(gaussians=(3, 5), spheres=(2, 3), n_points=(40, 60), walks=(20, 30))


@pytest.fixture
def random_cube_problem(cube, small_ranges, rng):
    return random_problem(cube, small_ranges, rng, problem_id="cube-test")


@pytest.fixture
def linear_cube_problem(cube):
    return linear_problem(cube, [1.0, -2.0, 0.5], 0.3)


@pytest.fixture
def train_config():
    return TrainConfig(epochs=3, learning_rate=1e-2)


@pytest.fixture
def small_experiment(tmp_path, small_ranges):
    """Tiny experiment config writing under tmp_path"""
    return ExperimentConfig(
        shapes=[ShapeSpec(name="cube", kind="cube")],
        ranges=small_ranges,
        n_problems=2,
        n_eval=1,
        coarse_vertices=200,
        training_amr={"threshold": 0.7, "vertex_budget": 400, "max_iterations": 3},
        baseline_amr={"threshold": 0.7, "vertex_budget": 400, "max_iterations": 3},
        inference_n=40,
        inference_m=20,
        reference_vertices=1500,
        wos_baseline_points=20,
        wos_baseline_walks=20,
        probe_points=64,
        uniform_sweep=[200, 500],
        output_dir=str(tmp_path / "output"),
    )


@pytest.fixture
def test_cache_dir(tmp_path):
    """Create a temporary cache directory"""
    cache_dir = tmp_path / "test_cache"
    cache_dir.mkdir()
    return str(cache_dir)


@pytest.fixture
def cache_manager(test_cache_dir):
    """Create a CacheManager instance with test directory"""
    return CacheManager(cache_dir=test_cache_dir, ttl=3600)


@pytest.fixture
def interior_points(cube, rng):
    """Random points well inside the unit cube"""
    return rng.child(99).generator().uniform(-0.4, 0.4, size=(50, 3))
