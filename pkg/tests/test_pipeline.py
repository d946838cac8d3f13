import json

import numpy as np
import pandas as pd
import plotly.graph_objects as go
import pytest

from lamg.database.dataset_store import DatasetStore, ProblemRecord
from lamg.exceptions import LamgError
from lamg.main import LamgPipeline, build_parser, load_config, main
from lamg.mesher.background_field import read_background_field
from lamg.mesher.lattice_mesher import LatticeMesher
from lamg.mesher.sizing import SizingField, SizingNormalizer
from lamg.models.config_models import ExperimentConfig
from lamg.models.run_models import MethodTag, RunRecord
from lamg.nnet.network import NetParams
from lamg.nnet.serialization import save_params
from lamg.processor.dataset_generator import training_examples
from lamg.processor.experiment import PROBE_MARGIN, ExperimentRunner
from lamg.processor.metrics import Evaluator, load_runs, quartiles, records_frame, speedups, summarize
from lamg.solver.fem import solve_problem
from lamg.solver.problem import PoissonProblem, linear_problem, random_problem
from lamg.solver.wos import SampleSet
from lamg.visualization.report_plots import ReportPlots


def _run(problem_id, method, total, re_l2=0.01, label="", eta=None):
    return RunRecord(problem_id=problem_id, method=method, fem_time=total, vertex_count=100, tet_count=400,
                     re_l2=re_l2, re_linf=2 * re_l2, label=label, eta=eta)


@pytest.fixture
def run_frame():
    records = []
    for i in range(5):
        pid = f"p{i}"
        records.append(_run(pid, MethodTag.LAMG, 1.0 + i, 0.01 * (i + 1), eta=1.0))
        records.append(_run(pid, MethodTag.AMR, 4.0 * (1.0 + i), 0.02))
        records.append(_run(pid, MethodTag.UNIFORM, 2.0, 0.05, label="N=200"))
        records.append(_run(pid, MethodTag.UNIFORM, 6.0, 0.03, label="N=500"))
    return records_frame(records)


@pytest.fixture
def runner(small_experiment, cube):
    return ExperimentRunner(small_experiment, boundaries={"cube": cube})


@pytest.fixture
def lamg_params():
    params = NetParams.initialize(ExperimentConfig().model_preset, np.random.default_rng(0))
    params.normalizer = SizingNormalizer(0.15, 0.3)
    return params


def test_quartiles_match_sorted_values():
    """Test quartiles match sorted values and skip NaN"""
    values = np.random.default_rng(2).uniform(size=101)
    ordered = np.sort(values)
    assert quartiles(values) == pytest.approx((ordered[25], ordered[50], ordered[75]))
    assert quartiles([1.0, np.nan, 3.0]) == pytest.approx((1.5, 2.0, 2.5))


def test_speedups_per_problem(run_frame):
    """Test speedups against AMR per problem"""
    table = speedups(run_frame, MethodTag.AMR)
    assert len(table) == 5
    np.testing.assert_allclose(table["speedup"], 4.0)
    assert (table["baseline"] == "amr").all()


def test_summarize_groups_by_method_and_label(run_frame):
    """Test summaries group by method and label"""
    summary = summarize(run_frame)
    assert len(summary) == 4
    uniform = summary[(summary["method"] == "uniform") & (summary["label"] == "N=500")].iloc[0]
    assert uniform["runs"] == 5
    assert uniform["total_time_median"] == pytest.approx(6.0)
    lamg = summary[summary["method"] == "lamg"].iloc[0]
    assert lamg["re_l2_median"] == pytest.approx(0.03)


def test_evaluator_writes_tables(tmp_path, run_frame):
    """Test the evaluator writes its CSV tables"""
    written = Evaluator(str(tmp_path / "report")).evaluate_frame(run_frame, figures=False)
    assert set(written) == {"runs", "summary", "speedups"}
    table = pd.read_csv(written["speedups"])
    assert set(table["baseline"]) == {"amr", "uniform"}
    assert len(pd.read_csv(written["runs"])) == len(run_frame)


def test_evaluator_renders_figures(mocker, tmp_path, run_frame):
    """Test the evaluator renders every figure"""
    render = mocker.patch("lamg.processor.metrics.ReportPlots.render_all", return_value={})
    Evaluator(str(tmp_path)).evaluate_frame(run_frame)
    render.assert_called_once()


def test_report_figures(mocker, tmp_path, run_frame):
    """Test report figures are exported as SVG"""
    write = mocker.patch.object(go.Figure, "write_image")
    plots = ReportPlots(str(tmp_path))
    written = plots.render_all(run_frame, speedups(run_frame, MethodTag.AMR))
    assert set(written) == {"speedup_histogram", "error_box", "time_vs_error", "eta_trend", "uniform_frontier"}
    assert write.call_count == 5
    assert len(plots.error_box(run_frame).data) == 3
    assert len(plots.uniform_frontier(run_frame).data) == 3
    # a single eta value is not a sweep
    assert len(plots.eta_trend(run_frame).data) == 0


def test_report_figures_survive_export_errors(mocker, tmp_path, run_frame, caplog):
    """Test export errors are logged without stopping the report"""
    mocker.patch.object(go.Figure, "write_image", side_effect=ValueError("no exporter"))
    written = ReportPlots(str(tmp_path)).render_all(run_frame, pd.DataFrame())
    assert written == {}
    assert "Error writing figure" in caplog.text


def test_empty_figures(tmp_path):
    """Test figures render from an empty frame"""
    plots = ReportPlots(str(tmp_path))
    assert plots.speedup_histogram(pd.DataFrame()).layout.title.text == "No speedup data available"
    assert plots.uniform_frontier(pd.DataFrame()).layout.title.text == "No uniform sweep available"


def test_load_runs(tmp_path, run_frame):
    """Test run files are read back"""
    path = tmp_path / "runs_a.csv"
    run_frame.to_csv(path, index=False)
    frame = load_runs([str(path), str(tmp_path / "missing.csv")])
    assert len(frame) == len(run_frame)
    assert (frame.loc[frame["method"] == "lamg", "label"] == "").all()
    assert load_runs([]).empty


def _record(problem, rng, n=30):
    points = problem.mesh.sample_interior(n, rng)
    samples = SampleSet(points, problem.g(points), np.full(n, 0.01), np.full(n, 25))
    return ProblemRecord(problem, "cube", samples, SizingField(points, np.linspace(0.05, 0.2, n)))


def test_dataset_store_round_trip(tmp_path, cube, random_cube_problem, rng):
    """Test stored problems, samples and sizes load back"""
    store = DatasetStore(str(tmp_path / "dataset"))
    record = _record(random_cube_problem, rng)
    store.save_record(record)
    store.write_manifest([record])

    assert store.problem_ids() == ["cube-test"]
    loaded = store.load_record("cube-test", {"cube": cube})
    points = np.array([[0.1, 0.2, -0.3], [0.5, 0.0, 0.0]])
    np.testing.assert_allclose(loaded.problem.g(points), record.problem.g(points))
    np.testing.assert_allclose(loaded.problem.f(points), record.problem.f(points))
    np.testing.assert_array_equal(loaded.samples.points, record.samples.points)
    np.testing.assert_array_equal(loaded.reference.sizes, record.reference.sizes)
    assert loaded.mesh is None


def test_dataset_store_keeps_reference_meshes(tmp_path, cube, cube_mesh, random_cube_problem, rng):
    """Test AMR meshes are saved by default and skipped when disabled"""
    record = _record(random_cube_problem, rng)
    record.mesh = cube_mesh
    store = DatasetStore(str(tmp_path / "dataset"))
    store.save_record(record)
    loaded = store.load_record("cube-test", {"cube": cube})
    np.testing.assert_allclose(loaded.mesh.vertices, cube_mesh.vertices)
    np.testing.assert_array_equal(loaded.mesh.tets, cube_mesh.tets)

    bare = DatasetStore(str(tmp_path / "bare"), save_meshes=False)
    bare.save_record(record)
    assert bare.load_record("cube-test", {"cube": cube}).mesh is None


def test_problems_remember_their_stream(cube, small_ranges, rng):
    """Test each drawn problem keeps the spawn key that reproduces it"""
    first = random_problem(cube, small_ranges, rng.child(0), problem_id="a")
    second = random_problem(cube, small_ranges, rng.child(1), problem_id="b")
    assert first.seed == second.seed == 1234
    assert first.stream_key != second.stream_key
    again = random_problem(cube, small_ranges, second.rng(), problem_id="b")
    np.testing.assert_array_equal(again.g.centers, second.g.centers)
    restored = PoissonProblem.from_dict(second.to_dict(), cube)
    assert restored.stream_key == (1,)


def test_training_examples_skip_small_problems(random_cube_problem, rng):
    """Test problems with too few samples are skipped"""
    normalizer = SizingNormalizer(0.05, 0.2)
    records = [_record(random_cube_problem, rng.child(1)), _record(random_cube_problem, rng.child(2), n=1)]
    examples = training_examples(records, normalizer, k=8)
    assert len(examples) == 1
    assert examples[0].target.min() == pytest.approx(0.0)
    assert examples[0].target.max() == pytest.approx(1.0)


def test_methods_share_the_injected_mesher_and_solver(mocker, small_experiment, cube, lamg_params):
    """Test every method meshes and solves through the same injected components"""
    mesher = mocker.Mock(wraps=LatticeMesher())
    fem = mocker.Mock(side_effect=solve_problem)
    runner = ExperimentRunner(small_experiment, mesher=mesher, fem=fem, boundaries={"cube": cube})
    prob = linear_problem(cube, [0.5, 1.0, -1.0], 2.0)

    runner.run_lamg(prob, lamg_params)
    assert mesher.adaptive.call_count == 1
    assert fem.call_count == 1

    runner.run_baseline(prob, MethodTag.AMG)
    assert mesher.uniform.call_count == 1
    assert mesher.adaptive.call_count == 2
    assert fem.call_count >= 3


def test_lamg_run_record(runner, cube, lamg_params):
    """Test a LAMG run record carries sizes, timing and errors"""
    prob = linear_problem(cube, [1.0, 0.0, 0.0], 1.0)
    sol, record = runner.run_lamg(prob, lamg_params, eta=1.2, label="demo")
    assert record.method == MethodTag.LAMG
    assert (record.eta, record.n_points, record.walks, record.label) == (1.2, 40, 20, "demo")
    assert record.vertex_count == sol.mesh.n_vertices
    assert record.mc_time > 0
    assert record.refinement_time == 0.0
    # P1 reproduces linear solutions on any mesh
    assert record.re_l2 < 1e-8


def test_lamg_exports_predicted_fields(small_experiment, cube, lamg_params, tmp_path):
    """Test predicted fields are written as background files"""
    runner = ExperimentRunner(small_experiment, boundaries={"cube": cube}, field_dir=str(tmp_path / "fields"))
    prob = linear_problem(cube, [1.0, 0.0, 0.0], 1.0)
    runner.run_lamg(prob, lamg_params, eta=2.0, label="demo")
    exported = read_background_field(str(tmp_path / "fields" / f"{prob.problem_id}_demo.pos"))
    assert exported.n > 0
    assert (exported.sizes > 0).all()


def test_uniform_and_wos_baselines(runner, cube):
    """Test the uniform and WoS baselines record errors"""
    prob = linear_problem(cube, [1.0, 1.0, 1.0], 3.0)
    _, uniform = runner.run_baseline(prob, MethodTag.UNIFORM, vertex_target=200)
    assert uniform.label == "N=200"
    assert uniform.re_l2 < 1e-8

    samples, wos = runner.run_baseline(prob, MethodTag.WOS)
    assert samples.n == 20
    assert wos.meshing_time == 0.0
    assert wos.vertex_count == 0
    assert wos.mc_time > 0
    assert wos.re_l2 < 0.5

    with pytest.raises(ValueError):
        runner.run_baseline(prob, MethodTag.LAMG)


def test_uniform_sweep_labels(runner, cube):
    """Test uniform sweep runs are labelled by vertex count"""
    prob = linear_problem(cube, [0.0, 0.0, 1.0], 1.0)
    records = runner.run_uniform_sweep(prob)
    assert [r.label for r in records] == ["N=200", "N=500"]
    assert records[0].vertex_count < records[1].vertex_count


def test_lamg_sweep(runner, cube, lamg_params):
    """Test the eta sweep gives one run per value"""
    runner.cfg = runner.cfg.model_copy(update={"eta_sweep": [0.8, 1.6]})
    prob = linear_problem(cube, [1.0, 0.0, 0.0], 1.0)
    records = runner.run_lamg_sweep(prob, lamg_params, "eta")
    assert [r.label for r in records] == ["eta=0.8", "eta=1.6"]
    assert records[0].vertex_count >= records[1].vertex_count
    with pytest.raises(ValueError):
        runner.run_lamg_sweep(prob, lamg_params, "k")


def test_probe_points_keep_a_margin(runner, cube):
    """Test error points keep their distance from the boundary"""
    prob = linear_problem(cube, [1.0, 0.0, 0.0])
    probes = runner.probe_points(prob)
    assert probes.shape == (64, 3)
    assert runner.probe_points(prob) is probes
    dist, _, _ = cube.closest_points(probes)
    assert dist.min() > PROBE_MARGIN * cube.bbox_diagonal


def test_heldout_problems_are_reproducible(runner):
    """Test held-out problems depend only on the seed"""
    first = runner.heldout_problems(2)
    second = runner.heldout_problems(2)
    assert [p.problem_id for p in first] == ["eval-cube-0000", "eval-cube-0001"]
    assert first[0].to_dict() == second[0].to_dict()


def test_reference_values_are_cached(mocker, small_experiment, cube, cache_manager):
    """Test reference values are computed once and then cached"""
    runner = ExperimentRunner(small_experiment, cache=cache_manager, boundaries={"cube": cube})
    prob = runner.heldout_problems(1)[0]
    values = runner.reference_values(prob)
    assert values.shape == (64,)

    fem = mocker.Mock(side_effect=solve_problem)
    fresh = ExperimentRunner(small_experiment, fem=fem, cache=cache_manager, boundaries={"cube": cube})
    np.testing.assert_array_equal(fresh.reference_values(fresh.heldout_problems(1)[0]), values)
    fem.assert_not_called()


def test_collect_counts_failures(runner, cube):
    """Test failing problems are counted and skipped"""
    problems = [linear_problem(cube, [1.0, 0.0, 0.0]), linear_problem(cube, [0.0, 1.0, 0.0])]

    def flaky(prob):
        if prob is problems[0]:
            raise LamgError("meshing exploded")
        return [_run(prob.problem_id, MethodTag.UNIFORM, 1.0)]

    records, failures = runner.collect(problems, flaky)
    assert failures == 1
    assert len(records) == 1


def test_parser_commands():
    """Test the command line parser"""
    parser = build_parser()
    args = parser.parse_args(["run", "--eta", "0.85", "--sweep", "m", "-s", "7"])
    assert (args.command, args.eta, args.sweep, args.seed) == ("run", 0.85, "m", 7)
    assert not args.export_fields
    assert parser.parse_args(["run", "--export-fields"]).export_fields
    args = parser.parse_args(["baseline", "-m", "amr", "-m", "wos"])
    assert args.method == ["amr", "wos"]
    with pytest.raises(SystemExit):
        parser.parse_args(["baseline", "-m", "lamg"])


def test_load_config_applies_environment(monkeypatch, tmp_path, small_experiment):
    """Test environment variables override the config file"""
    path = tmp_path / "experiment.json"
    path.write_text(small_experiment.model_dump_json(), encoding="utf-8")
    monkeypatch.setenv("LAMG_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    monkeypatch.setenv("LAMG_WORKERS", "3")
    cfg = load_config(str(path))
    assert cfg.output_dir == str(tmp_path / "elsewhere")
    assert cfg.workers == 3
    assert cfg.probe_points == 64


def test_report_without_runs_fails(monkeypatch, tmp_path, small_experiment):
    """Test report without run files fails"""
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(small_experiment.model_dump(mode="json")), encoding="utf-8")
    monkeypatch.delenv("LAMG_OUTPUT_DIR", raising=False)
    assert main(["report", "--config", str(path)]) == 1


def test_train_without_corpus_fails(monkeypatch, small_experiment):
    """Test train without a corpus fails"""
    monkeypatch.delenv("LAMG_CACHE_DIR", raising=False)
    with pytest.raises(LamgError):
        LamgPipeline(small_experiment).train(0)


def test_params_without_normalizer_use_the_corpus_one(monkeypatch, small_experiment, lamg_params):
    """Test parameters saved without a normalization fall back to the stored corpus normalizer"""
    monkeypatch.delenv("LAMG_CACHE_DIR", raising=False)
    pipeline = LamgPipeline(small_experiment)
    pipeline.store.save_normalizer(SizingNormalizer(0.1, 0.3))
    lamg_params.normalizer = None
    save_params(str(pipeline.params_path), lamg_params)
    params = pipeline.load_params()
    assert params.normalizer.s_min == pytest.approx(0.1)
    assert params.normalizer.s_max == pytest.approx(0.3)


def test_pipeline_passes_save_meshes_to_the_store(monkeypatch, small_experiment):
    """Test the save_meshes setting reaches the corpus store"""
    monkeypatch.delenv("LAMG_CACHE_DIR", raising=False)
    assert small_experiment.save_meshes
    assert LamgPipeline(small_experiment).store.save_meshes
    assert not LamgPipeline(small_experiment.model_copy(update={"save_meshes": False})).store.save_meshes


@pytest.mark.slow
@pytest.mark.integration
def test_full_pipeline(mocker, monkeypatch, tmp_path, small_experiment):
    """Test gen, train, run, baseline and report end to end on a tiny corpus"""
    mocker.patch.object(go.Figure, "write_image")
    for name in ("LAMG_OUTPUT_DIR", "LAMG_WORKERS", "LAMG_CACHE_DIR"):
        monkeypatch.delenv(name, raising=False)
    path = tmp_path / "experiment.json"
    path.write_text(small_experiment.model_dump_json(), encoding="utf-8")
    config = ["--config", str(path)]

    assert main(["gen", *config]) == 0
    assert main(["train", *config]) == 0
    assert main(["run", *config]) == 0
    assert main(["baseline", "-m", "uniform", "-m", "wos", *config]) == 0
    assert main(["report", *config]) == 0

    output = tmp_path / "output"
    assert (output / "params.bin").exists()
    assert len(list((output / "dataset" / "problems").glob("*/amr_mesh.tet"))) == small_experiment.n_problems
    assert len(pd.read_csv(output / "training_curve.csv")) == small_experiment.train.epochs
    runs = pd.read_csv(output / "report" / "runs.csv")
    assert set(runs["method"]) == {"lamg", "uniform", "wos"}
    assert (output / "report" / "speedups.csv").exists()
