import struct

import numpy as np
import pytest

from lamg.exceptions import IsolatedNode, ParamsFormatError, TrainingDiverged
from lamg.mesher.sizing import SizingNormalizer
from lamg.models.config_models import ModelPreset, ModelSize, TrainConfig
from lamg.nnet.graph import GraphBatch, build_graph, standardize
from lamg.nnet.loss import LossParts, huber, loss, loss_gradient, threshold_weights
from lamg.nnet.network import NetParams, backward, forward
from lamg.nnet.predictor import SizingPredictor
from lamg.nnet.serialization import MAGIC, load_params, save_params
from lamg.nnet.trainer import AdamOptimizer, Trainer, TrainingExample, gradients
from lamg.solver.wos import SampleSet


def _samples(points: np.ndarray, values: np.ndarray) -> SampleSet:
    n = len(points)
    return SampleSet(points, values, np.zeros(n), np.full(n, 10))


def _random_graph(generator: np.random.Generator, n: int = 10) -> GraphBatch:
    points = generator.uniform(-0.5, 0.5, size=(n, 3))
    edges = set()
    for i in range(n):
        for j in generator.choice(n, size=3, replace=False):
            if i != j:
                edges.add((min(i, int(j)), max(i, int(j))))
    first, second = np.array(sorted(edges)).T
    senders = np.concatenate([first, second])
    receivers = np.concatenate([second, first])
    z, mean, std = standardize(generator.normal(size=n))
    lengths = np.linalg.norm(points[senders] - points[receivers], axis=1)
    return GraphBatch(points, z, senders, receivers, float(lengths.max()), mean, std)


def _forward_with_kinks(params: NetParams, graph: GraphBatch):
    """Output plus the on/off pattern of every ReLU and absolute difference"""
    cache = forward(params, graph, keep_cache=True)
    pattern = []
    for kind, inputs, pre, _ in cache.layers:
        if kind == "relu":
            pattern.append((pre > 0).ravel())
        elif kind == "message":
            pattern.append((inputs[graph.receivers] > inputs[graph.senders]).ravel())
    return cache.output, np.concatenate(pattern)


@pytest.fixture
def small_graph():
    generator = np.random.default_rng(7)
    points = generator.uniform(-0.4, 0.4, size=(30, 3))
    senders, receivers = [], []
    for i in range(30):
        for j in ((i + 1) % 30, (i + 5) % 30):
            senders += [i, j]
            receivers += [j, i]
    z, mean, std = standardize(np.sin(3.0 * points[:, 0]) + points[:, 1])
    lengths = np.linalg.norm(points[senders] - points[receivers], axis=1)
    return GraphBatch(points, z, senders, receivers, float(lengths.max()), mean, std)


@pytest.fixture
def params():
    net = NetParams.initialize(ModelPreset(), np.random.default_rng(3))
    generator = np.random.default_rng(4)
    for name, w in net.weights.items():
        if name.endswith("_b"):
            w += generator.normal(0.0, 0.1, size=w.shape)
    return net


@pytest.mark.parametrize("size,count", [(ModelSize.H1, 1393), (ModelSize.H4, 5345)])
def test_parameter_counts(size, count):
    """Test parameter counts of the presets"""
    assert NetParams.zeros(ModelPreset.from_size(size)).count == count


def test_preset_rejects_mismatched_widths():
    """Test presets with mismatched layer widths are rejected"""
    with pytest.raises(ValueError):
        ModelPreset(encoder_dims=[1, 8, 16], decoder_dims=[8, 1])
    with pytest.raises(ValueError):
        ModelPreset(encoder_dims=[2, 16], decoder_dims=[16, 1])


def test_loss_constants():
    """Test Huber values and the threshold weights at the threshold sizes"""
    cfg = TrainConfig()
    assert huber(np.array([0.5]), cfg.delta)[0] == pytest.approx(0.125)
    assert huber(np.array([3.0]), 1.0)[0] == pytest.approx(2.5)
    down, up = threshold_weights(np.array([cfg.s_lo, cfg.s_hi]), cfg)
    assert down[0] == pytest.approx(0.5)
    assert up[1] == pytest.approx(0.5)

    parts = loss(np.full(4, 0.3), np.full(4, 0.3), cfg)
    assert parts.total == 0.0
    with pytest.raises(ValueError):
        loss(np.zeros(3), np.zeros(4), cfg)


def test_loss_gradient_matches_finite_differences():
    """Test both loss terms against central differences, component by component"""
    cfg = TrainConfig(delta=0.1)
    generator = np.random.default_rng(11)
    # predictions straddle s_lo, s_hi and both Huber branches
    pred = generator.uniform(-0.2, 0.6, size=25)
    ref = generator.uniform(0.0, 0.4, size=25)
    assert (np.abs(pred - ref) < cfg.delta).any() and (np.abs(pred - ref) > cfg.delta).any()
    analytic = loss_gradient(pred, ref, cfg)
    numeric = np.empty_like(pred)
    h = 1e-6
    for i in range(len(pred)):
        up, down = pred.copy(), pred.copy()
        up[i] += h
        down[i] -= h
        numeric[i] = (loss(up, ref, cfg).total - loss(down, ref, cfg).total) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-10)


def test_network_gradients_match_finite_differences(small_graph, params):
    """Test backward against central differences over every parameter"""
    cfg = TrainConfig()
    ref = np.random.default_rng(5).uniform(0.0, 1.0, size=small_graph.n)
    _, grads = gradients(params, small_graph, ref, cfg)
    analytic = np.concatenate([g.ravel() for g in grads.values()])

    flat = params.flatten()
    numeric = np.empty_like(flat)
    h = 1e-6
    for i in range(len(flat)):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        numeric[i] = (loss(forward(params.with_flat(up), small_graph), ref, cfg).total
                      - loss(forward(params.with_flat(down), small_graph), ref, cfg).total) / (2 * h)
    assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(numeric)


@pytest.mark.slow
def test_network_gradients_on_random_graphs():
    """Test every gradient component against central differences on 20 random 10-node graphs"""
    cfg = TrainConfig(alpha=5.0, delta=0.1)
    generator = np.random.default_rng(21)
    h = 1e-6
    checked = skipped = 0
    branches = set()
    for _ in range(20):
        graph = _random_graph(generator)
        params = NetParams.initialize(ModelPreset(), generator)
        params = params.with_flat(params.flatten() + generator.normal(0.0, 0.05, size=params.count))
        # centre the outputs between s_lo and s_hi so the threshold weights vary
        last_bias = f"dec{len(params.preset.decoder_dims) - 2}_b"
        params.weights[last_bias] += 0.11 - forward(params, graph).mean()
        out = forward(params, graph)
        ref = out + generator.uniform(-0.3, 0.3, size=graph.n)
        branches.update((np.abs(out - ref) < cfg.delta).tolist())
        _, grads = gradients(params, graph, ref, cfg)
        analytic = np.concatenate([g.ravel() for g in grads.values()])

        flat = params.flatten()
        for i in range(len(flat)):
            up, down = flat.copy(), flat.copy()
            up[i] += h
            down[i] -= h
            out_up, kinks_up = _forward_with_kinks(params.with_flat(up), graph)
            out_down, kinks_down = _forward_with_kinks(params.with_flat(down), graph)
            # a step across a ReLU or |.| kink has no central difference to compare with
            if not np.array_equal(kinks_up, kinks_down):
                skipped += 1
                continue
            numeric = (loss(out_up, ref, cfg).total - loss(out_down, ref, cfg).total) / (2 * h)
            assert analytic[i] == pytest.approx(numeric, rel=1e-5, abs=1e-9)
            checked += 1

    assert branches == {True, False}
    assert skipped <= 0.01 * (checked + skipped)


def test_backward_returns_every_weight(small_graph, params):
    """Test backprop returns a gradient for every weight"""
    cache = forward(params, small_graph, keep_cache=True)
    grads = backward(params, small_graph, cache, np.ones(small_graph.n))
    assert list(grads) == list(params.weights)
    for name, g in grads.items():
        assert g.shape == params.weights[name].shape


def test_forward_is_permutation_equivariant(small_graph, params):
    """Test permuting nodes permutes the output"""
    order = np.random.default_rng(9).permutation(small_graph.n)
    np.testing.assert_allclose(forward(params, small_graph.permuted(order)), forward(params, small_graph)[order], atol=1e-12)


def test_isolated_nodes_keep_their_own_features(params):
    """Test the forward pass stays finite on a graph without edges"""
    graph = GraphBatch(np.eye(3), [0.0, 1.0, -1.0], [], [], 0.0)
    assert graph.isolated.all()
    out = forward(params, graph)
    assert out.shape == (3,)
    assert np.isfinite(out).all()


def test_standardize_constant_values():
    """Test standardizing constant values gives zeros"""
    z, mean, std = standardize(np.full(4, 2.5))
    np.testing.assert_array_equal(z, np.zeros(4))
    assert (mean, std) == (2.5, 1.0)


def test_graph_edges_are_symmetric(cube, rng):
    """Test the k-nearest graph is symmetric without self loops"""
    points = cube.sample_interior(60, rng)
    graph = build_graph(_samples(points, points[:, 0]), cube, k=6)
    forward_edges = set(zip(graph.senders.tolist(), graph.receivers.tolist()))
    assert forward_edges == set(zip(graph.receivers.tolist(), graph.senders.tolist()))
    assert not graph.isolated.any()
    assert graph.e_max == pytest.approx(graph.edge_lengths.max())
    assert graph.values.mean() == pytest.approx(0.0, abs=1e-12)


def test_graph_edges_stay_inside_a_torus(torus, rng):
    """Test no graph edge crosses the torus hole"""
    points = torus.sample_interior(200, rng)
    graph = build_graph(_samples(points, np.ones(200)), torus, k=8)
    midpoints = 0.5 * (graph.points[graph.senders] + graph.points[graph.receivers])
    assert torus.is_inside(midpoints).all()
    # no edge cuts across the hole
    assert (np.linalg.norm(midpoints[:, :2], axis=1) > 0.6).all()


def test_graph_needs_enough_samples(cube, rng):
    """Test graphs need more samples than neighbours"""
    points = cube.sample_interior(5, rng)
    with pytest.raises(ValueError):
        build_graph(_samples(points, np.zeros(5)), cube, k=8)


def test_isolated_nodes_warn_and_use_fallback(mocker, cube, rng, params):
    """Test isolated nodes are logged and predicted with the fallback size"""
    points = cube.sample_interior(20, rng)
    mocker.patch.object(cube, "segments_inside", side_effect=lambda a, b: np.zeros(len(a), dtype=bool))
    with pytest.warns(IsolatedNode):
        graph = build_graph(_samples(points, points[:, 2]), cube, k=4)
    assert graph.n_edges == 0

    params.normalizer = SizingNormalizer(0.01, 0.11)
    params.fallback_size = 0.25
    predictor = SizingPredictor(params, k=4)
    np.testing.assert_allclose(predictor.predict_normalized(graph), 0.25)


def test_predictor_returns_physical_sizes(cube, rng, params):
    """Test predictions are denormalized into the size range"""
    params.normalizer = SizingNormalizer(0.01, 0.11)
    points = cube.sample_interior(40, rng)
    field, graph = SizingPredictor(params).predict(_samples(points, points[:, 0] ** 2), cube)
    assert graph.n == 40
    np.testing.assert_array_equal(field.points, points)
    assert field.sizes.min() >= 0.01
    assert field.sizes.max() <= 0.11 + 1e-12


def test_predictor_requires_normalization(params):
    """Test prediction without a normalizer is rejected"""
    with pytest.raises(ValueError):
        SizingPredictor(params)


def test_params_file_round_trip(tmp_path, params):
    """Test parameters survive the binary file"""
    params.normalizer = SizingNormalizer(0.02, 0.3)
    params.fallback_size = 0.4
    path = tmp_path / "params.bin"
    save_params(str(path), params)
    loaded = load_params(str(path))
    assert loaded.preset == params.preset
    assert loaded.normalizer == params.normalizer
    assert loaded.fallback_size == 0.4
    np.testing.assert_array_equal(loaded.flatten(), params.flatten())
    assert path.read_bytes()[:8] == MAGIC


def test_params_file_errors(tmp_path, params):
    """Test corrupt parameter files raise ParamsFormatError"""
    path = tmp_path / "params.bin"
    save_params(str(path), params)
    data = path.read_bytes()

    cases = {
        "magic": b"NOTLAMG\0" + data[8:],
        "version": data[:8] + struct.pack("<I", 99) + data[12:],
        "truncated": data[:-8],
        "trailing": data + b"\0" * 8,
        "header": data[:16] + b"{" * 4,
    }
    for name, broken in cases.items():
        target = tmp_path / f"{name}.bin"
        target.write_bytes(broken)
        with pytest.raises(ParamsFormatError):
            load_params(str(target))


def test_adam_first_step_is_sign_sized(params):
    """Test the first Adam step moves each weight by the learning rate"""
    optimizer = AdamOptimizer(0.01)
    before = params.copy()
    grads = {name: np.full(w.shape, -3.0) for name, w in params.weights.items()}
    optimizer.step(params, grads)
    np.testing.assert_allclose(params.flatten() - before.flatten(), 0.01, rtol=1e-6)


def _examples(graph: GraphBatch, count: int):
    examples = []
    for i in range(count):
        order = np.random.default_rng(i).permutation(graph.n)
        g = graph.permuted(order)
        examples.append(TrainingExample(g, np.clip(0.4 + 0.1 * g.values, 0.0, 1.0), f"p{i}"))
    return examples


def test_trainer_records_a_curve(tmp_path, small_graph, train_config, rng):
    """Test training records one curve row per epoch"""
    cfg = train_config.model_copy(update={"epochs": 20, "validation_fraction": 0.0})
    examples = _examples(small_graph, 4)
    trainer = Trainer(cfg)
    best = trainer.train(examples, rng)

    curve = trainer.curve_frame()
    assert curve["epoch"].tolist() == list(range(1, 21))
    assert curve["train_loss"].iloc[-1] < curve["train_loss"].iloc[0]
    assert trainer.evaluate(best, examples).total <= curve["train_loss"].min() + 1e-12
    assert best.fallback_size == pytest.approx(np.mean(np.concatenate([ex.target for ex in examples])))

    trainer.save_curve(str(tmp_path / "curve.csv"))
    assert (tmp_path / "curve.csv").read_text(encoding="utf-8").startswith("epoch,train_loss")


def test_trainer_is_reproducible(small_graph, train_config, rng):
    """Test identical streams give identical training"""
    examples = _examples(small_graph, 3)
    first = Trainer(train_config).train(examples, rng)
    second = Trainer(train_config).train(examples, rng)
    np.testing.assert_array_equal(first.flatten(), second.flatten())


def test_shuffle_seed_sets_the_epoch_order(small_graph, train_config, rng):
    """Test the configured shuffle seed changes the training trajectory under a fixed stream"""
    examples = [TrainingExample(small_graph, np.clip(0.1 * i + 0.1 * small_graph.values, 0.0, 1.0), f"p{i}") for i in range(6)]
    cfg = train_config.model_copy(update={"validation_fraction": 0.0})
    first, second = Trainer(cfg), Trainer(cfg.model_copy(update={"shuffle_seed": 7}))
    first.train(examples, rng)
    second.train(examples, rng)
    assert first.curve_frame()["train_loss"].tolist() != second.curve_frame()["train_loss"].tolist()


def test_trainer_detects_divergence(mocker, small_graph, train_config, rng):
    """Test a non-finite loss stops training"""
    mocker.patch("lamg.nnet.trainer.loss", return_value=LossParts(float("nan"), 0.0, 0.0))
    with pytest.raises(TrainingDiverged):
        Trainer(train_config).train(_examples(small_graph, 2), rng)


def test_trainer_needs_examples(train_config, rng):
    """Test training without examples is rejected"""
    with pytest.raises(ValueError):
        Trainer(train_config).train([], rng)
