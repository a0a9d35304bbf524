"""Incident impact classifier: encoding, forward pass, training, persistence."""

import csv
from datetime import timedelta

import numpy as np
import pytest

from digcnet import nn
from digcnet.classifier import (
    ClassifierConfig,
    ContextSchema,
    build_classifier_input,
    build_context_schema,
    classifier_forward,
    classifier_params,
    encode_context,
    extract_latent_features,
    load_classifier,
    load_features_csv,
    save_classifier,
    split_indices,
    train_classifier,
    write_features_csv,
)
from digcnet.data import FlowSegment, IncidentRecord, SpeedTable, day_category_of
from digcnet.errors import ConfigError, MissingArtifactError, ParseError
from digcnet.graph import build_flow_graph


def line_flows(n, spacing=0.001):
    return [
        FlowSegment(i, 40.0 + spacing * i, -100.0, 40.0 + spacing * (i + 1), -100.0)
        for i in range(n)
    ]


def make_incident(table, slot, lat=40.001, lng=-100.0, incident_type="collision",
                  road_closed=False, duration_min=60, incident_id="inc-0001"):
    start = table.time_of(slot)
    return IncidentRecord(
        incident_id=incident_id,
        incident_type=incident_type,
        lat=lat,
        lng=lng,
        start_time=start,
        end_time=start + timedelta(minutes=duration_min),
        road_closed=road_closed,
        day_category=day_category_of(start),
    )


def tiny_config(**overrides):
    base = dict(
        gcn_hidden=6, snapshot_dim=12, lstm_hidden=12, context_dim=6, latent_dim=16
    )
    base.update(overrides)
    return ClassifierConfig(**base)


@pytest.fixture(scope="module")
def separable_fixture():
    """Alternating impactful / zero-impact incidents on a constant-speed city."""
    n = 5
    flows = line_flows(n)
    speeds = np.full((864, n), 50.0)
    incidents = []
    labels = []
    table = SpeedTable(speeds=speeds.copy())
    for i in range(60):
        s = 20 + 14 * i
        impactful = i % 2 == 0
        if impactful:
            speeds[s - 6 : s + 6] *= 0.3
        incidents.append(
            make_incident(
                table,
                s,
                incident_type=("collision", "congestion")[i % 2],
                incident_id=f"inc-{i:04d}",
            )
        )
        labels.append(impactful)
    table = SpeedTable(speeds=speeds)
    l_conv = build_flow_graph(flows).convolution_laplacian()
    schema = build_context_schema(incidents)
    config = tiny_config(epochs=40, patience=40, batch_size=16)
    inputs = [
        build_classifier_input(inc, table, flows, schema, config) for inc in incidents
    ]
    return inputs, np.array(labels, dtype=float), l_conv, config, schema, flows


# ---------------------------------------------------------------------------
# input encoding


def test_snapshot_window_slot_convention():
    n = 4
    flows = line_flows(n)
    speeds = np.tile(np.arange(200, dtype=float)[:, None] + 10.0, (1, n))
    table = SpeedTable(speeds=speeds)
    schema = build_context_schema([make_incident(table, 100)])
    config = tiny_config()
    inp = build_classifier_input(make_incident(table, 100), table, flows, schema, config)
    assert inp.snapshots.shape == (12, n, 2)
    window = table.speeds[94:106]
    assert np.allclose(inp.snapshots[:, :, 0], window / window.max(), atol=0)


def test_snapshot_window_out_of_range():
    flows = line_flows(3)
    table = SpeedTable(speeds=np.full((50, 3), 40.0))
    schema = ContextSchema(incident_types=("collision",), max_duration_minutes=60.0)
    config = tiny_config()
    for slot in (3, 47):
        with pytest.raises(ConfigError):
            build_classifier_input(
                make_incident(table, slot), table, flows, schema, config
            )


def test_distance_channel_constant_and_normalized():
    flows = line_flows(6)
    table = SpeedTable(speeds=np.full((100, 6), 40.0))
    schema = ContextSchema(incident_types=("collision",), max_duration_minutes=60.0)
    inp = build_classifier_input(
        make_incident(table, 50, lat=flows[0].centroid[0], lng=flows[0].centroid[1]),
        table,
        flows,
        schema,
        tiny_config(),
    )
    dist = inp.snapshots[:, :, 1]
    assert np.all(dist == dist[0])  # constant across snapshots
    assert dist[0].min() == 0.0 and dist[0].max() == 1.0
    assert dist[0, 0] == 0.0  # incident sits on flow 0's centroid


def test_context_encoding_road_status_and_duration():
    table = SpeedTable(speeds=np.full((300, 2), 40.0))
    open_road = make_incident(table, 100, road_closed=False, duration_min=30)
    closed = make_incident(table, 100, road_closed=True, duration_min=60)
    schema = build_context_schema([open_road, closed])
    assert schema.max_duration_minutes == 60.0
    n_types = len(schema.incident_types)
    vec_open = encode_context(open_road, schema)
    assert vec_open[n_types] == 1.0 and vec_open[n_types + 1] == 0.0
    vec_closed = encode_context(closed, schema)
    assert vec_closed[n_types] == 0.0 and vec_closed[n_types + 1] == 1.0
    assert vec_closed[-1] == 1.0  # duration at dataset max
    assert vec_open[-1] == pytest.approx(0.5)
    hour = open_road.start_time.hour
    assert vec_open[n_types + 2 + hour] == 1.0


def test_context_unseen_type_zero_block():
    table = SpeedTable(speeds=np.full((300, 2), 40.0))
    known = make_incident(table, 100, incident_type="collision")
    schema = build_context_schema([known])
    novel = make_incident(table, 100, incident_type="landslide")
    vec = encode_context(novel, schema)
    assert np.all(vec[: len(schema.incident_types)] == 0.0)
    assert encode_context(known, schema)[0] == 1.0


def test_schema_serialization_roundtrip():
    schema = ContextSchema(incident_types=("a", "b"), max_duration_minutes=90.0)
    assert ContextSchema.from_dict(schema.to_dict()) == schema
    assert schema.width == 2 + 2 + 24 + 24 + 3 + 1


# ---------------------------------------------------------------------------
# forward pass


def forward_fixture(batch=3, seed=5):
    n = 4
    flows = line_flows(n)
    l_conv = build_flow_graph(flows).convolution_laplacian()
    config = tiny_config()
    rng = np.random.default_rng(seed)
    snapshots = rng.uniform(0.2, 1.0, size=(batch, 12, n, 2))
    contexts = rng.uniform(0.0, 1.0, size=(batch, 10))
    params = classifier_params(n, 10, config, seed)
    return snapshots, contexts, params, l_conv, config


def test_forward_shapes_and_probability_range():
    snapshots, contexts, params, l_conv, config = forward_fixture()
    prob, latent = classifier_forward(snapshots, contexts, params, l_conv, config)
    assert prob.data.shape == (3, 1)
    assert latent.data.shape == (3, config.latent_dim)
    assert np.all(prob.data > 0.0) and np.all(prob.data < 1.0)


def test_probability_in_open_interval_over_seeds():
    snapshots, contexts, _, l_conv, config = forward_fixture()
    for seed in range(100):
        params = classifier_params(4, 10, config, seed)
        prob, _ = classifier_forward(snapshots, contexts, params, l_conv, config)
        assert np.all(prob.data > 0.0) and np.all(prob.data < 1.0)


def test_latent_width_default_is_16():
    assert ClassifierConfig().latent_dim == 16


def test_batched_forward_matches_single():
    snapshots, contexts, params, l_conv, config = forward_fixture(batch=4)
    prob, latent = classifier_forward(snapshots, contexts, params, l_conv, config)
    for b in range(4):
        p_one, l_one = classifier_forward(
            snapshots[b : b + 1], contexts[b : b + 1], params, l_conv, config
        )
        assert np.allclose(p_one.data[0], prob.data[b], atol=1e-12)
        assert np.allclose(l_one.data[0], latent.data[b], atol=1e-12)


def test_eval_forward_deterministic():
    snapshots, contexts, params, l_conv, config = forward_fixture()
    first = classifier_forward(snapshots, contexts, params, l_conv, config)
    second = classifier_forward(snapshots, contexts, params, l_conv, config)
    assert np.array_equal(first[0].data, second[0].data)
    assert np.array_equal(first[1].data, second[1].data)


def test_extract_matches_forward_latent(separable_fixture):
    inputs, _, l_conv, config, _, _ = separable_fixture
    params = classifier_params(5, inputs[0].context.size, config, seed=9)
    feats = extract_latent_features(inputs[:6], params, l_conv, config)
    _, latent = classifier_forward(
        np.stack([inp.snapshots for inp in inputs[:6]]),
        np.stack([inp.context for inp in inputs[:6]]),
        params,
        l_conv,
        config,
    )
    for row, inp in enumerate(inputs[:6]):
        assert np.array_equal(feats[inp.incident_id], latent.data[row])


def test_identical_inputs_identical_features(separable_fixture):
    inputs, _, l_conv, config, _, _ = separable_fixture
    params = classifier_params(5, inputs[0].context.size, config, seed=9)
    twin = type(inputs[0])(
        incident_id="inc-twin",
        snapshots=inputs[0].snapshots.copy(),
        context=inputs[0].context.copy(),
    )
    feats = extract_latent_features([inputs[0], twin], params, l_conv, config)
    assert np.array_equal(feats["inc-0000"], feats["inc-twin"])


# ---------------------------------------------------------------------------
# training


def test_split_proportions_and_coverage():
    train, val, test = split_indices(100, seed=3)
    assert test.size == 30 and val.size == 7 and train.size == 63
    together = np.sort(np.concatenate([train, val, test]))
    assert np.array_equal(together, np.arange(100))
    with pytest.raises(ConfigError):
        split_indices(2, seed=3)


def test_train_separable_fixture_high_f1(separable_fixture):
    inputs, labels, l_conv, config, _, _ = separable_fixture
    trained = train_classifier(inputs, labels, l_conv, config, seed=21)
    assert trained.metrics["f1"] >= 0.95
    assert trained.metrics["n_train"] + trained.metrics["n_val"] + trained.metrics[
        "n_test"
    ] == len(inputs)
    losses = trained.metrics["train_loss"]
    drops = sum(1 for a, b in zip(losses, losses[1:]) if b <= a + 1e-12)
    assert drops >= 0.9 * (len(losses) - 1)


def test_train_label_flip_negative_control(separable_fixture):
    inputs, labels, l_conv, config, _, _ = separable_fixture
    flipped = train_classifier(inputs, 1.0 - labels, l_conv, config, seed=21)
    _, _, test_idx = split_indices(len(inputs), seed=21)
    snapshots = np.stack([inputs[i].snapshots for i in test_idx])
    contexts = np.stack([inputs[i].context for i in test_idx])
    prob, _ = classifier_forward(snapshots, contexts, flipped.params, l_conv, config)
    predicted = (prob.data[:, 0] >= config.threshold).astype(float)
    _, _, f1 = nn.precision_recall_f1(predicted, labels[test_idx])
    assert f1 <= 0.05


def test_train_single_class_raises(separable_fixture):
    inputs, labels, l_conv, config, _, _ = separable_fixture
    with pytest.raises(ConfigError):
        train_classifier(inputs, np.ones_like(labels), l_conv, config, seed=21)


def test_train_deterministic_given_seed(separable_fixture):
    inputs, labels, l_conv, _, _, _ = separable_fixture
    config = tiny_config(epochs=3, patience=3, batch_size=16)
    first = train_classifier(inputs, labels, l_conv, config, seed=4)
    second = train_classifier(inputs, labels, l_conv, config, seed=4)
    assert first.metrics == second.metrics
    for name in first.params.names():
        assert np.array_equal(first.params[name].data, second.params[name].data)


# ---------------------------------------------------------------------------
# persistence


def test_save_load_roundtrip(tmp_path, separable_fixture):
    inputs, labels, l_conv, config, schema, _ = separable_fixture
    trained = train_classifier(
        inputs, labels, l_conv, tiny_config(epochs=2, patience=2), seed=6
    )
    path = tmp_path / "classifier.json"
    save_classifier(path, trained, schema, n_flows=5)
    params, loaded_schema, loaded_config = load_classifier(path, n_flows=5)
    assert loaded_schema == schema
    assert loaded_config.latent_dim == trained.config.latent_dim
    assert loaded_config.window_before == trained.config.window_before
    for name in trained.params.names():
        assert np.array_equal(params[name].data, trained.params[name].data)


def test_load_classifier_flow_mismatch(tmp_path, separable_fixture):
    inputs, labels, l_conv, _, schema, _ = separable_fixture
    trained = train_classifier(
        inputs, labels, l_conv, tiny_config(epochs=2, patience=2), seed=6
    )
    path = tmp_path / "classifier.json"
    save_classifier(path, trained, schema, n_flows=5)
    with pytest.raises(ConfigError):
        load_classifier(path, n_flows=7)


def test_load_classifier_missing_or_foreign(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_classifier(tmp_path / "absent.json", n_flows=5)
    foreign = tmp_path / "foreign.json"
    params = nn.ModelParams()
    params.add("w", np.zeros(2))
    nn.save_params(foreign, params, {"model": "something-else"})
    with pytest.raises(ParseError):
        load_classifier(foreign, n_flows=5)


def test_features_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    feats = {
        "inc-0002": rng.normal(size=16),
        "inc-0001": rng.normal(size=16) * 1e-7,
    }
    path = tmp_path / "features.csv"
    write_features_csv(path, feats)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["incident_id"] + [f"f{i}" for i in range(16)]
    loaded = load_features_csv(path)
    assert sorted(loaded) == ["inc-0001", "inc-0002"]
    for key, vec in feats.items():
        assert np.array_equal(loaded[key], vec)  # full-precision round trip


def test_features_csv_errors(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_features_csv(tmp_path / "absent.csv")
    bad_header = tmp_path / "bad.csv"
    bad_header.write_text("nope,f0\nx,1\n")
    with pytest.raises(ParseError):
        load_features_csv(bad_header)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("incident_id,f0,f1\ninc-0001,1.0\n")
    with pytest.raises(ParseError):
        load_features_csv(ragged)
    non_numeric = tmp_path / "nan.csv"
    non_numeric.write_text("incident_id,f0\ninc-0001,abc\n")
    with pytest.raises(ParseError):
        load_features_csv(non_numeric)
    with pytest.raises(ConfigError):
        write_features_csv(
            tmp_path / "mixed.csv", {"a": np.zeros(3), "b": np.zeros(4)}
        )
