"""Pipeline stages: artifact I/O, manifests, and stage orchestration.

Every stage reads documented artifacts from the output directory, writes its
own artifacts plus ``manifest_<stage>.json`` recording input/output hashes,
the resolved-config hash, the seed, and wall time.  Given equal inputs and
seed, all artifacts except the manifest wall-time field are byte-identical
across runs.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import discovery as disc
from . import predictor as pred
from .classifier import (
    ClassifierConfig,
    build_classifier_input,
    build_context_schema,
    extract_latent_features,
    load_classifier,
    load_features_csv,
    save_classifier,
    train_classifier,
    write_features_csv,
)
from .data import (
    FlowSegment,
    load_geometry,
    load_incidents,
    load_speed_table,
    load_weather,
    save_geometry,
    save_incidents,
    save_speed_table,
    save_weather,
)
from .errors import ConfigError, MissingArtifactError
from .generator import (
    SyntheticScenario,
    generate_city,
    load_ground_truth,
    save_ground_truth,
)
from .graph import build_flow_graph, cluster_flows
from .utils import canonical_json, derived_seed, sha256_file, sha256_text


# ---------------------------------------------------------------------------
# configuration


def _dataclass_from(section: str, cls, raw: dict):
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"config section {section!r}: {exc}") from exc


@dataclass(eq=False)
class PipelineConfig:
    seed: int = 7
    scenario: SyntheticScenario = field(default_factory=SyntheticScenario)
    discovery: disc.DiscoveryConfig = field(default_factory=disc.DiscoveryConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    predictor: pred.DigcConfig = field(default_factory=pred.DigcConfig)
    sweep_rhos: tuple[float, ...] = (0.4, 0.5, 0.6, 0.7)
    sweep_thetas: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2)

    @staticmethod
    def from_dict(raw: dict) -> "PipelineConfig":
        known = {
            "seed",
            "scenario",
            "discovery",
            "classifier",
            "predictor",
            "sweep_rhos",
            "sweep_thetas",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = PipelineConfig(seed=int(raw.get("seed", 7)))
        if "scenario" in raw:
            scen = dict(raw["scenario"])
            scen.setdefault("seed", cfg.seed)
            cfg.scenario = SyntheticScenario.from_dict(scen)
        if "discovery" in raw:
            cfg.discovery = _dataclass_from(
                "discovery", disc.DiscoveryConfig, raw["discovery"]
            )
        if "classifier" in raw:
            cfg.classifier = _dataclass_from(
                "classifier", ClassifierConfig, raw["classifier"]
            )
        if "predictor" in raw:
            cfg.predictor = _dataclass_from(
                "predictor", pred.DigcConfig, raw["predictor"]
            )
        if "sweep_rhos" in raw:
            cfg.sweep_rhos = tuple(float(v) for v in raw["sweep_rhos"])
        if "sweep_thetas" in raw:
            cfg.sweep_thetas = tuple(float(v) for v in raw["sweep_thetas"])
        return cfg

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scenario": self.scenario.to_dict(),
            "discovery": vars(self.discovery).copy(),
            "classifier": vars(self.classifier).copy(),
            "predictor": vars(self.predictor).copy(),
            "sweep_rhos": list(self.sweep_rhos),
            "sweep_thetas": list(self.sweep_thetas),
        }

    def config_hash(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))


def load_config(path: Path) -> PipelineConfig:
    if not Path(path).exists():
        raise MissingArtifactError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return PipelineConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# manifests


def write_manifest(
    out_dir: Path,
    stage: str,
    inputs: list[Path],
    outputs: list[Path],
    config: PipelineConfig,
    wall_time_s: float,
) -> Path:
    manifest = {
        "stage": stage,
        "inputs": {p.name: sha256_file(p) for p in sorted(inputs)},
        "outputs": {p.name: sha256_file(p) for p in sorted(outputs)},
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "wall_time_s": round(wall_time_s, 3),
    }
    path = out_dir / f"manifest_{stage.replace('-', '_')}.json"
    with open(path, "w") as fh:
        fh.write(canonical_json(manifest))
        fh.write("\n")
    return path


def _require(out_dir: Path, name: str) -> Path:
    path = out_dir / name
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path} (run the upstream stage)")
    return path


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_json(payload))
        fh.write("\n")


# ---------------------------------------------------------------------------
# shared loading helpers


def _load_city_inputs(config: PipelineConfig, out_dir: Path):
    geometry_path = _require(out_dir, "geometry.csv")
    speeds_path = _require(out_dir, "speeds.csv")
    incidents_path = _require(out_dir, "incidents.json")
    flows = load_geometry(geometry_path)
    table = load_speed_table(speeds_path, start_time=config.scenario.start_time)
    incidents = load_incidents(incidents_path)
    return flows, table, incidents, [geometry_path, speeds_path, incidents_path]


def _cluster_labels(
    config: PipelineConfig, out_dir: Path, n_flows: int
) -> tuple[np.ndarray | None, list[Path]]:
    if config.discovery.cluster_count <= 1:
        return None, []
    path = _require(out_dir, "clusters.csv")
    labels = np.zeros(n_flows, dtype=np.int64)
    seen = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            labels[int(row[0])] = int(row[1])
            seen += 1
    if seen != n_flows:
        raise ConfigError(f"{path}: has {seen} rows for {n_flows} flows")
    return labels, [path]


# ---------------------------------------------------------------------------
# stages


def stage_generate(config: PipelineConfig, out_dir: Path) -> list[Path]:
    t0 = time.monotonic()
    city = generate_city(config.scenario)
    outputs = [
        out_dir / "geometry.csv",
        out_dir / "speeds.csv",
        out_dir / "incidents.json",
        out_dir / "weather.csv",
        out_dir / "ground_truth.json",
    ]
    save_geometry(outputs[0], city.flows)
    save_speed_table(outputs[1], city.table)
    save_incidents(outputs[2], city.incidents)
    save_weather(outputs[3], city.weather)
    save_ground_truth(outputs[4], city.ground_truth)
    outputs.append(write_manifest(out_dir, "generate", [], outputs, config,
                                  time.monotonic() - t0))
    return outputs


def stage_build_graph(config: PipelineConfig, out_dir: Path) -> list[Path]:
    t0 = time.monotonic()
    geometry_path = _require(out_dir, "geometry.csv")
    flows = load_geometry(geometry_path)
    graph = build_flow_graph(flows)
    edges_path = out_dir / "graph_edges.csv"
    with open(edges_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_a", "flow_b"])
        rows, cols = np.nonzero(np.triu(graph.adjacency))
        for a, b in zip(rows, cols):
            writer.writerow([int(a), int(b)])
    clusters_path = out_dir / "clusters.csv"
    k = config.discovery.cluster_count
    assignment = cluster_flows(graph, k, derived_seed(config.seed, "clusters"))
    with open(clusters_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "cluster"])
        for flow, label in enumerate(assignment.labels):
            writer.writerow([flow, int(label)])
    stats_path = out_dir / "graph_stats.json"
    _write_json(
        stats_path,
        {
            "n_flows": graph.n_flows,
            "n_edges": graph.n_edges,
            "n_components": int(graph.connected_components().max()) + 1,
            "cluster_count": k,
        },
    )
    outputs = [edges_path, clusters_path, stats_path]
    outputs.append(write_manifest(out_dir, "build-graph", [geometry_path], outputs,
                                  config, time.monotonic() - t0))
    return outputs


def stage_discover(
    config: PipelineConfig, out_dir: Path, dump_scores: bool = False
) -> list[Path]:
    t0 = time.monotonic()
    flows, table, incidents, inputs = _load_city_inputs(config, out_dir)
    labels, extra_inputs = _cluster_labels(config, out_dir, table.n_flows)
    result = disc.discover(table, incidents, flows, config.discovery, labels)
    labels_path = out_dir / "discovery.csv"
    disc.write_labels_csv(labels_path, result.labels)
    temporal_path = out_dir / "temporal_distribution.csv"
    with open(temporal_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hour", "day_category", "critical_count", "noncritical_count"])
        for row in disc.temporal_distribution(incidents, result.labels):
            writer.writerow(
                [row["hour"], row["day_category"], row["critical"], row["noncritical"]]
            )
    summary_path = out_dir / "discovery_summary.json"
    _write_json(
        summary_path,
        {
            "total_incidents": len(incidents),
            "scored": len(result.labels),
            "critical": result.critical_count,
            "skipped": len(result.skipped),
            "rho": config.discovery.rho,
            "theta": config.discovery.theta,
        },
    )
    outputs = [labels_path, temporal_path, summary_path]
    if dump_scores:
        cache = disc.SimilarityCache(table, config.discovery, labels)
        slots = range(cache.min_scorable_slot(), table.n_slots)
        series = disc.score_slots(table, slots, config.discovery, labels, cache)
        scores_path = out_dir / "scores.csv"
        disc.write_scores_csv(scores_path, series)
        outputs.append(scores_path)
    outputs.append(write_manifest(out_dir, "discover", inputs + extra_inputs,
                                  outputs, config, time.monotonic() - t0))
    return outputs


def stage_sweep(config: PipelineConfig, out_dir: Path) -> list[Path]:
    t0 = time.monotonic()
    flows, table, incidents, inputs = _load_city_inputs(config, out_dir)
    labels, extra_inputs = _cluster_labels(config, out_dir, table.n_flows)
    rows = disc.sweep_grid(
        table,
        incidents,
        flows,
        config.discovery,
        list(config.sweep_rhos),
        list(config.sweep_thetas),
        labels,
    )
    sweep_path = out_dir / "sweep.csv"
    disc.write_sweep_csv(sweep_path, rows)
    outputs = [sweep_path]
    outputs.append(write_manifest(out_dir, "sweep", inputs + extra_inputs, outputs,
                                  config, time.monotonic() - t0))
    return outputs


def _labeled_inputs(
    config: PipelineConfig,
    out_dir: Path,
    flows: list[FlowSegment],
    table,
    incidents,
    label_source: str,
):
    """Classifier inputs plus 0/1 labels from discovery output or ground truth."""
    schema = build_context_schema(incidents)
    if label_source == "discovery":
        path = _require(out_dir, "discovery.csv")
        verdicts: dict[str, int] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                verdicts[row[0]] = int(row[1])
    elif label_source == "ground-truth":
        path = _require(out_dir, "ground_truth.json")
        truths = load_ground_truth(path)
        verdicts = {t.incident_id: int(t.has_impact) for t in truths}
    else:
        raise ConfigError(f"unknown label source {label_source!r}")
    inputs, labels = [], []
    skipped = 0
    for incident in incidents:
        if incident.incident_id not in verdicts:
            continue
        try:
            built = build_classifier_input(
                incident, table, flows, schema, config.classifier
            )
        except ConfigError:
            skipped += 1
            continue
        inputs.append(built)
        labels.append(verdicts[incident.incident_id])
    return inputs, np.array(labels, dtype=np.float64), schema, path, skipped


def stage_train_classifier(
    config: PipelineConfig, out_dir: Path, label_source: str = "discovery"
) -> list[Path]:
    t0 = time.monotonic()
    flows, table, incidents, inputs_paths = _load_city_inputs(config, out_dir)
    graph = build_flow_graph(flows)
    l_conv = graph.convolution_laplacian()
    inputs, labels, schema, label_path, skipped = _labeled_inputs(
        config, out_dir, flows, table, incidents, label_source
    )
    trained = train_classifier(
        inputs, labels, l_conv, config.classifier,
        derived_seed(config.seed, "classifier"),
    )
    ckpt_path = out_dir / "classifier.json"
    save_classifier(ckpt_path, trained, schema, table.n_flows)
    metrics_path = out_dir / "classifier_metrics.json"
    metrics = dict(trained.metrics)
    metrics.update(
        {
            "label_source": label_source,
            "skipped_incidents": skipped,
            "config_hash": config.config_hash(),
        }
    )
    _write_json(metrics_path, metrics)
    outputs = [ckpt_path, metrics_path]
    outputs.append(write_manifest(out_dir, "train-classifier",
                                  inputs_paths + [label_path], outputs, config,
                                  time.monotonic() - t0))
    return outputs


def stage_extract_features(config: PipelineConfig, out_dir: Path) -> list[Path]:
    t0 = time.monotonic()
    flows, table, incidents, inputs_paths = _load_city_inputs(config, out_dir)
    ckpt_path = _require(out_dir, "classifier.json")
    graph = build_flow_graph(flows)
    l_conv = graph.convolution_laplacian()
    params, schema, clf_config = load_classifier(ckpt_path, table.n_flows)
    built = []
    for incident in incidents:
        try:
            built.append(
                build_classifier_input(incident, table, flows, schema, clf_config)
            )
        except ConfigError:
            continue  # windows clipped by the table edge carry no features
    features = extract_latent_features(built, params, l_conv, clf_config)
    features_path = out_dir / "features.csv"
    write_features_csv(features_path, features)
    outputs = [features_path]
    outputs.append(write_manifest(out_dir, "extract-features",
                                  inputs_paths + [ckpt_path], outputs, config,
                                  time.monotonic() - t0))
    return outputs


def _variant_config(config: pred.DigcConfig, variant: str) -> pred.DigcConfig:
    if variant == "full":
        return replace(config, use_periodic=True, use_incident=True)
    if variant == "st_periodic":
        return replace(config, use_periodic=True, use_incident=False)
    if variant == "st_only":
        return replace(config, use_periodic=False, use_incident=False)
    raise ConfigError(f"unknown variant {variant!r}; expected one of {pred.VARIANTS}")


def _assemble_for(
    config: PipelineConfig,
    out_dir: Path,
    variant_cfg: pred.DigcConfig,
):
    flows, table, incidents, inputs_paths = _load_city_inputs(config, out_dir)
    weather_path = _require(out_dir, "weather.csv")
    weather = load_weather(weather_path, table.n_slots)
    inputs_paths = inputs_paths + [weather_path]
    latent = None
    if variant_cfg.use_incident:
        features_path = _require(out_dir, "features.csv")
        latent = load_features_csv(features_path)
        inputs_paths.append(features_path)
    window_set = pred.assemble_windows(
        table, weather, incidents, latent, variant_cfg
    )
    graph = build_flow_graph(flows)
    return window_set, table, graph.convolution_laplacian(), inputs_paths


def stage_train(
    config: PipelineConfig,
    out_dir: Path,
    variant: str | None = None,
) -> list[Path]:
    t0 = time.monotonic()
    variant_cfg = _variant_config(config.predictor, variant or config.predictor.variant)
    window_set, table, l_conv, inputs_paths = _assemble_for(
        config, out_dir, variant_cfg
    )
    trained = pred.train_digc(
        window_set, table.n_slots, l_conv, variant_cfg,
        derived_seed(config.seed, f"digc.{variant_cfg.variant}"),
    )
    schema = pred.build_weather_schema(
        load_weather(out_dir / "weather.csv", table.n_slots)
    )
    ckpt_path = out_dir / f"predictor_{variant_cfg.variant}.json"
    pred.save_predictor(ckpt_path, trained, table.n_flows, schema)
    metrics_path = out_dir / f"predictor_{variant_cfg.variant}_metrics.json"
    metrics = dict(trained.metrics)
    metrics["config_hash"] = config.config_hash()
    _write_json(metrics_path, metrics)
    outputs = [ckpt_path, metrics_path]
    outputs.append(write_manifest(out_dir, f"train-{variant_cfg.variant}",
                                  inputs_paths, outputs, config,
                                  time.monotonic() - t0))
    return outputs


def stage_predict(
    config: PipelineConfig, out_dir: Path, variant: str | None = None
) -> list[Path]:
    t0 = time.monotonic()
    name = variant or config.predictor.variant
    ckpt_path = _require(out_dir, f"predictor_{name}.json")
    flows, table, incidents, inputs_paths = _load_city_inputs(config, out_dir)
    params, variant_cfg, speed_scale, schema, latent_stats = pred.load_predictor(
        ckpt_path, table.n_flows
    )
    # checkpoints carry only architecture fields; strides are a runtime choice
    variant_cfg = replace(
        variant_cfg,
        train_stride=config.predictor.train_stride,
        eval_stride=config.predictor.eval_stride,
    )
    weather = load_weather(_require(out_dir, "weather.csv"), table.n_slots)
    latent = None
    if variant_cfg.use_incident:
        latent = load_features_csv(_require(out_dir, "features.csv"))
    window_set = pred.assemble_windows(
        table, weather, incidents, latent, variant_cfg, schema=schema,
        speed_scale=speed_scale,
    )
    graph = build_flow_graph(flows)
    _, _, test = pred.split_windows(window_set, table.n_slots)
    test = test[:: max(1, variant_cfg.eval_stride)]
    predictions = pred.predict_windows(
        test, params, graph.convolution_laplacian(), variant_cfg, speed_scale,
        latent_stats=latent_stats,
    )
    pred_path = out_dir / "predictions.csv"
    pred.write_predictions_csv(pred_path, test, predictions)
    outputs = [pred_path]
    outputs.append(write_manifest(out_dir, "predict",
                                  inputs_paths + [ckpt_path], outputs, config,
                                  time.monotonic() - t0))
    return outputs


def stage_evaluate(
    config: PipelineConfig,
    out_dir: Path,
    variant: str | None = None,
    baselines: tuple[str, ...] = ("persistence", "historical_average"),
) -> list[Path]:
    t0 = time.monotonic()
    name = variant or config.predictor.variant
    ckpt_path = _require(out_dir, f"predictor_{name}.json")
    flows, table, incidents, inputs_paths = _load_city_inputs(config, out_dir)
    params, variant_cfg, speed_scale, schema, latent_stats = pred.load_predictor(
        ckpt_path, table.n_flows
    )
    variant_cfg = replace(
        variant_cfg,
        train_stride=config.predictor.train_stride,
        eval_stride=config.predictor.eval_stride,
    )
    weather = load_weather(_require(out_dir, "weather.csv"), table.n_slots)
    latent = None
    if variant_cfg.use_incident:
        latent = load_features_csv(_require(out_dir, "features.csv"))
    window_set = pred.assemble_windows(
        table, weather, incidents, latent, variant_cfg, schema=schema,
        speed_scale=speed_scale,
    )
    graph = build_flow_graph(flows)
    _, _, test = pred.split_windows(window_set, table.n_slots)
    test = test[:: max(1, variant_cfg.eval_stride)]
    predictions = pred.predict_windows(
        test, params, graph.convolution_laplacian(), variant_cfg, speed_scale,
        latent_stats=latent_stats,
    )
    payload = {
        "variant": variant_cfg.variant,
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "digc": pred.evaluate_mape(test, predictions),
        "baselines": {},
    }
    for baseline in baselines:
        payload["baselines"][baseline] = pred.run_baseline(
            baseline, window_set, table, variant_cfg,
            derived_seed(config.seed, f"baseline.{baseline}"),
        )
    eval_path = out_dir / "evaluation.json"
    _write_json(eval_path, payload)
    outputs = [eval_path]
    outputs.append(write_manifest(out_dir, "evaluate",
                                  inputs_paths + [ckpt_path], outputs, config,
                                  time.monotonic() - t0))
    return outputs


def stage_report(config: PipelineConfig, out_dir: Path) -> list[Path]:
    """Aggregate existing metrics files into one report; no recomputation."""
    t0 = time.monotonic()
    sections: dict[str, object] = {}
    inputs: list[Path] = []
    for name in (
        "discovery_summary.json",
        "classifier_metrics.json",
        "evaluation.json",
        "graph_stats.json",
    ):
        path = out_dir / name
        if path.exists():
            with open(path) as fh:
                sections[name.removesuffix(".json")] = json.load(fh)
            inputs.append(path)
    for path in sorted(out_dir.glob("predictor_*_metrics.json")):
        with open(path) as fh:
            sections[path.name.removesuffix(".json")] = json.load(fh)
        inputs.append(path)
    report = {"config_hash": config.config_hash(), "seed": config.seed,
              "sections": sections}
    report_path = out_dir / "report.json"
    _write_json(report_path, report)
    md_path = out_dir / "report.md"
    with open(md_path, "w") as fh:
        fh.write("# Pipeline report\n\n")
        fh.write(f"- config hash: `{report['config_hash']}`\n")
        fh.write(f"- seed: {config.seed}\n\n")
        for key in sorted(sections):
            fh.write(f"## {key}\n\n```json\n")
            fh.write(canonical_json(sections[key]))
            fh.write("\n```\n\n")
    outputs = [report_path, md_path]
    outputs.append(write_manifest(out_dir, "report", inputs, outputs, config,
                                  time.monotonic() - t0))
    return outputs
