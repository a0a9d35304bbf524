"""Binary incident-impact classifier and latent feature extractor.

Each incident is encoded as two branches:

* spatio-temporal: 12 speed snapshots around the incident start (slots
  s-6..s+5), each a per-flow (speed, distance-to-incident) pair, passed
  through two graph-convolution layers, a per-snapshot FC, and an LSTM whose
  final hidden state summarizes the window;
* context: one-hot incident type / road status / start and end hour / day
  category plus normalized duration, passed through one FC layer.

The concatenation feeds a 16-unit FC layer whose activations double as the
incident's latent impact features for the downstream speed predictor, and a
sigmoid output unit scores impact probability.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .data import DAY_CATEGORIES, FlowSegment, IncidentRecord, SpeedTable
from .errors import ConfigError, MissingArtifactError, ParseError
from .graph import centroid_array, distances_to_point
from .utils import format_float, rng_for


@dataclass(frozen=True)
class ClassifierConfig:
    gcn_hidden: int = 64
    snapshot_dim: int = 64  # per-snapshot FC width feeding the LSTM
    lstm_hidden: int = 64
    context_dim: int = 16
    latent_dim: int = 16
    dropout_keep: float = 0.8
    learning_rate: float = 0.001
    epochs: int = 60
    batch_size: int = 16
    patience: int = 10
    window_before: int = 6  # snapshots before the incident start slot
    window_after: int = 6  # snapshots from the start slot onward
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.window_before + self.window_after < 1:
            raise ConfigError("snapshot window must be non-empty")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError("dropout_keep must lie in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be >= 1")

    @property
    def window_slots(self) -> int:
        return self.window_before + self.window_after


# ---------------------------------------------------------------------------
# input encoding


@dataclass(frozen=True)
class ContextSchema:
    """Vocabulary and scaling captured from the training incidents."""

    incident_types: tuple[str, ...]
    max_duration_minutes: float

    @property
    def width(self) -> int:
        # type one-hot + road status pair + start/end hour + day cat + duration
        return len(self.incident_types) + 2 + 24 + 24 + len(DAY_CATEGORIES) + 1

    def to_dict(self) -> dict:
        return {
            "incident_types": list(self.incident_types),
            "max_duration_minutes": self.max_duration_minutes,
        }

    @staticmethod
    def from_dict(raw: dict) -> "ContextSchema":
        return ContextSchema(
            incident_types=tuple(raw["incident_types"]),
            max_duration_minutes=float(raw["max_duration_minutes"]),
        )


def build_context_schema(incidents: list[IncidentRecord]) -> ContextSchema:
    types = tuple(sorted({inc.incident_type for inc in incidents}))
    max_dur = max((inc.duration_minutes for inc in incidents), default=1.0)
    return ContextSchema(incident_types=types, max_duration_minutes=max(max_dur, 1.0))


def encode_context(incident: IncidentRecord, schema: ContextSchema) -> np.ndarray:
    """Fixed-width context vector; unseen incident types get an all-zero block."""
    vec = np.zeros(schema.width)
    offset = 0
    if incident.incident_type in schema.incident_types:
        vec[offset + schema.incident_types.index(incident.incident_type)] = 1.0
    offset += len(schema.incident_types)
    vec[offset + (1 if incident.road_closed else 0)] = 1.0  # open roads -> (1, 0)
    offset += 2
    vec[offset + incident.start_time.hour] = 1.0
    offset += 24
    vec[offset + incident.end_time.hour] = 1.0
    offset += 24
    vec[offset + DAY_CATEGORIES.index(incident.day_category)] = 1.0
    offset += len(DAY_CATEGORIES)
    vec[offset] = min(incident.duration_minutes / schema.max_duration_minutes, 1.0)
    return vec


@dataclass(eq=False)
class ClassifierInput:
    """Model-ready encoding of one incident."""

    incident_id: str
    snapshots: np.ndarray  # (window_slots, N, 2): scaled speed, scaled distance
    context: np.ndarray  # (schema.width,)


def build_classifier_input(
    incident: IncidentRecord,
    table: SpeedTable,
    flows: list[FlowSegment],
    schema: ContextSchema,
    config: ClassifierConfig,
) -> ClassifierInput:
    """Snapshot window around the incident start plus the context vector.

    Speeds are scaled by the window maximum; distances are min-max scaled
    within the incident (the nearest flow maps to 0, the farthest to 1).
    """
    s = table.slot_of(incident.start_time)
    lo, hi = s - config.window_before, s + config.window_after
    if lo < 0 or hi > table.n_slots:
        raise ConfigError(
            f"incident {incident.incident_id!r}: snapshot window "
            f"[{lo}, {hi}) outside the speed table"
        )
    speeds = table.speeds[lo:hi]
    peak = float(speeds.max())
    speeds = speeds / peak if peak > 0 else speeds
    dist = distances_to_point(centroid_array(flows), (incident.lat, incident.lng))
    span = float(dist.max() - dist.min())
    dist = (dist - dist.min()) / span if span > 0 else np.zeros_like(dist)
    snapshots = np.empty((config.window_slots, table.n_flows, 2))
    snapshots[:, :, 0] = speeds
    snapshots[:, :, 1] = dist[None, :]
    return ClassifierInput(
        incident_id=incident.incident_id,
        snapshots=snapshots,
        context=encode_context(incident, schema),
    )


# ---------------------------------------------------------------------------
# model


def classifier_params(
    n_flows: int, context_width: int, config: ClassifierConfig, seed: int
) -> nn.ModelParams:
    rng = rng_for(seed, "classifier.init")
    g, f, h = config.gcn_hidden, config.snapshot_dim, config.lstm_hidden
    params = nn.ModelParams()

    def add(name: str, fan_in: int, fan_out: int, shape=None) -> None:
        params.add(name, nn.xavier_uniform(rng, fan_in, fan_out, shape))

    def add_bias(name: str, width: int) -> None:
        params.add(name, np.zeros(width))

    add("gcn1.theta", 2, g)
    add("gcn2.theta", g, g)
    add("snap.fc.w", n_flows * g, f)
    add_bias("snap.fc.b", f)
    add("lstm.wx", f, 4 * h, shape=(f, 4 * h))
    add("lstm.wh", h, 4 * h, shape=(h, 4 * h))
    add_bias("lstm.b", 4 * h)
    add("ctx.fc.w", context_width, config.context_dim)
    add_bias("ctx.fc.b", config.context_dim)
    add("latent.fc.w", h + config.context_dim, config.latent_dim)
    add_bias("latent.fc.b", config.latent_dim)
    add("out.w", config.latent_dim, 1)
    add_bias("out.b", 1)
    return params


def classifier_forward(
    snapshots: np.ndarray,
    contexts: np.ndarray,
    params: nn.ModelParams,
    l_conv: np.ndarray,
    config: ClassifierConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[nn.Tensor, nn.Tensor]:
    """Batched forward pass.

    ``snapshots`` is (B, window, N, 2), ``contexts`` is (B, C).  Returns
    (impact probabilities (B, 1), latent features (B, latent_dim)).
    """
    p = dict(params.items())
    lap = nn.Tensor(l_conv)
    x = nn.Tensor(snapshots)
    h1 = nn.gcn_layer(lap, x, p["gcn1.theta"], activation="relu")
    h1 = nn.dropout(h1, config.dropout_keep, training, rng)
    h2 = nn.gcn_layer(lap, h1, p["gcn2.theta"], activation="relu")
    h2 = nn.dropout(h2, config.dropout_keep, training, rng)
    batch, window, n_flows = snapshots.shape[0], snapshots.shape[1], snapshots.shape[2]
    flat = h2.reshape((batch, window, n_flows * config.gcn_hidden))
    per_snap = nn.dense(flat, p["snap.fc.w"], p["snap.fc.b"], activation="relu")

    h = nn.zeros((batch, config.lstm_hidden))
    c = nn.zeros((batch, config.lstm_hidden))
    for t in range(window):
        h, c = nn.lstm_step(
            per_snap[:, t, :], h, c, p["lstm.wx"], p["lstm.wh"], p["lstm.b"]
        )

    y_c = nn.dense(
        nn.Tensor(contexts), p["ctx.fc.w"], p["ctx.fc.b"], activation="relu"
    )
    merged = nn.concat([y_c, h], axis=1)
    latent = nn.dense(
        merged, p["latent.fc.w"], p["latent.fc.b"], activation="relu"
    )
    prob = nn.dense(latent, p["out.w"], p["out.b"], activation="sigmoid")
    return prob, latent


# ---------------------------------------------------------------------------
# training


@dataclass(eq=False)
class TrainedClassifier:
    params: nn.ModelParams
    config: ClassifierConfig
    metrics: dict
    schema: ContextSchema | None = None


def split_indices(
    n: int, seed: int, test_share: float = 0.3, val_share: float = 0.1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle into train/validation/test index arrays."""
    if n < 3:
        raise ConfigError("need at least 3 samples to split")
    perm = rng_for(seed, "classifier.split").permutation(n)
    n_test = max(1, int(round(test_share * n)))
    remain = perm[n_test:]
    n_val = max(1, int(round(val_share * remain.size)))
    return remain[n_val:], remain[:n_val], perm[:n_test]


def _batched_probs(
    snapshots: np.ndarray,
    contexts: np.ndarray,
    params: nn.ModelParams,
    l_conv: np.ndarray,
    config: ClassifierConfig,
    batch_size: int = 64,
) -> np.ndarray:
    probs = []
    for lo in range(0, snapshots.shape[0], batch_size):
        prob, _ = classifier_forward(
            snapshots[lo : lo + batch_size],
            contexts[lo : lo + batch_size],
            params,
            l_conv,
            config,
            training=False,
        )
        probs.append(prob.data[:, 0])
    return np.concatenate(probs)


def train_classifier(
    inputs: list[ClassifierInput],
    labels: np.ndarray,
    l_conv: np.ndarray,
    config: ClassifierConfig,
    seed: int,
) -> TrainedClassifier:
    """Train with Adam, BCE loss, and early stopping on validation loss.

    The 70/30 train/test split and the 90/10 train/validation split are both
    seeded and deterministic.  Raises ConfigError when the training split
    ends up single-class.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if len(inputs) != labels.size:
        raise ConfigError("inputs and labels length mismatch")
    snapshots = np.stack([inp.snapshots for inp in inputs])
    contexts = np.stack([inp.context for inp in inputs])
    train_idx, val_idx, test_idx = split_indices(len(inputs), seed)
    if np.unique(labels[train_idx]).size < 2:
        raise ConfigError("training split contains a single class")

    params = classifier_params(
        snapshots.shape[2], contexts.shape[1], config, seed
    )
    optimizer = nn.Adam(params, lr=config.learning_rate)
    drop_rng = rng_for(seed, "classifier.dropout")
    order_rng = rng_for(seed, "classifier.batches")

    def eval_loss(idx: np.ndarray) -> float:
        probs = _batched_probs(snapshots[idx], contexts[idx], params, l_conv, config)
        return float(
            nn.bce_loss(nn.Tensor(probs[:, None]), labels[idx][:, None]).data
        )

    best_val = float("inf")
    best_state = params.state_dict()
    stale = 0
    train_losses: list[float] = []
    val_losses: list[float] = []
    epochs_run = 0
    for epoch in range(config.epochs):
        epochs_run = epoch + 1
        order = train_idx[order_rng.permutation(train_idx.size)]
        epoch_loss = 0.0
        for lo in range(0, order.size, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            params.zero_grad()
            prob, _ = classifier_forward(
                snapshots[batch],
                contexts[batch],
                params,
                l_conv,
                config,
                training=True,
                rng=drop_rng,
            )
            loss = nn.bce_loss(prob, labels[batch][:, None])
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.data) * batch.size
        train_losses.append(epoch_loss / order.size)
        val_loss = eval_loss(val_idx)
        val_losses.append(val_loss)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = params.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    params.load_state_dict(best_state)

    test_probs = _batched_probs(
        snapshots[test_idx], contexts[test_idx], params, l_conv, config
    )
    test_labels = labels[test_idx]
    predicted = (test_probs >= config.threshold).astype(np.float64)
    precision, recall, f1 = nn.precision_recall_f1(predicted, test_labels)
    metrics = {
        "bce": float(
            nn.bce_loss(nn.Tensor(test_probs[:, None]), test_labels[:, None]).data
        ),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "epochs_run": epochs_run,
        "best_val_loss": best_val,
        "train_loss": train_losses,
        "val_loss": val_losses,
        "n_train": int(train_idx.size),
        "n_val": int(val_idx.size),
        "n_test": int(test_idx.size),
        "seed": seed,
    }
    return TrainedClassifier(params=params, config=config, metrics=metrics)


def extract_latent_features(
    inputs: list[ClassifierInput],
    params: nn.ModelParams,
    l_conv: np.ndarray,
    config: ClassifierConfig,
    batch_size: int = 64,
) -> dict[str, np.ndarray]:
    """Evaluation-mode latent feature vector per incident id."""
    feats: dict[str, np.ndarray] = {}
    for lo in range(0, len(inputs), batch_size):
        chunk = inputs[lo : lo + batch_size]
        _, latent = classifier_forward(
            np.stack([inp.snapshots for inp in chunk]),
            np.stack([inp.context for inp in chunk]),
            params,
            l_conv,
            config,
            training=False,
        )
        for inp, row in zip(chunk, latent.data):
            feats[inp.incident_id] = np.array(row)
    return feats


# ---------------------------------------------------------------------------
# persistence


def save_classifier(
    path: Path, trained: TrainedClassifier, schema: ContextSchema, n_flows: int
) -> None:
    meta = {
        "model": "impact-classifier",
        "n_flows": n_flows,
        "schema": schema.to_dict(),
        "config": {
            "gcn_hidden": trained.config.gcn_hidden,
            "snapshot_dim": trained.config.snapshot_dim,
            "lstm_hidden": trained.config.lstm_hidden,
            "context_dim": trained.config.context_dim,
            "latent_dim": trained.config.latent_dim,
            "window_before": trained.config.window_before,
            "window_after": trained.config.window_after,
            "threshold": trained.config.threshold,
        },
    }
    nn.save_params(path, trained.params, meta)


def load_classifier(
    path: Path, n_flows: int
) -> tuple[nn.ModelParams, ContextSchema, ClassifierConfig]:
    if not Path(path).exists():
        raise MissingArtifactError(f"classifier checkpoint not found: {path}")
    arrays, meta = nn.load_params(path)
    if meta.get("model") != "impact-classifier":
        raise ParseError(f"{path}: not an impact-classifier checkpoint")
    if int(meta["n_flows"]) != n_flows:
        raise ConfigError(
            f"{path}: checkpoint built for {meta['n_flows']} flows, "
            f"graph has {n_flows}"
        )
    params = nn.ModelParams()
    for name, arr in arrays.items():
        params.add(name, arr)
    schema = ContextSchema.from_dict(meta["schema"])
    config = ClassifierConfig(**meta["config"])
    return params, schema, config


# ---------------------------------------------------------------------------
# latent feature file


def write_features_csv(path: Path, features: dict[str, np.ndarray]) -> None:
    dims = {feat.size for feat in features.values()}
    if len(dims) > 1:
        raise ConfigError("latent features must share one dimension")
    dim = dims.pop() if dims else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["incident_id"] + [f"f{i}" for i in range(dim)])
        for incident_id in sorted(features):
            row = [incident_id] + [format_float(v) for v in features[incident_id]]
            writer.writerow(row)


def load_features_csv(path: Path) -> dict[str, np.ndarray]:
    if not Path(path).exists():
        raise MissingArtifactError(f"latent features not found: {path}")
    feats: dict[str, np.ndarray] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "incident_id":
            raise ParseError(f"{path}: unexpected features header {header!r}")
        dim = len(header) - 1
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise ParseError(f"{path}:{lineno}: expected {dim + 1} fields")
            try:
                feats[row[0]] = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return feats
