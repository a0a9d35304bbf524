"""Incident-aware graph-convolutional speed predictor and reference baselines.

One prediction window at target slot t carries:

* spatio-temporal branch: the last 48 speed slots, graph-convolved per slot
  (two layers), flattened through an FC, concatenated with per-slot weather,
  and run through an LSTM; k per-step heads expand the final hidden state;
* incident branch: latent features of incidents that started in slots
  [t-25, t-1], in ascending start order, folded by a vanilla RNN (a window
  with no incidents contributes an all-zero summary);
* periodic branch: speeds at the same target slots on the previous 5 days,
  flattened through one FC layer.

The three summaries are fused by a 256-unit FC and an affine output layer
producing k future speed vectors.  Ablations keep the full architecture and
parameter shapes, zeroing only the disabled branch summary, so variants
differ in information alone.  Baselines: persistence, per-slot-of-day
historical average, and a plain LSTM over raw speeds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import SLOTS_PER_DAY, IncidentRecord, SpeedTable, WeatherRecord
from .errors import ConfigError, MissingArtifactError, ParseError
from .utils import format_float, rng_for

VARIANTS = ("st_only", "st_periodic", "full")


@dataclass(frozen=True)
class DigcConfig:
    horizon: int = 1  # k future slots per prediction
    history_slots: int = 48
    gcn_hidden: int = 32
    gcn_fc_dim: int = 64
    lstm_hidden: int = 64
    head_dim: int = 64  # width of each per-step output unit
    rnn_hidden: int = 128
    periodic_fc_dim: int = 64
    fusion_dim: int = 256
    latent_dim: int = 16
    dropout_keep: float = 0.5
    learning_rate: float = 0.001
    epochs: int = 8
    batch_size: int = 8
    patience: int = 3
    periodic_days: int = 5
    incident_lookback: int = 25  # latent features of incidents in [t-25, t-1]
    use_periodic: bool = True
    use_incident: bool = True
    train_stride: int = 1
    eval_stride: int = 1

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.history_slots < 1:
            raise ConfigError("history_slots must be >= 1")
        if self.use_incident and not self.use_periodic:
            raise ConfigError(
                "the incident branch extends the periodic variant; "
                "use_incident requires use_periodic"
            )
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError("dropout_keep must lie in (0, 1]")
        if self.train_stride < 1 or self.eval_stride < 1:
            raise ConfigError("strides must be >= 1")

    @property
    def variant(self) -> str:
        if self.use_incident:
            return "full"
        return "st_periodic" if self.use_periodic else "st_only"


# ---------------------------------------------------------------------------
# weather encoding


@dataclass(frozen=True)
class WeatherSchema:
    weather_types: tuple[str, ...]
    temp_min: float
    temp_max: float

    @property
    def width(self) -> int:
        return len(self.weather_types) + 2  # one-hot + temperature + sunrise

    def to_dict(self) -> dict:
        return {
            "weather_types": list(self.weather_types),
            "temp_min": self.temp_min,
            "temp_max": self.temp_max,
        }

    @staticmethod
    def from_dict(raw: dict) -> "WeatherSchema":
        return WeatherSchema(
            weather_types=tuple(raw["weather_types"]),
            temp_min=float(raw["temp_min"]),
            temp_max=float(raw["temp_max"]),
        )


def build_weather_schema(records: list[WeatherRecord]) -> WeatherSchema:
    if not records:
        raise ConfigError("cannot build a weather schema from zero records")
    types = tuple(sorted({rec.weather_type for rec in records}))
    temps = [rec.temperature_c for rec in records]
    return WeatherSchema(
        weather_types=types, temp_min=min(temps), temp_max=max(temps)
    )


def encode_weather_matrix(
    records: list[WeatherRecord], schema: WeatherSchema
) -> np.ndarray:
    """Per-slot weather features, shape (n_slots, schema.width)."""
    mat = np.zeros((len(records), schema.width))
    span = schema.temp_max - schema.temp_min
    for row, rec in enumerate(records):
        if rec.weather_type in schema.weather_types:
            mat[row, schema.weather_types.index(rec.weather_type)] = 1.0
        norm_t = (rec.temperature_c - schema.temp_min) / span if span > 0 else 0.0
        mat[row, len(schema.weather_types)] = min(max(norm_t, 0.0), 1.0)
        mat[row, len(schema.weather_types) + 1] = rec.sunrise_offset_min / 1440.0
    return mat


# ---------------------------------------------------------------------------
# window assembly


@dataclass(eq=False)
class PredictionWindow:
    """Everything needed to predict speeds at slots [t, t+k)."""

    target_slot: int
    history: np.ndarray  # (history_slots, N) km/h
    weather: np.ndarray  # (history_slots, weather_dim)
    periodic: np.ndarray  # (periodic_days, k, N) km/h
    incident_features: np.ndarray  # (m, latent_dim); m may be 0
    target: np.ndarray  # (k, N) km/h
    incident_recent: bool = False  # an incident started within the lookback


@dataclass(eq=False)
class WindowSet:
    windows: list[PredictionWindow]
    speed_scale: float
    weather_dim: int
    latent_dim: int
    n_flows: int
    first_eligible_slot: int
    skipped_slots: int = 0  # slots without enough history/periodic lookback


def assemble_windows(
    table: SpeedTable,
    weather_records: list[WeatherRecord],
    incidents: list[IncidentRecord],
    latent_features: dict[str, np.ndarray] | None,
    config: DigcConfig,
    schema: WeatherSchema | None = None,
    speed_scale: float | None = None,
) -> WindowSet:
    """Build one window per eligible target slot, in ascending slot order.

    Eligibility is variant-independent (periodic and incident inputs are
    assembled even when a variant later zeroes them) so every variant sees
    the identical target set.  ``latent_features`` may be None only when the
    incident branch is disabled; a missing feature row for an in-window
    incident is an error otherwise.
    """
    if len(weather_records) != table.n_slots:
        raise ConfigError("weather records must cover every speed slot")
    if schema is None:
        schema = build_weather_schema(weather_records)
    weather_mat = encode_weather_matrix(weather_records, schema)
    if speed_scale is None:
        speed_scale = float(table.speeds.max())
    if speed_scale <= 0:
        raise ConfigError("speed scale must be positive")

    k = config.horizon
    first = max(config.history_slots, config.periodic_days * SLOTS_PER_DAY)
    last = table.n_slots - k  # inclusive upper bound for target slot
    if last < first:
        raise ConfigError("speed table too short for any prediction window")

    starts = [(table.slot_of(inc.start_time), inc.incident_id) for inc in incidents]
    starts.sort()
    start_slots = np.array([s for s, _ in starts], dtype=np.int64)

    latent_dim = config.latent_dim
    if latent_features:
        dims = {feat.size for feat in latent_features.values()}
        if len(dims) != 1:
            raise ConfigError("latent features must share one dimension")
        latent_dim = dims.pop()

    windows: list[PredictionWindow] = []
    for t in range(first, last + 1):
        lo = np.searchsorted(start_slots, t - config.incident_lookback, side="left")
        hi = np.searchsorted(start_slots, t - 1, side="right")
        feats = np.zeros((0, latent_dim))
        if config.use_incident and hi > lo:
            rows = []
            for s, incident_id in starts[lo:hi]:
                if latent_features is None or incident_id not in latent_features:
                    raise MissingArtifactError(
                        f"no latent features for incident {incident_id!r}"
                    )
                rows.append(latent_features[incident_id])
            feats = np.stack(rows)
        periodic = np.stack(
            [
                table.speeds[t - d * SLOTS_PER_DAY : t - d * SLOTS_PER_DAY + k]
                for d in range(config.periodic_days, 0, -1)
            ]
        )
        windows.append(
            PredictionWindow(
                target_slot=t,
                history=table.speeds[t - config.history_slots : t],
                weather=weather_mat[t - config.history_slots : t],
                periodic=periodic,
                incident_features=feats,
                target=table.speeds[t : t + k],
                incident_recent=hi > lo,
            )
        )
    return WindowSet(
        windows=windows,
        speed_scale=speed_scale,
        weather_dim=schema.width,
        latent_dim=latent_dim,
        n_flows=table.n_flows,
        first_eligible_slot=first,
        skipped_slots=table.n_slots - len(windows),
    )


def split_windows(
    window_set: WindowSet, n_slots: int
) -> tuple[list[PredictionWindow], list[PredictionWindow], list[PredictionWindow]]:
    """Chronological train/validation/test split.

    Four weeks or more of data split 3 train weeks / rest test; shorter
    tables split 75/25 by slot.  The last 10% of training windows (by time)
    become the validation set.
    """
    if n_slots >= 28 * SLOTS_PER_DAY:
        split_slot = 21 * SLOTS_PER_DAY
    else:
        split_slot = int(0.75 * n_slots)
    train = [w for w in window_set.windows if w.target_slot < split_slot]
    test = [w for w in window_set.windows if w.target_slot >= split_slot]
    if not train or not test:
        raise ConfigError("time split produced an empty train or test set")
    n_val = max(1, int(round(0.1 * len(train))))
    return train[:-n_val], train[-n_val:], test


# ---------------------------------------------------------------------------
# model


def digc_params(
    n_flows: int, weather_dim: int, config: DigcConfig, seed: int
) -> nn.ModelParams:
    rng = rng_for(seed, "digc.init")
    g, f, h = config.gcn_hidden, config.gcn_fc_dim, config.lstm_hidden
    k = config.horizon
    params = nn.ModelParams()

    def add(name: str, fan_in: int, fan_out: int, shape=None) -> None:
        params.add(name, nn.xavier_uniform(rng, fan_in, fan_out, shape))

    def add_bias(name: str, width: int) -> None:
        params.add(name, np.zeros(width))

    add("st.gcn1.theta", 1, g)
    add("st.gcn2.theta", g, g)
    add("st.fc.w", n_flows * g, f)
    add_bias("st.fc.b", f)
    add("st.lstm.wx", f + weather_dim, 4 * h, shape=(f + weather_dim, 4 * h))
    add("st.lstm.wh", h, 4 * h, shape=(h, 4 * h))
    lstm_b = np.zeros(4 * h)
    lstm_b[h : 2 * h] = 1.0  # open forget gates at init
    params.add("st.lstm.b", lstm_b)
    for j in range(k):
        add(f"st.head{j}.w", h, config.head_dim)
        add_bias(f"st.head{j}.b", config.head_dim)
    add("inci.rnn.wx", config.latent_dim, config.rnn_hidden,
        shape=(config.latent_dim, config.rnn_hidden))
    add("inci.rnn.wh", config.rnn_hidden, config.rnn_hidden)
    add_bias("inci.rnn.b", config.rnn_hidden)
    add("per.fc.w", config.periodic_days * k * n_flows, config.periodic_fc_dim)
    add_bias("per.fc.b", config.periodic_fc_dim)
    fusion_in = k * config.head_dim + config.rnn_hidden + config.periodic_fc_dim
    add("fusion.w", fusion_in, config.fusion_dim)
    add_bias("fusion.b", config.fusion_dim)
    add("out.w", config.fusion_dim, k * n_flows)
    add_bias("out.b", k * n_flows)
    return params


def digc_forward(
    history: np.ndarray,
    weather: np.ndarray,
    periodic: np.ndarray,
    incident_features: np.ndarray | None,
    params: nn.ModelParams,
    l_conv: np.ndarray,
    config: DigcConfig,
    speed_scale: float,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> nn.Tensor:
    """Batched forward pass over windows sharing one incident-sequence length.

    ``history`` is (B, T, N) km/h, ``weather`` (B, T, Wd), ``periodic``
    (B, D, k, N) km/h, ``incident_features`` (B, m, latent) or None for m=0.
    Returns normalized predictions, shape (B, k, N); multiply by
    ``speed_scale`` for km/h.
    """
    p = dict(params.items())
    lap = nn.Tensor(l_conv)
    batch, t_hist, n_flows = history.shape
    k = config.horizon

    x = nn.Tensor(history[..., None] / speed_scale)
    h1 = nn.gcn_layer(lap, x, p["st.gcn1.theta"], activation="relu")
    h1 = nn.dropout(h1, config.dropout_keep, training, rng)
    h2 = nn.gcn_layer(lap, h1, p["st.gcn2.theta"], activation="relu")
    h2 = nn.dropout(h2, config.dropout_keep, training, rng)
    flat = h2.reshape((batch, t_hist, n_flows * config.gcn_hidden))
    per_slot = nn.dense(flat, p["st.fc.w"], p["st.fc.b"], activation="relu")
    seq = nn.concat([per_slot, nn.Tensor(weather)], axis=2)

    h = nn.zeros((batch, config.lstm_hidden))
    c = nn.zeros((batch, config.lstm_hidden))
    for t in range(t_hist):
        h, c = nn.lstm_step(
            seq[:, t, :], h, c, p["st.lstm.wx"], p["st.lstm.wh"], p["st.lstm.b"]
        )
    y_s = nn.concat(
        [
            nn.dense(h, p[f"st.head{j}.w"], p[f"st.head{j}.b"], activation="relu")
            for j in range(k)
        ],
        axis=1,
    )

    if config.use_periodic:
        per_flat = nn.Tensor(periodic.reshape(batch, -1) / speed_scale)
        y_p = nn.dense(per_flat, p["per.fc.w"], p["per.fc.b"], activation="relu")
    else:
        y_p = nn.zeros((batch, config.periodic_fc_dim))

    if (
        config.use_incident
        and incident_features is not None
        and incident_features.shape[1] > 0
    ):
        hr = nn.zeros((batch, config.rnn_hidden))
        for m in range(incident_features.shape[1]):
            hr = nn.rnn_step(
                nn.Tensor(incident_features[:, m, :]),
                hr,
                p["inci.rnn.wx"],
                p["inci.rnn.wh"],
                p["inci.rnn.b"],
            )
        y_inci = hr
    else:
        y_inci = nn.zeros((batch, config.rnn_hidden))

    fused = nn.dense(
        nn.concat([y_s, y_inci, y_p], axis=1),
        p["fusion.w"],
        p["fusion.b"],
        activation="relu",
    )
    out = nn.dense(fused, p["out.w"], p["out.b"])
    return out.reshape((batch, k, n_flows))


def _group_by_length(
    windows: list[PredictionWindow],
) -> dict[int, list[PredictionWindow]]:
    groups: dict[int, list[PredictionWindow]] = {}
    for w in windows:
        groups.setdefault(w.incident_features.shape[0], []).append(w)
    return groups


def _stack_group(
    group: list[PredictionWindow],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | None, np.ndarray]:
    history = np.stack([w.history for w in group])
    weather = np.stack([w.weather for w in group])
    periodic = np.stack([w.periodic for w in group])
    m = group[0].incident_features.shape[0]
    feats = np.stack([w.incident_features for w in group]) if m > 0 else None
    target = np.stack([w.target for w in group])
    return history, weather, periodic, feats, target


def latent_feature_stats(
    windows: list[PredictionWindow], latent_dim: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std of the incident features in ``windows``.

    The classifier's latent layer is unbounded, so its features are
    standardized before entering the (tanh) incident RNN, exactly as speeds
    are divided by ``speed_scale``.  Returns identity stats (zero center,
    unit scale) when no window carries an incident sequence, which makes the
    transform a no-op for variants with the incident branch disabled.
    """
    rows = [w.incident_features for w in windows if w.incident_features.shape[0]]
    if not rows:
        return np.zeros(latent_dim), np.ones(latent_dim)
    stacked = np.concatenate(rows, axis=0)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-6)


def _apply_latent_stats(
    feats: np.ndarray | None,
    latent_stats: tuple[np.ndarray, np.ndarray] | None,
) -> np.ndarray | None:
    if feats is None or latent_stats is None:
        return feats
    center, scale = latent_stats
    return (feats - center) / scale


def predict_windows(
    windows: list[PredictionWindow],
    params: nn.ModelParams,
    l_conv: np.ndarray,
    config: DigcConfig,
    speed_scale: float,
    batch_size: int = 32,
    latent_stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Evaluation-mode km/h predictions (clamped at 0) for each window.

    ``latent_stats`` must be the standardization stats the checkpoint was
    trained with (identity stats and None are equivalent).
    """
    out = np.empty((len(windows), config.horizon, windows[0].history.shape[1]))
    index_of = {id(w): i for i, w in enumerate(windows)}
    for group in _group_by_length(windows).values():
        for lo in range(0, len(group), batch_size):
            chunk = group[lo : lo + batch_size]
            history, weather, periodic, feats, _ = _stack_group(chunk)
            pred = digc_forward(
                history, weather, periodic,
                _apply_latent_stats(feats, latent_stats),
                params, l_conv, config,
                speed_scale, training=False,
            )
            km_h = np.maximum(pred.data * speed_scale, 0.0)
            for w, row in zip(chunk, km_h):
                out[index_of[id(w)]] = row
    return out


@dataclass(eq=False)
class TrainedPredictor:
    params: nn.ModelParams
    config: DigcConfig
    speed_scale: float
    latent_stats: tuple[np.ndarray, np.ndarray] | None = None
    metrics: dict = field(default_factory=dict)


def _mse_over(
    windows: list[PredictionWindow],
    params: nn.ModelParams,
    l_conv: np.ndarray,
    config: DigcConfig,
    speed_scale: float,
    latent_stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    preds = predict_windows(
        windows, params, l_conv, config, speed_scale, latent_stats=latent_stats
    )
    targets = np.stack([w.target for w in windows])
    return float(np.mean(((preds - targets) / speed_scale) ** 2))


def evaluate_mape(
    windows: list[PredictionWindow], predictions: np.ndarray
) -> dict:
    """Overall and per-step MAPE; targets below 1 km/h are excluded."""
    targets = np.stack([w.target for w in windows])
    overall, excluded = nn.mape(predictions, targets)
    per_step = [
        nn.mape(predictions[:, j, :], targets[:, j, :])[0]
        for j in range(targets.shape[1])
    ]
    return {
        "mape_overall": overall,
        "mape_per_step": per_step,
        "excluded_targets": excluded,
        "n_windows": len(windows),
    }


def _sample_train(
    train: list[PredictionWindow], stride: int
) -> list[PredictionWindow]:
    """Every stride-th window, plus every window shortly after an incident.

    Incident-affected cells are a small share of the data, so a uniform
    stride starves them of gradient signal; keeping all incident-recent
    windows concentrates training on the hard regime without reweighting
    the loss.  Identical across ablation variants (the flag comes from the
    incident records, not from any model input).
    """
    return [w for i, w in enumerate(train) if i % stride == 0 or w.incident_recent]


def train_digc(
    window_set: WindowSet,
    n_slots: int,
    l_conv: np.ndarray,
    config: DigcConfig,
    seed: int,
) -> TrainedPredictor:
    """Train with Adam on MSE over normalized speeds; early stop on val MSE.

    Gradient batches group windows by incident-sequence length so each
    sub-batch runs one fixed-length RNN; contributions are reweighted to keep
    the gradient equal to the batch mean.  Incident features are standardized
    with statistics from the training range (stored on the result for
    inference).  Divergence (non-finite loss) raises FloatingPointError.
    """
    train, val, test = split_windows(window_set, n_slots)
    latent_stats = latent_feature_stats(train, window_set.latent_dim)
    train = _sample_train(train, config.train_stride)
    val = val[:: max(1, config.eval_stride)]
    test_eval = test[:: max(1, config.eval_stride)]
    if not train or not val or not test_eval:
        raise ConfigError("strides emptied a split")

    params = digc_params(window_set.n_flows, window_set.weather_dim, config, seed)
    optimizer = nn.Adam(params, lr=config.learning_rate)
    drop_rng = rng_for(seed, "digc.dropout")
    order_rng = rng_for(seed, "digc.batches")
    scale = window_set.speed_scale

    best_val = float("inf")
    best_state = params.state_dict()
    stale = 0
    train_losses: list[float] = []
    val_losses: list[float] = []
    epochs_run = 0
    for epoch in range(config.epochs):
        epochs_run = epoch + 1
        order = order_rng.permutation(len(train))
        epoch_loss = 0.0
        for lo in range(0, order.size, config.batch_size):
            batch = [train[i] for i in order[lo : lo + config.batch_size]]
            params.zero_grad()
            batch_loss = 0.0
            for group in _group_by_length(batch).values():
                history, weather, periodic, feats, target = _stack_group(group)
                pred = digc_forward(
                    history, weather, periodic,
                    _apply_latent_stats(feats, latent_stats),
                    params, l_conv, config,
                    scale, training=True, rng=drop_rng,
                )
                loss = nn.mse_loss(pred, target / scale) * (len(group) / len(batch))
                loss.backward()
                batch_loss += float(loss.data)
            if not np.isfinite(batch_loss):
                raise FloatingPointError(
                    f"training diverged at epoch {epoch}: loss={batch_loss}"
                )
            optimizer.step()
            epoch_loss += batch_loss * len(batch)
        train_losses.append(epoch_loss / order.size)
        val_loss = _mse_over(val, params, l_conv, config, scale, latent_stats)
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

    predictions = predict_windows(
        test_eval, params, l_conv, config, scale, latent_stats=latent_stats
    )
    metrics = evaluate_mape(test_eval, predictions)
    metrics.update(
        {
            "variant": config.variant,
            "horizon": config.horizon,
            "seed": seed,
            "epochs_run": epochs_run,
            "best_val_mse": best_val,
            "train_loss": train_losses,
            "val_loss": val_losses,
            "n_train": len(train),
            "n_val": len(val),
            "n_test": len(test_eval),
        }
    )
    return TrainedPredictor(
        params=params, config=config, speed_scale=scale,
        latent_stats=latent_stats, metrics=metrics,
    )


# ---------------------------------------------------------------------------
# baselines


def persistence_predictions(windows: list[PredictionWindow], k: int) -> np.ndarray:
    """Repeat the latest observed speed for every future step."""
    return np.stack([np.tile(w.history[-1], (k, 1)) for w in windows])


def historical_average_predictions(
    windows: list[PredictionWindow], table: SpeedTable, split_slot: int, k: int
) -> np.ndarray:
    """Per-flow mean speed at the same slot-of-day over the training range."""
    sums = np.zeros((SLOTS_PER_DAY, table.n_flows))
    counts = np.zeros(SLOTS_PER_DAY)
    for s in range(min(split_slot, table.n_slots)):
        sums[s % SLOTS_PER_DAY] += table.speeds[s]
        counts[s % SLOTS_PER_DAY] += 1
    if np.any(counts == 0):
        raise ConfigError("training range does not cover every slot of day")
    avg = sums / counts[:, None]
    return np.stack(
        [avg[[(w.target_slot + j) % SLOTS_PER_DAY for j in range(k)]] for w in windows]
    )


def lstm_baseline_params(n_flows: int, config: DigcConfig, seed: int) -> nn.ModelParams:
    rng = rng_for(seed, "lstm_baseline.init")
    h = config.lstm_hidden
    params = nn.ModelParams()
    params.add("lstm.wx", nn.xavier_uniform(rng, n_flows, 4 * h, (n_flows, 4 * h)))
    params.add("lstm.wh", nn.xavier_uniform(rng, h, 4 * h, (h, 4 * h)))
    lstm_b = np.zeros(4 * h)
    lstm_b[h : 2 * h] = 1.0  # open forget gates at init
    params.add("lstm.b", lstm_b)
    for j in range(config.horizon):
        params.add(f"head{j}.w", nn.xavier_uniform(rng, h, n_flows))
        params.add(f"head{j}.b", np.zeros(n_flows))
    return params


def lstm_baseline_forward(
    history: np.ndarray,
    params: nn.ModelParams,
    config: DigcConfig,
    speed_scale: float,
) -> nn.Tensor:
    p = dict(params.items())
    batch, t_hist, n_flows = history.shape
    x = nn.Tensor(history / speed_scale)
    h = nn.zeros((batch, config.lstm_hidden))
    c = nn.zeros((batch, config.lstm_hidden))
    for t in range(t_hist):
        h, c = nn.lstm_step(x[:, t, :], h, c, p["lstm.wx"], p["lstm.wh"], p["lstm.b"])
    steps = [
        nn.dense(h, p[f"head{j}.w"], p[f"head{j}.b"]).reshape((batch, 1, n_flows))
        for j in range(config.horizon)
    ]
    return nn.concat(steps, axis=1)


def train_lstm_baseline(
    window_set: WindowSet, n_slots: int, config: DigcConfig, seed: int
) -> tuple[nn.ModelParams, dict]:
    """Plain-LSTM reference trained with the same loop shape as the full model."""
    train, val, test = split_windows(window_set, n_slots)
    train = _sample_train(train, config.train_stride)
    val = val[:: max(1, config.eval_stride)]
    test_eval = test[:: max(1, config.eval_stride)]
    params = lstm_baseline_params(window_set.n_flows, config, seed)
    optimizer = nn.Adam(params, lr=config.learning_rate)
    order_rng = rng_for(seed, "lstm_baseline.batches")
    scale = window_set.speed_scale

    def predictions_for(windows: list[PredictionWindow]) -> np.ndarray:
        preds = []
        for lo in range(0, len(windows), 32):
            chunk = windows[lo : lo + 32]
            history = np.stack([w.history for w in chunk])
            out = lstm_baseline_forward(history, params, config, scale)
            preds.append(np.maximum(out.data * scale, 0.0))
        return np.concatenate(preds)

    best_val = float("inf")
    best_state = params.state_dict()
    stale = 0
    for _epoch in range(config.epochs):
        order = order_rng.permutation(len(train))
        for lo in range(0, order.size, config.batch_size):
            batch = [train[i] for i in order[lo : lo + config.batch_size]]
            history = np.stack([w.history for w in batch])
            target = np.stack([w.target for w in batch])
            params.zero_grad()
            pred = lstm_baseline_forward(history, params, config, scale)
            loss = nn.mse_loss(pred, target / scale)
            if not np.isfinite(float(loss.data)):
                raise FloatingPointError("baseline training diverged")
            loss.backward()
            optimizer.step()
        val_preds = predictions_for(val)
        val_targets = np.stack([w.target for w in val])
        val_loss = float(np.mean(((val_preds - val_targets) / scale) ** 2))
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = params.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    params.load_state_dict(best_state)
    metrics = evaluate_mape(test_eval, predictions_for(test_eval))
    metrics["baseline"] = "plain_lstm"
    return params, metrics


def run_baseline(
    name: str,
    window_set: WindowSet,
    table: SpeedTable,
    config: DigcConfig,
    seed: int,
) -> dict:
    """Evaluate one reference baseline on the shared test windows."""
    _, _, test = split_windows(window_set, table.n_slots)
    test_eval = test[:: max(1, config.eval_stride)]
    k = config.horizon
    if name == "persistence":
        preds = persistence_predictions(test_eval, k)
    elif name == "historical_average":
        split_slot = (
            21 * SLOTS_PER_DAY
            if table.n_slots >= 28 * SLOTS_PER_DAY
            else int(0.75 * table.n_slots)
        )
        preds = historical_average_predictions(test_eval, table, split_slot, k)
    elif name == "plain_lstm":
        _, metrics = train_lstm_baseline(window_set, table.n_slots, config, seed)
        return metrics
    else:
        raise ConfigError(f"unknown baseline {name!r}")
    metrics = evaluate_mape(test_eval, preds)
    metrics["baseline"] = name
    return metrics


# ---------------------------------------------------------------------------
# persistence of trained predictors


def save_predictor(path: Path, trained: TrainedPredictor, n_flows: int,
                   weather_schema: WeatherSchema) -> None:
    cfg = trained.config
    if trained.latent_stats is None:
        center = np.zeros(cfg.latent_dim)
        scale = np.ones(cfg.latent_dim)
    else:
        center, scale = trained.latent_stats
    meta = {
        "model": "digc-predictor",
        "n_flows": n_flows,
        "speed_scale": trained.speed_scale,
        "latent_center": [float(v) for v in center],
        "latent_scale": [float(v) for v in scale],
        "weather_schema": weather_schema.to_dict(),
        "config": {
            "horizon": cfg.horizon,
            "history_slots": cfg.history_slots,
            "gcn_hidden": cfg.gcn_hidden,
            "gcn_fc_dim": cfg.gcn_fc_dim,
            "lstm_hidden": cfg.lstm_hidden,
            "head_dim": cfg.head_dim,
            "rnn_hidden": cfg.rnn_hidden,
            "periodic_fc_dim": cfg.periodic_fc_dim,
            "fusion_dim": cfg.fusion_dim,
            "latent_dim": cfg.latent_dim,
            "periodic_days": cfg.periodic_days,
            "incident_lookback": cfg.incident_lookback,
            "use_periodic": cfg.use_periodic,
            "use_incident": cfg.use_incident,
        },
    }
    nn.save_params(path, trained.params, meta)


def load_predictor(
    path: Path, n_flows: int
) -> tuple[
    nn.ModelParams,
    DigcConfig,
    float,
    WeatherSchema,
    tuple[np.ndarray, np.ndarray],
]:
    if not Path(path).exists():
        raise MissingArtifactError(f"predictor checkpoint not found: {path}")
    arrays, meta = nn.load_params(path)
    if meta.get("model") != "digc-predictor":
        raise ParseError(f"{path}: not a digc-predictor checkpoint")
    if int(meta["n_flows"]) != n_flows:
        raise ConfigError(
            f"{path}: checkpoint built for {meta['n_flows']} flows, "
            f"graph has {n_flows}"
        )
    params = nn.ModelParams()
    for name, arr in arrays.items():
        params.add(name, arr)
    try:
        config = DigcConfig(**meta["config"])
    except TypeError as exc:
        raise ParseError(f"{path}: bad predictor config: {exc}") from exc
    schema = WeatherSchema.from_dict(meta["weather_schema"])
    latent_stats = (
        np.array(meta["latent_center"], dtype=float),
        np.array(meta["latent_scale"], dtype=float),
    )
    return params, config, float(meta["speed_scale"]), schema, latent_stats


def write_predictions_csv(
    path: Path, windows: list[PredictionWindow], predictions: np.ndarray
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "flow_id", "step", "predicted_speed"])
        for w, pred in zip(windows, predictions):
            for flow in range(pred.shape[1]):
                for j in range(pred.shape[0]):
                    writer.writerow(
                        [w.target_slot, flow, j, format_float(pred[j, flow])]
                    )
