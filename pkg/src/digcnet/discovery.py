"""Critical incident discovery from speed similarity dynamics.

For each slot t, a Pearson similarity matrix S^t is computed over the last T
slots of speeds.  A flow's anomalous degree (AD) measures how much its
similarity to its normally-similar peers just dropped:

    SD^t   = max(0, S^{t-1} - S^t)                       (elementwise)
    HS_i^t = { j != i : S^t_ij >= delta }                (same cluster only)
    AD_i^t = sum_{j in HS} S^{t-1}_ij SD^t_ij / sum_{j in HS} S^{t-1}_ij

The relative speed variation (RSV) measures how far the current speed sits
from its recent mean, normalized by the local day's maximum:

    RSV_i^t = | mean(v_i over last T_rsv slots) - v_i^t | / max window speed

The incident effect score blends both: IES = rho * AD + (1 - rho) * RSV.
An incident is critical when any candidate flow (within radius of the
incident) reaches IES >= theta somewhere in the influence window around the
incident start.  Clustering restricts similarity peers to the same district,
which bounds cost on large cities without changing nearby-flow scores.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FlowSegment, IncidentRecord, SpeedTable
from .errors import ConfigError
from .graph import centroid_array, distances_to_point
from .utils import format_float


@dataclass(frozen=True)
class DiscoveryConfig:
    delta: float = 0.5  # similarity threshold for the highly-similar set
    rho: float = 0.6  # IES weight on AD versus RSV
    theta: float = 0.15  # criticality threshold on the in-window IES
    radius_m: float = 500.0  # candidate flow radius around an incident
    similarity_window: int = 12  # slots per similarity matrix (one hour)
    rsv_window: int = 10  # slots in the RSV recent mean
    norm_half_window: int = 144  # +-12 h window for the RSV normalizer
    influence_half_window: int = 6  # +-30 min around the incident start
    cluster_count: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError("delta must lie in (0, 1]")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        if self.theta < 0.0:
            raise ConfigError("theta must be >= 0")
        if self.similarity_window < 2:
            raise ConfigError("similarity_window must be >= 2")
        if self.rsv_window < 1:
            raise ConfigError("rsv_window must be >= 1")
        if self.radius_m <= 0:
            raise ConfigError("radius_m must be positive")
        if self.cluster_count < 1:
            raise ConfigError("cluster_count must be >= 1")


# ---------------------------------------------------------------------------
# similarity


def pearson_similarity(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; zero-variance input yields 0 by convention."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigError("pearson_similarity expects equal-length 1-D arrays")
    if x.size < 2:
        raise ConfigError("pearson_similarity needs at least 2 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt((xc * xc).sum()))
    sy = float(np.sqrt((yc * yc).sum()))
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float((xc * yc).sum() / (sx * sy))


def similarity_matrix(
    window: np.ndarray, cluster_labels: np.ndarray | None = None
) -> np.ndarray:
    """Pairwise Pearson similarity of flow speed windows, shape (N, N).

    ``window`` holds T consecutive slots for N flows, shape (T, N).
    Zero-variance flows get similarity 0 to every peer; the diagonal is 1.
    With cluster labels, cross-cluster entries are 0 (peers are restricted
    to the same district).
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] < 2:
        raise ConfigError("similarity window must be (T>=2, N)")
    centered = window - window.mean(axis=0, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=0))
    safe = np.where(norms > 0.0, norms, 1.0)
    z = centered / safe
    z[:, norms == 0.0] = 0.0
    sim = z.T @ z
    np.fill_diagonal(sim, 1.0)
    if cluster_labels is not None:
        same = cluster_labels[:, None] == cluster_labels[None, :]
        sim = np.where(same, sim, 0.0)
    return sim


def similarity_matrix_at(
    table: SpeedTable,
    t: int,
    config: DiscoveryConfig,
    cluster_labels: np.ndarray | None = None,
) -> np.ndarray:
    """Similarity matrix over the T-slot window ending at slot t inclusive."""
    T = config.similarity_window
    if t < T - 1 or t >= table.n_slots:
        raise ConfigError(
            f"slot {t} lacks a full {T}-slot similarity window"
        )
    return similarity_matrix(table.speeds[t - T + 1 : t + 1], cluster_labels)


def similarity_decrease(s_prev: np.ndarray, s_curr: np.ndarray) -> np.ndarray:
    if s_prev.shape != s_curr.shape:
        raise ConfigError("similarity matrices must share a shape")
    return np.maximum(0.0, s_prev - s_curr)


def anomalous_degrees(
    s_prev: np.ndarray,
    s_curr: np.ndarray,
    delta: float,
    cluster_labels: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized AD for every flow given consecutive similarity matrices."""
    sd = similarity_decrease(s_prev, s_curr)
    mask = s_curr >= delta
    np.fill_diagonal(mask, False)
    if cluster_labels is not None:
        mask &= cluster_labels[:, None] == cluster_labels[None, :]
    weights = np.where(mask, s_prev, 0.0)
    num = (weights * sd).sum(axis=1)
    den = weights.sum(axis=1)
    ad = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return np.maximum(ad, 0.0)


def anomalous_degree(
    flow: int,
    s_prev: np.ndarray,
    s_curr: np.ndarray,
    delta: float,
    cluster_labels: np.ndarray | None = None,
) -> float:
    """Scalar AD for one flow; matches the vectorized form exactly."""
    return float(anomalous_degrees(s_prev, s_curr, delta, cluster_labels)[flow])


# ---------------------------------------------------------------------------
# relative speed variation


def rsv_values(table: SpeedTable, t: int, config: DiscoveryConfig) -> np.ndarray:
    """RSV for every flow at slot t; windows clamp at the table boundary."""
    if t < 0 or t >= table.n_slots:
        raise ConfigError(f"slot {t} out of range")
    lo = max(0, t - config.rsv_window + 1)
    recent_mean = table.speeds[lo : t + 1].mean(axis=0)
    nlo = max(0, t - config.norm_half_window)
    nhi = min(table.n_slots - 1, t + config.norm_half_window)
    denom = table.speeds[nlo : nhi + 1].max(axis=0)
    diff = np.abs(recent_mean - table.speeds[t])
    return np.where(denom > 0.0, diff / np.where(denom > 0.0, denom, 1.0), 0.0)


def relative_speed_variation(
    table: SpeedTable, flow: int, t: int, config: DiscoveryConfig
) -> float:
    return float(rsv_values(table, t, config)[flow])


def incident_effect_score(ad, rsv, rho: float):
    """IES = rho * AD + (1 - rho) * RSV; works on scalars and arrays."""
    return rho * ad + (1.0 - rho) * rsv


# ---------------------------------------------------------------------------
# bulk scoring


@dataclass(eq=False)
class FlowScoreSeries:
    """AD/RSV/IES per (scored slot, flow); rows align with ``slots``."""

    slots: np.ndarray  # (S,) int
    ad: np.ndarray  # (S, N)
    rsv: np.ndarray  # (S, N)
    ies: np.ndarray  # (S, N)


class SimilarityCache:
    """Caches one similarity matrix per slot for reuse across incidents."""

    def __init__(
        self,
        table: SpeedTable,
        config: DiscoveryConfig,
        cluster_labels: np.ndarray | None = None,
    ):
        self.table = table
        self.config = config
        self.cluster_labels = cluster_labels
        self._matrices: dict[int, np.ndarray] = {}

    def matrix(self, t: int) -> np.ndarray:
        got = self._matrices.get(t)
        if got is None:
            got = similarity_matrix_at(self.table, t, self.config, self.cluster_labels)
            self._matrices[t] = got
        return got

    def min_scorable_slot(self) -> int:
        # AD at t needs S^{t-1}, whose window starts at t - similarity_window.
        return self.config.similarity_window

    def ad_row(self, t: int) -> np.ndarray:
        return anomalous_degrees(
            self.matrix(t - 1), self.matrix(t), self.config.delta, self.cluster_labels
        )


def score_slots(
    table: SpeedTable,
    slots,
    config: DiscoveryConfig,
    cluster_labels: np.ndarray | None = None,
    cache: SimilarityCache | None = None,
) -> FlowScoreSeries:
    """Score AD, RSV and IES for every flow at each requested slot."""
    if cache is None:
        cache = SimilarityCache(table, config, cluster_labels)
    slots = np.asarray(list(slots), dtype=np.int64)
    min_slot = cache.min_scorable_slot()
    if slots.size and (slots.min() < min_slot or slots.max() >= table.n_slots):
        raise ConfigError(
            f"scored slots must lie in [{min_slot}, {table.n_slots - 1}]"
        )
    ad = np.empty((slots.size, table.n_flows))
    rsv = np.empty_like(ad)
    for row, t in enumerate(slots):
        ad[row] = cache.ad_row(int(t))
        rsv[row] = rsv_values(table, int(t), config)
    ies = incident_effect_score(ad, rsv, config.rho)
    return FlowScoreSeries(slots=slots, ad=ad, rsv=rsv, ies=ies)


# ---------------------------------------------------------------------------
# incident labelling


@dataclass(frozen=True)
class CriticalityLabel:
    """Discovery verdict for one incident."""

    incident_id: str
    is_critical: bool
    max_ies: float
    affected: tuple[tuple[int, float], ...]  # (flow, max in-window IES) >= theta
    n_candidates: int


def candidate_flows(
    incident: IncidentRecord, flows: list[FlowSegment], radius_m: float
) -> list[int]:
    """Flows whose centroid lies within ``radius_m`` of the incident point."""
    centroids = centroid_array(flows)
    dist = distances_to_point(centroids, (incident.lat, incident.lng))
    return [int(i) for i in np.nonzero(dist <= radius_m)[0]]


def influence_slots(slot: int, config: DiscoveryConfig) -> np.ndarray:
    half = config.influence_half_window
    return np.arange(slot - half, slot + half + 1, dtype=np.int64)


def incident_window_scores(
    incident: IncidentRecord,
    table: SpeedTable,
    flows: list[FlowSegment],
    config: DiscoveryConfig,
    cache: SimilarityCache,
) -> tuple[list[int], np.ndarray, np.ndarray]:
    """(candidate flow ids, AD, RSV) over the influence window.

    Arrays have shape (window slots, n_candidates).  Raises ConfigError when
    the influence window does not fit inside the scorable slot range.
    """
    cands = candidate_flows(incident, flows, config.radius_m)
    slots = influence_slots(table.slot_of(incident.start_time), config)
    if slots[0] < cache.min_scorable_slot() or slots[-1] >= table.n_slots:
        raise ConfigError(
            f"incident {incident.incident_id!r}: influence window "
            f"[{slots[0]}, {slots[-1]}] outside scorable range"
        )
    ad = np.empty((slots.size, len(cands)))
    rsv = np.empty_like(ad)
    for row, t in enumerate(slots):
        ad[row] = cache.ad_row(int(t))[cands]
        rsv[row] = rsv_values(table, int(t), config)[cands]
    return cands, ad, rsv


def label_from_window_scores(
    incident_id: str,
    cands: list[int],
    ad: np.ndarray,
    rsv: np.ndarray,
    rho: float,
    theta: float,
) -> CriticalityLabel:
    if not cands:
        return CriticalityLabel(incident_id, False, 0.0, (), 0)
    ies = incident_effect_score(ad, rsv, rho)
    per_flow_max = ies.max(axis=0)
    affected = tuple(
        (flow, float(score))
        for flow, score in zip(cands, per_flow_max)
        if score >= theta
    )
    return CriticalityLabel(
        incident_id=incident_id,
        is_critical=len(affected) > 0,
        max_ies=float(per_flow_max.max()),
        affected=affected,
        n_candidates=len(cands),
    )


def label_critical(
    incident: IncidentRecord,
    table: SpeedTable,
    flows: list[FlowSegment],
    config: DiscoveryConfig,
    cache: SimilarityCache | None = None,
) -> CriticalityLabel:
    if cache is None:
        cache = SimilarityCache(table, config)
    cands, ad, rsv = incident_window_scores(incident, table, flows, config, cache)
    return label_from_window_scores(
        incident.incident_id, cands, ad, rsv, config.rho, config.theta
    )


@dataclass(eq=False)
class DiscoveryResult:
    labels: list[CriticalityLabel]
    skipped: list[str] = field(default_factory=list)  # incidents near table edges

    @property
    def critical_count(self) -> int:
        return sum(1 for lab in self.labels if lab.is_critical)


def discover(
    table: SpeedTable,
    incidents: list[IncidentRecord],
    flows: list[FlowSegment],
    config: DiscoveryConfig,
    cluster_labels: np.ndarray | None = None,
) -> DiscoveryResult:
    """Label every incident whose influence window is scorable."""
    cache = SimilarityCache(table, config, cluster_labels)
    labels: list[CriticalityLabel] = []
    skipped: list[str] = []
    for incident in incidents:
        try:
            cands, ad, rsv = incident_window_scores(
                incident, table, flows, config, cache
            )
        except ConfigError:
            skipped.append(incident.incident_id)
            continue
        labels.append(
            label_from_window_scores(
                incident.incident_id, cands, ad, rsv, config.rho, config.theta
            )
        )
    return DiscoveryResult(labels=labels, skipped=skipped)


def sweep_grid(
    table: SpeedTable,
    incidents: list[IncidentRecord],
    flows: list[FlowSegment],
    config: DiscoveryConfig,
    rhos: list[float],
    thetas: list[float],
    cluster_labels: np.ndarray | None = None,
) -> list[dict]:
    """Critical-incident counts over a (rho, theta) grid.

    AD and RSV are independent of (rho, theta), so they are computed once
    per incident and reused across the whole grid.
    """
    cache = SimilarityCache(table, config, cluster_labels)
    per_incident: list[tuple[np.ndarray, np.ndarray]] = []
    for incident in incidents:
        try:
            cands, ad, rsv = incident_window_scores(
                incident, table, flows, config, cache
            )
        except ConfigError:
            continue
        if cands:
            per_incident.append((ad, rsv))
        else:
            per_incident.append((np.zeros((1, 0)), np.zeros((1, 0))))
    rows = []
    for rho in rhos:
        maxima = np.array(
            [
                incident_effect_score(ad, rsv, rho).max(initial=-np.inf)
                for ad, rsv in per_incident
            ]
        )
        for theta in thetas:
            rows.append(
                {
                    "rho": float(rho),
                    "theta": float(theta),
                    "critical_count": int((maxima >= theta).sum()),
                    "total": len(per_incident),
                }
            )
    return rows


# ---------------------------------------------------------------------------
# RSV variant validation


@dataclass(frozen=True)
class VariantValidation:
    """AD-correlation of three RSV candidate formulas; lowest wins."""

    correlations: dict[str, float]
    samples: int
    selected: str


VARIANT_NAMES = ("slope_recent_historical", "recent_historical", "historical")


def rsv_variant_values(
    table: SpeedTable, t: int, config: DiscoveryConfig
) -> np.ndarray:
    """Three candidate RSV formulas per flow at slot t, shape (3, N).

    Variant 1 weights historical and most-recent deviations by window slopes,
    variant 2 averages the two deviations, variant 3 keeps the historical
    deviation alone (the production formula).
    """
    lo = max(0, t - config.rsv_window + 1)
    window = table.speeds[lo : t + 1]
    recent_mean = window.mean(axis=0)
    v_t = table.speeds[t]
    v_prev = table.speeds[t - 1] if t >= 1 else v_t
    nlo = max(0, t - config.norm_half_window)
    nhi = min(table.n_slots - 1, t + config.norm_half_window)
    denom = table.speeds[nlo : nhi + 1].max(axis=0)
    safe = np.where(denom > 0.0, denom, 1.0)

    hist_dev = np.abs(recent_mean - v_t)
    recent_dev = np.abs(v_prev - v_t)
    if window.shape[0] >= 2:
        mean_slope = np.abs(np.diff(window, axis=0)).mean(axis=0)
    else:
        mean_slope = np.zeros_like(v_t)
    recent_slope = np.abs(v_t - v_prev)

    v1 = (hist_dev * mean_slope * 0.5 + recent_dev * recent_slope * 0.5) / safe
    v2 = (hist_dev * 0.5 + recent_dev * 0.5) / safe
    v3 = hist_dev / safe
    out = np.stack([v1, v2, v3])
    out[:, denom <= 0.0] = 0.0
    return out


def rsv_variant_validation(
    table: SpeedTable,
    incidents: list[IncidentRecord],
    flows: list[FlowSegment],
    config: DiscoveryConfig,
    cluster_labels: np.ndarray | None = None,
) -> VariantValidation:
    """Correlate each RSV variant with AD around incident starts.

    Pools (slot, candidate flow) samples across all scorable incidents and
    picks the most negatively correlated variant — the one adding the most
    non-redundant signal to the blended score.  Degenerate (constant) series
    report correlation 0.
    """
    cache = SimilarityCache(table, config, cluster_labels)
    ad_samples: list[np.ndarray] = []
    variant_samples: list[np.ndarray] = []
    for incident in incidents:
        cands = candidate_flows(incident, flows, config.radius_m)
        if not cands:
            continue
        slots = influence_slots(table.slot_of(incident.start_time), config)
        if slots[0] < cache.min_scorable_slot() or slots[-1] >= table.n_slots:
            continue
        for t in slots:
            ad_samples.append(cache.ad_row(int(t))[cands])
            variant_samples.append(rsv_variant_values(table, int(t), config)[:, cands])
    if not ad_samples:
        raise ConfigError("no scorable incidents for RSV variant validation")
    ad_pool = np.concatenate(ad_samples)
    variant_pool = np.concatenate(variant_samples, axis=1)
    correlations = {
        name: pearson_similarity(variant_pool[idx], ad_pool)
        for idx, name in enumerate(VARIANT_NAMES)
    }
    selected = min(VARIANT_NAMES, key=lambda name: correlations[name])
    return VariantValidation(
        correlations=correlations, samples=int(ad_pool.size), selected=selected
    )


# ---------------------------------------------------------------------------
# reporting helpers


def temporal_distribution(
    incidents: list[IncidentRecord], labels: list[CriticalityLabel]
) -> list[dict]:
    """Critical/non-critical counts per (hour of day, day category)."""
    verdicts = {lab.incident_id: lab.is_critical for lab in labels}
    counts: dict[tuple[int, str], list[int]] = {}
    for inc in incidents:
        if inc.incident_id not in verdicts:
            continue
        key = (inc.start_time.hour, inc.day_category)
        slot = counts.setdefault(key, [0, 0])
        slot[0 if verdicts[inc.incident_id] else 1] += 1
    rows = []
    for (hour, day_cat) in sorted(counts):
        critical, noncritical = counts[(hour, day_cat)]
        rows.append(
            {
                "hour": hour,
                "day_category": day_cat,
                "critical": critical,
                "noncritical": noncritical,
            }
        )
    return rows


def write_labels_csv(path: Path, labels: list[CriticalityLabel]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["incident_id", "is_critical", "max_ies", "n_affected_flows"])
        for lab in labels:
            writer.writerow(
                [
                    lab.incident_id,
                    int(lab.is_critical),
                    format_float(lab.max_ies),
                    len(lab.affected),
                ]
            )


def write_sweep_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "theta", "critical_count"])
        for row in rows:
            writer.writerow(
                [
                    format_float(row["rho"]),
                    format_float(row["theta"]),
                    row["critical_count"],
                ]
            )


def write_scores_csv(path: Path, series: FlowScoreSeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "slot", "ad", "rsv", "ies"])
        for row, t in enumerate(series.slots):
            for flow in range(series.ad.shape[1]):
                writer.writerow(
                    [
                        flow,
                        int(t),
                        format_float(series.ad[row, flow]),
                        format_float(series.rsv[row, flow]),
                        format_float(series.ies[row, flow]),
                    ]
                )
