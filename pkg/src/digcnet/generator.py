"""Synthetic city generator with planted incident ground truth.

Produces a road-segment layout on one or more disconnected grid districts,
a dense speed table with daily rush-hour structure and autocorrelated noise,
incident records (a controlled share of which have zero speed impact), and
per-slot weather.  Every draw derives from the scenario seed through named
substreams, so equal scenarios give byte-equal artifacts.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .data import (
    DEFAULT_START,
    SLOT_MINUTES,
    SLOTS_PER_DAY,
    FlowSegment,
    IncidentRecord,
    SpeedTable,
    WeatherRecord,
    day_category_of,
)
from .errors import ConfigError, ParseError
from .graph import distances_to_point
from .utils import rng_for

GRID_SPACING_DEG = 0.002  # ~222 m of latitude between intersections
DISTRICT_OFFSET_DEG = 0.5  # far beyond any incident radius
BASE_LAT = 40.0
BASE_LNG = -100.0

WEATHER_TYPES = ("clear", "cloudy", "rain")
INCIDENT_TYPES = ("collision", "congestion", "construction", "event")


@dataclass(frozen=True)
class SyntheticScenario:
    """Knobs for one synthetic city; carries its calibrated scoring weights."""

    seed: int = 7
    n_flows: int = 20
    days: int = 28
    districts: int = 1
    start_time: datetime = DEFAULT_START
    incidents_per_day: float = 3.0
    zero_impact_share: float = 0.35
    impact_factor_range: tuple[float, float] = (0.35, 0.6)
    impact_radius_m: tuple[float, float] = (220.0, 420.0)
    duration_slots_range: tuple[int, int] = (12, 30)
    base_speed_range: tuple[float, float] = (35.0, 65.0)
    rush_dip_depth: float = 0.12
    ar_phi: float = 0.7
    ar_sigma: float = 0.05
    ar_shared_frac: float = 0.0  # share of AR variance moving city-wide
    white_sigma: float = 0.03
    hotspot_count: int | None = None  # None: incidents anchor anywhere
    rho: float = 0.6
    theta: float = 0.15

    def __post_init__(self) -> None:
        if self.n_flows < self.districts or self.districts < 1:
            raise ConfigError("need at least one flow per district")
        if self.days < 1:
            raise ConfigError("days must be >= 1")
        if self.hotspot_count is not None and self.hotspot_count < 1:
            raise ConfigError("hotspot_count must be >= 1 when set")
        if not 0.0 <= self.ar_shared_frac <= 1.0:
            raise ConfigError("ar_shared_frac must lie in [0, 1]")
        lo, hi = self.impact_factor_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError("impact factors must lie in (0, 1]")
        if not 0.0 <= self.zero_impact_share <= 1.0:
            raise ConfigError("zero_impact_share must lie in [0, 1]")
        if not 0.0 <= self.ar_phi < 1.0:
            raise ConfigError("ar_phi must lie in [0, 1)")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start_time"] = self.start_time.strftime("%Y-%m-%dT%H:%M:%S")
        return d

    @staticmethod
    def from_dict(raw: dict) -> "SyntheticScenario":
        known = set(SyntheticScenario.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        kwargs = dict(raw)
        if "start_time" in kwargs and isinstance(kwargs["start_time"], str):
            kwargs["start_time"] = datetime.strptime(
                kwargs["start_time"], "%Y-%m-%dT%H:%M:%S"
            )
        for key in (
            "impact_factor_range",
            "impact_radius_m",
            "duration_slots_range",
            "base_speed_range",
        ):
            if key in kwargs and isinstance(kwargs[key], list):
                kwargs[key] = tuple(kwargs[key])
        return SyntheticScenario(**kwargs)


@dataclass(frozen=True)
class InjectedIncident:
    """Planted ground truth for one generated incident."""

    incident_id: str
    factor: float  # speed multiplier during the incident; 1.0 means no impact
    radius_m: float
    affected_flows: tuple[int, ...]
    start_slot: int
    end_slot: int  # exclusive

    @property
    def has_impact(self) -> bool:
        return self.factor < 1.0 and len(self.affected_flows) > 0


@dataclass(eq=False)
class SyntheticCity:
    scenario: SyntheticScenario
    flows: list[FlowSegment]
    table: SpeedTable
    incidents: list[IncidentRecord]
    weather: list[WeatherRecord]
    ground_truth: list[InjectedIncident]


def grid_edge_layout(n_flows: int, origin: tuple[float, float]) -> list[tuple]:
    """First ``n_flows`` edges of a grid, enumerated so every prefix of the
    sequence forms a connected subgraph: row 0 horizontals, verticals down
    to row 1, row 1 horizontals, and so on."""
    if n_flows < 1:
        raise ConfigError("need at least one flow")
    cols = max(2, int(round(math.sqrt(n_flows / 2.0))) + 1)
    lat0, lng0 = origin

    def node(r: int, c: int) -> tuple[float, float]:
        return (lat0 + r * GRID_SPACING_DEG, lng0 + c * GRID_SPACING_DEG)

    edges: list[tuple] = []
    row = 0
    while len(edges) < n_flows:
        for c in range(cols - 1):
            edges.append((node(row, c), node(row, c + 1)))
        for c in range(cols):
            edges.append((node(row, c), node(row + 1, c)))
        row += 1
    return edges[:n_flows]


def _district_sizes(n_flows: int, districts: int) -> list[int]:
    base = n_flows // districts
    sizes = [base + (1 if d < n_flows % districts else 0) for d in range(districts)]
    return sizes


def generate_geometry(scenario: SyntheticScenario) -> list[FlowSegment]:
    flows: list[FlowSegment] = []
    next_id = 0
    for d, size in enumerate(_district_sizes(scenario.n_flows, scenario.districts)):
        origin = (BASE_LAT + d * DISTRICT_OFFSET_DEG, BASE_LNG)
        for (lat1, lng1), (lat2, lng2) in grid_edge_layout(size, origin):
            flows.append(FlowSegment(next_id, lat1, lng1, lat2, lng2))
            next_id += 1
    return flows


def _daily_profile(scenario: SyntheticScenario, sensitivities: np.ndarray) -> np.ndarray:
    """Multiplicative speed profile per (slot-of-day, flow, day-kind).

    Returns array (2, SLOTS_PER_DAY, N): index 0 weekday, 1 weekend.  Rush
    dips are wide and mild so short adjacent windows stay comparable.
    """
    slots = np.arange(SLOTS_PER_DAY) / (60.0 / SLOT_MINUTES)  # hour of day
    dip = np.zeros(SLOTS_PER_DAY)
    for center, width in ((8.0, 2.0), (17.5, 2.0)):
        dip += np.exp(-0.5 * ((slots - center) / width) ** 2)
    weekday = 1.0 - scenario.rush_dip_depth * dip[:, None] * sensitivities[None, :]
    weekend = 1.0 - 0.4 * scenario.rush_dip_depth * dip[:, None] * sensitivities[None, :]
    return np.stack([weekday, weekend])


def _generate_base_speeds(
    scenario: SyntheticScenario, n_slots: int
) -> np.ndarray:
    n = scenario.n_flows
    rng_base = rng_for(scenario.seed, "generator.base")
    lo, hi = scenario.base_speed_range
    base = rng_base.uniform(lo, hi, size=n)
    sensitivities = rng_base.uniform(0.7, 1.3, size=n)
    profile = _daily_profile(scenario, sensitivities)

    rng_ar = rng_for(scenario.seed, "generator.ar")
    phi, sigma = scenario.ar_phi, scenario.ar_sigma
    # Congestion state mixes one city-wide component (spatially coherent, the
    # fraction set by ar_shared_frac) with independent per-flow remainders.
    shared_sigma = sigma * math.sqrt(scenario.ar_shared_frac)
    local_sigma = sigma * math.sqrt(1.0 - scenario.ar_shared_frac)
    decay = math.sqrt(max(1.0 - phi * phi, 0.0))
    loadings = rng_ar.uniform(0.7, 1.3, size=n)
    shared = rng_ar.normal(0.0, shared_sigma)
    level = rng_ar.normal(0.0, local_sigma, size=n)
    ar = np.empty((n_slots, n))
    for t in range(n_slots):
        ar[t] = shared * loadings + level
        shared = phi * shared + rng_ar.normal(0.0, shared_sigma * decay)
        level = phi * level + rng_ar.normal(0.0, local_sigma * decay, size=n)

    rng_white = rng_for(scenario.seed, "generator.white")
    white = rng_white.normal(0.0, scenario.white_sigma, size=(n_slots, n))

    speeds = np.empty((n_slots, n))
    for t in range(n_slots):
        ts = scenario.start_time + timedelta(minutes=SLOT_MINUTES * t)
        kind = 0 if day_category_of(ts) == "weekday" else 1
        slot_of_day = (t + _slot_offset(scenario.start_time)) % SLOTS_PER_DAY
        speeds[t] = base * profile[kind, slot_of_day]
    speeds *= np.clip(1.0 + ar, 0.3, None) * np.clip(1.0 + white, 0.3, None)
    return speeds


def _slot_offset(start_time: datetime) -> int:
    midnight = start_time.replace(hour=0, minute=0, second=0, microsecond=0)
    return int((start_time - midnight).total_seconds() // (SLOT_MINUTES * 60))


def _place_incidents(
    scenario: SyntheticScenario,
    centroids: np.ndarray,
    n_slots: int,
) -> tuple[list[IncidentRecord], list[InjectedIncident]]:
    rng = rng_for(scenario.seed, "generator.incidents")
    n_target = int(round(scenario.days * scenario.incidents_per_day))
    margin = 48  # keep scoring/feature windows inside the table
    occupancy: dict[int, list[tuple[int, int]]] = {}
    pad = 36

    def conflicts(affected: np.ndarray, lo: int, hi: int) -> bool:
        for flow in affected:
            for (a, b) in occupancy.get(int(flow), ()):
                if lo < b and a < hi:
                    return True
        return False

    incidents: list[IncidentRecord] = []
    truths: list[InjectedIncident] = []
    dur_lo, dur_hi = scenario.duration_slots_range
    anchors = np.arange(scenario.n_flows)
    if scenario.hotspot_count is not None:
        size = min(scenario.hotspot_count, scenario.n_flows)
        anchors = rng.choice(scenario.n_flows, size=size, replace=False)
    for idx in range(n_target):
        placed = False
        for _ in range(200):
            dur = int(rng.integers(dur_lo, dur_hi + 1))
            latest = n_slots - margin - dur
            if latest <= margin:
                raise ConfigError("scenario too short for incident placement margins")
            start_slot = int(rng.integers(margin, latest + 1))
            flow_pick = int(anchors[rng.integers(anchors.size)])
            jitter = rng.uniform(-0.0002, 0.0002, size=2)
            center = (
                float(centroids[flow_pick, 0] + jitter[0]),
                float(centroids[flow_pick, 1] + jitter[1]),
            )
            radius = float(rng.uniform(*scenario.impact_radius_m))
            affected = np.nonzero(distances_to_point(centroids, center) <= radius)[0]
            zero_impact = bool(rng.random() < scenario.zero_impact_share)
            factor = (
                1.0 if zero_impact else float(rng.uniform(*scenario.impact_factor_range))
            )
            inc_type = str(rng.choice(INCIDENT_TYPES))
            road_closed = bool(rng.random() < 0.3)
            if affected.size == 0 or conflicts(affected, start_slot - pad, start_slot + dur + pad):
                continue
            for flow in affected:
                occupancy.setdefault(int(flow), []).append(
                    (start_slot - pad, start_slot + dur + pad)
                )
            incident_id = f"inc-{idx:04d}"
            start_time = scenario.start_time + timedelta(minutes=SLOT_MINUTES * start_slot)
            end_time = start_time + timedelta(minutes=SLOT_MINUTES * dur)
            incidents.append(
                IncidentRecord(
                    incident_id=incident_id,
                    incident_type=inc_type,
                    lat=center[0],
                    lng=center[1],
                    start_time=start_time,
                    end_time=end_time,
                    road_closed=road_closed,
                    day_category=day_category_of(start_time),
                )
            )
            truths.append(
                InjectedIncident(
                    incident_id=incident_id,
                    factor=factor,
                    radius_m=radius,
                    affected_flows=tuple(int(f) for f in affected),
                    start_slot=start_slot,
                    end_slot=start_slot + dur,
                )
            )
            placed = True
            break
        if not placed:
            continue  # density too high for remaining free windows; skip
    return incidents, truths


def _generate_weather(scenario: SyntheticScenario, n_slots: int) -> list[WeatherRecord]:
    rng = rng_for(scenario.seed, "generator.weather")
    records: list[WeatherRecord] = []
    day_types = rng.choice(WEATHER_TYPES, size=scenario.days + 1, p=(0.5, 0.3, 0.2))
    day_offsets = rng.normal(0.0, 2.0, size=scenario.days + 1)
    offset = _slot_offset(scenario.start_time)
    for slot in range(n_slots):
        day = (slot + offset) // SLOTS_PER_DAY
        slot_of_day = (slot + offset) % SLOTS_PER_DAY
        temp = 12.0 + day_offsets[day] + 6.0 * math.sin(
            2.0 * math.pi * (slot_of_day / SLOTS_PER_DAY - 0.3)
        )
        records.append(
            WeatherRecord(
                slot=slot,
                weather_type=str(day_types[day]),
                temperature_c=round(temp, 2),
                sunrise_offset_min=round(360.0 - 0.4 * day, 2),
            )
        )
    return records


def generate_city(scenario: SyntheticScenario) -> SyntheticCity:
    """Generate geometry, speeds, incidents, weather, and planted ground truth."""
    n_slots = scenario.days * SLOTS_PER_DAY
    flows = generate_geometry(scenario)
    centroids = np.array([f.centroid for f in flows])
    speeds = _generate_base_speeds(scenario, n_slots)
    incidents, truths = _place_incidents(scenario, centroids, n_slots)
    for truth in truths:
        if truth.factor >= 1.0:
            continue
        sl = slice(truth.start_slot, truth.end_slot)
        speeds[sl, list(truth.affected_flows)] *= truth.factor
    speeds = np.maximum(speeds, 0.5)
    table = SpeedTable(speeds=speeds, start_time=scenario.start_time)
    weather = _generate_weather(scenario, n_slots)
    return SyntheticCity(
        scenario=scenario,
        flows=flows,
        table=table,
        incidents=incidents,
        weather=weather,
        ground_truth=truths,
    )


# ---------------------------------------------------------------------------
# ground truth serialization


def save_ground_truth(path: Path, truths: list[InjectedIncident]) -> None:
    records = [
        {
            "incident_id": t.incident_id,
            "factor": t.factor,
            "radius_m": t.radius_m,
            "affected_flows": list(t.affected_flows),
            "start_slot": t.start_slot,
            "end_slot": t.end_slot,
        }
        for t in truths
    ]
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_ground_truth(path: Path) -> list[InjectedIncident]:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    truths = []
    for idx, rec in enumerate(raw):
        try:
            truths.append(
                InjectedIncident(
                    incident_id=str(rec["incident_id"]),
                    factor=float(rec["factor"]),
                    radius_m=float(rec["radius_m"]),
                    affected_flows=tuple(int(f) for f in rec["affected_flows"]),
                    start_slot=int(rec["start_slot"]),
                    end_slot=int(rec["end_slot"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: ground truth record [{idx}]: {exc}") from exc
    return truths


# ---------------------------------------------------------------------------
# canonical scenarios used by the verification suites


def discovery_scenario(seed: int = 11) -> SyntheticScenario:
    """Incident-dense 50-flow city tuned for criticality recovery checks.

    (rho, theta) are calibrated so injected high-impact incidents
    (factor <= 0.5, >= 3 affected flows) score critical and injected
    zero-impact incidents do not.
    """
    return SyntheticScenario(
        seed=seed,
        n_flows=50,
        days=5,
        districts=1,
        incidents_per_day=12.0,
        zero_impact_share=0.4,
        impact_factor_range=(0.3, 0.5),
        ar_sigma=0.04,
        white_sigma=0.02,
        rho=0.5,
        theta=0.175,
    )


def forecast_scenario(seed: int = 23) -> SyntheticScenario:
    """Four-week city for forecasting runs: 3 train weeks, 1 test week."""
    return SyntheticScenario(
        seed=seed,
        n_flows=20,
        days=28,
        districts=1,
        incidents_per_day=4.0,
        zero_impact_share=0.25,
        impact_factor_range=(0.35, 0.55),
        ar_sigma=0.05,
        white_sigma=0.03,
        rho=0.6,
        theta=0.15,
    )


def classifier_scenario(seed: int = 31) -> SyntheticScenario:
    """Incident-dense long scenario for classifier fixtures.

    Sized so that well over 400 incidents survive placement with roughly a
    58:42 impactful-to-harmless balance.
    """
    return SyntheticScenario(
        seed=seed,
        n_flows=24,
        days=75,
        districts=1,
        incidents_per_day=8.0,
        zero_impact_share=0.42,
        impact_factor_range=(0.3, 0.45),
        ar_sigma=0.04,
        white_sigma=0.02,
        rho=0.6,
        theta=0.15,
    )


def with_seed(scenario: SyntheticScenario, seed: int) -> SyntheticScenario:
    return replace(scenario, seed=seed)
