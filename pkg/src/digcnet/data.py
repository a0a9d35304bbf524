"""Domain types and file formats for traffic flows, speeds, incidents, weather.

File formats (all plain text, byte-stable given equal inputs):

* ``geometry.csv``   header ``flow_id,lat1,lng1,lat2,lng2``; flow ids dense 0..N-1.
* ``speeds.csv``     header ``slot,flow_id,speed_kmh``; one row per (slot, flow),
  slot is a 5-minute index from the table start time; gaps and duplicates are
  rejected rather than imputed.
* ``incidents.json`` array of incident records with ISO-8601 naive local times.
* ``weather.csv``    header ``slot,weather_type,temperature_c,sunrise_offset_min``;
  sparse rows are forward-filled to one record per slot.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import ParseError
from .utils import format_float

SLOT_MINUTES = 5
SLOTS_PER_DAY = 24 * 60 // SLOT_MINUTES
DEFAULT_START = datetime(2024, 4, 1, 0, 0)  # a Monday

DAY_CATEGORIES = ("weekday", "saturday", "sunday")


def day_category_of(ts: datetime) -> str:
    wd = ts.weekday()
    if wd == 5:
        return "saturday"
    if wd == 6:
        return "sunday"
    return "weekday"


@dataclass(frozen=True)
class FlowSegment:
    """One directed road-segment flow, identified by its two endpoints."""

    flow_id: int
    lat1: float
    lng1: float
    lat2: float
    lng2: float

    @property
    def centroid(self) -> tuple[float, float]:
        return ((self.lat1 + self.lat2) / 2.0, (self.lng1 + self.lng2) / 2.0)

    @property
    def endpoints(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return ((self.lat1, self.lng1), (self.lat2, self.lng2))


@dataclass
class SpeedTable:
    """Dense speed matrix, shape (n_slots, n_flows), km/h, 5-minute slots."""

    speeds: np.ndarray
    start_time: datetime = DEFAULT_START

    def __post_init__(self) -> None:
        self.speeds = np.asarray(self.speeds, dtype=np.float64)
        if self.speeds.ndim != 2:
            raise ParseError("speed table must be 2-D (slots x flows)")
        if not np.all(np.isfinite(self.speeds)):
            raise ParseError("speed table contains non-finite values")
        if np.any(self.speeds < 0):
            raise ParseError("speed table contains negative speeds")

    @property
    def n_slots(self) -> int:
        return self.speeds.shape[0]

    @property
    def n_flows(self) -> int:
        return self.speeds.shape[1]

    def slot_of(self, ts: datetime) -> int:
        """Slot index containing timestamp ``ts`` (floor division)."""
        delta = ts - self.start_time
        return int(delta.total_seconds() // (SLOT_MINUTES * 60))

    def time_of(self, slot: int) -> datetime:
        return self.start_time + timedelta(minutes=SLOT_MINUTES * int(slot))


@dataclass(frozen=True)
class IncidentRecord:
    """One reported incident; ``incident_type`` is an open vocabulary."""

    incident_id: str
    incident_type: str
    lat: float
    lng: float
    start_time: datetime
    end_time: datetime
    road_closed: bool
    day_category: str

    def __post_init__(self) -> None:
        if self.end_time < self.start_time:
            raise ParseError(
                f"incident {self.incident_id!r}: end_time precedes start_time"
            )
        if self.day_category not in DAY_CATEGORIES:
            raise ParseError(
                f"incident {self.incident_id!r}: unknown day_category "
                f"{self.day_category!r}"
            )

    @property
    def duration_minutes(self) -> float:
        return (self.end_time - self.start_time).total_seconds() / 60.0


@dataclass(frozen=True)
class WeatherRecord:
    slot: int
    weather_type: str
    temperature_c: float
    sunrise_offset_min: float


# ---------------------------------------------------------------------------
# geometry.csv


def save_geometry(path: Path, flows: list[FlowSegment]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "lat1", "lng1", "lat2", "lng2"])
        for f in sorted(flows, key=lambda f: f.flow_id):
            writer.writerow(
                [
                    f.flow_id,
                    format_float(f.lat1),
                    format_float(f.lng1),
                    format_float(f.lat2),
                    format_float(f.lng2),
                ]
            )


def load_geometry(path: Path) -> list[FlowSegment]:
    flows: list[FlowSegment] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["flow_id", "lat1", "lng1", "lat2", "lng2"]:
            raise ParseError(f"{path}: unexpected geometry header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                flows.append(
                    FlowSegment(
                        flow_id=int(row[0]),
                        lat1=float(row[1]),
                        lng1=float(row[2]),
                        lat2=float(row[3]),
                        lng2=float(row[4]),
                    )
                )
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    flows.sort(key=lambda f: f.flow_id)
    ids = [f.flow_id for f in flows]
    if ids != list(range(len(flows))):
        raise ParseError(f"{path}: flow ids must be dense 0..N-1, got {ids[:8]}...")
    return flows


# ---------------------------------------------------------------------------
# speeds.csv


def save_speed_table(path: Path, table: SpeedTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "flow_id", "speed_kmh"])
        for slot in range(table.n_slots):
            row_speeds = table.speeds[slot]
            for flow in range(table.n_flows):
                writer.writerow([slot, flow, format_float(row_speeds[flow])])


def load_speed_table(path: Path, start_time: datetime = DEFAULT_START) -> SpeedTable:
    """Load a dense speed table; missing or duplicate (slot, flow) rows fail."""
    entries: list[tuple[int, int, float, int]] = []
    max_slot = -1
    max_flow = -1
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["slot", "flow_id", "speed_kmh"]:
            raise ParseError(f"{path}: unexpected speeds header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                slot = int(row[0])
                flow = int(row[1])
                speed = float(row[2])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric value: {exc}") from exc
            if slot < 0 or flow < 0:
                raise ParseError(f"{path}:{lineno}: negative slot or flow id")
            if not np.isfinite(speed) or speed < 0:
                raise ParseError(f"{path}:{lineno}: invalid speed {row[2]!r}")
            entries.append((slot, flow, speed, lineno))
            max_slot = max(max_slot, slot)
            max_flow = max(max_flow, flow)
    if max_slot < 0:
        raise ParseError(f"{path}: no speed rows")
    n_slots, n_flows = max_slot + 1, max_flow + 1
    speeds = np.full((n_slots, n_flows), np.nan)
    for slot, flow, speed, lineno in entries:
        if not np.isnan(speeds[slot, flow]):
            raise ParseError(f"{path}:{lineno}: duplicate row for slot {slot}, flow {flow}")
        speeds[slot, flow] = speed
    missing = np.argwhere(np.isnan(speeds))
    if missing.size:
        slot, flow = missing[0]
        raise ParseError(f"{path}: missing row for slot {slot}, flow {flow}")
    return SpeedTable(speeds=speeds, start_time=start_time)


# ---------------------------------------------------------------------------
# incidents.json

_TIME_FMT = "%Y-%m-%dT%H:%M:%S"


def _parse_time(raw: str, where: str) -> datetime:
    try:
        return datetime.strptime(raw, _TIME_FMT)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad timestamp {raw!r}") from exc


def save_incidents(path: Path, incidents: list[IncidentRecord]) -> None:
    records = [
        {
            "incident_id": inc.incident_id,
            "incident_type": inc.incident_type,
            "lat": inc.lat,
            "lng": inc.lng,
            "start_time": inc.start_time.strftime(_TIME_FMT),
            "end_time": inc.end_time.strftime(_TIME_FMT),
            "road_closed": inc.road_closed,
            "day_category": inc.day_category,
        }
        for inc in incidents
    ]
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_incidents(path: Path) -> list[IncidentRecord]:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError(f"{path}: expected a JSON array of incidents")
    incidents: list[IncidentRecord] = []
    seen: set[str] = set()
    for idx, rec in enumerate(raw):
        where = f"{path}: incident[{idx}]"
        if not isinstance(rec, dict):
            raise ParseError(f"{where}: expected an object")
        try:
            inc = IncidentRecord(
                incident_id=str(rec["incident_id"]),
                incident_type=str(rec["incident_type"]),
                lat=float(rec["lat"]),
                lng=float(rec["lng"]),
                start_time=_parse_time(rec["start_time"], where),
                end_time=_parse_time(rec["end_time"], where),
                road_closed=bool(rec["road_closed"]),
                day_category=str(rec["day_category"]),
            )
        except KeyError as exc:
            raise ParseError(f"{where}: missing field {exc.args[0]!r}") from exc
        if inc.incident_id in seen:
            raise ParseError(f"{where}: duplicate incident_id {inc.incident_id!r}")
        seen.add(inc.incident_id)
        incidents.append(inc)
    incidents.sort(key=lambda i: (i.start_time, i.incident_id))
    return incidents


# ---------------------------------------------------------------------------
# weather.csv


def save_weather(path: Path, records: list[WeatherRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "weather_type", "temperature_c", "sunrise_offset_min"])
        for rec in sorted(records, key=lambda r: r.slot):
            writer.writerow(
                [
                    rec.slot,
                    rec.weather_type,
                    format_float(rec.temperature_c),
                    format_float(rec.sunrise_offset_min),
                ]
            )


def load_weather(path: Path, n_slots: int) -> list[WeatherRecord]:
    """Load weather rows and forward-fill to one record per slot 0..n_slots-1."""
    sparse: dict[int, WeatherRecord] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["slot", "weather_type", "temperature_c", "sunrise_offset_min"]:
            raise ParseError(f"{path}: unexpected weather header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                rec = WeatherRecord(
                    slot=int(row[0]),
                    weather_type=row[1],
                    temperature_c=float(row[2]),
                    sunrise_offset_min=float(row[3]),
                )
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if rec.slot in sparse:
                raise ParseError(f"{path}:{lineno}: duplicate slot {rec.slot}")
            sparse[rec.slot] = rec
    if 0 not in sparse:
        raise ParseError(f"{path}: slot 0 is required for forward fill")
    filled: list[WeatherRecord] = []
    current = sparse[0]
    for slot in range(n_slots):
        if slot in sparse:
            current = sparse[slot]
        filled.append(
            WeatherRecord(
                slot=slot,
                weather_type=current.weather_type,
                temperature_c=current.temperature_c,
                sunrise_offset_min=current.sunrise_offset_min,
            )
        )
    return filled
