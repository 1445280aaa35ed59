"""Trip-record ingestion: CSV parsing, grid discretization, visit filtering,
time-of-day stratification, transition counting and partition export.

Each trip contributes one transition, from its pickup cell to its dropoff cell.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from statecompress.errors import (
    ConfigError,
    DimensionError,
    EmptyStateSpaceError,
    InsufficientDataError,
    SchemaError,
    ValidationError,
)
from statecompress.kmeans import PartitionLabels
from statecompress.markov import transition_from_counts

# guards floor division against values like 0.99999999 that sit on a cell edge
_EDGE_EPS = 1e-9
_DAY = 24 * 3600


@dataclass(frozen=True)
class TripRecord:
    pickup_lat: float
    pickup_lon: float
    dropoff_lat: float
    dropoff_lon: float
    pickup_time: datetime


@dataclass(frozen=True)
class TaxiSchema:
    """Column names; defaults follow the 2016 yellow-cab trip files."""

    pickup_lat: str = "pickup_latitude"
    pickup_lon: str = "pickup_longitude"
    dropoff_lat: str = "dropoff_latitude"
    dropoff_lon: str = "dropoff_longitude"
    pickup_time: str = "tpep_pickup_datetime"
    time_format: str = "%Y-%m-%d %H:%M:%S"

    def columns(self) -> Tuple[str, ...]:
        return (self.pickup_lat, self.pickup_lon, self.dropoff_lat, self.dropoff_lon, self.pickup_time)


@dataclass
class ParseResult:
    records: List[TripRecord]
    rows_read: int
    dropped: int

    def reconciles(self) -> bool:
        return self.rows_read == len(self.records) + self.dropped


def _open_text(source) -> Tuple[TextIO, bool]:
    if hasattr(source, "read"):
        return source, False
    return open(source, newline="", encoding="utf-8"), True


def parse_trips(source: Union[str, os.PathLike, TextIO], schema: Optional[TaxiSchema] = None) -> ParseResult:
    """Read trips from a CSV path or text stream.

    Rows with missing or non-finite coordinates or an unparseable pickup time
    are dropped and counted.
    """
    schema = schema or TaxiSchema()
    stream, owned = _open_text(source)
    try:
        reader = csv.DictReader(stream)
        if reader.fieldnames is None:
            raise SchemaError("CSV is empty: no header row")
        names = [f.strip() for f in reader.fieldnames]
        reader.fieldnames = names
        missing = [c for c in schema.columns() if c not in names]
        if missing:
            raise SchemaError(f"missing required columns: {missing}")
        records: List[TripRecord] = []
        rows = dropped = 0
        for row in reader:
            rows += 1
            try:
                coords = [float(row[c]) for c in schema.columns()[:4]]
                when = datetime.strptime(row[schema.pickup_time].strip(), schema.time_format)
            except (TypeError, ValueError):
                dropped += 1
                continue
            if not all(math.isfinite(v) for v in coords):
                dropped += 1
                continue
            records.append(TripRecord(*coords, when))
    finally:
        if owned:
            stream.close()
    return ParseResult(records, rows, dropped)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular lat/lon grid with half-open cells ``[lo, hi)``.

    The default box covers Manhattan; with 0.0018 x 0.0022 degree cells it
    has 100 x 50 = 5000 cells.
    """

    lat_min: float = 40.70
    lat_max: float = 40.88
    lon_min: float = -74.02
    lon_max: float = -73.91
    cell_lat: float = 0.0018
    cell_lon: float = 0.0022

    def __post_init__(self):
        if not (self.cell_lat > 0 and self.cell_lon > 0):
            raise ConfigError("cell sizes must be positive")
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise ConfigError("bounding box is empty")

    @property
    def n_lat(self) -> int:
        return max(1, math.ceil((self.lat_max - self.lat_min) / self.cell_lat - _EDGE_EPS))

    @property
    def n_lon(self) -> int:
        return max(1, math.ceil((self.lon_max - self.lon_min) / self.cell_lon - _EDGE_EPS))

    @property
    def n_cells(self) -> int:
        return self.n_lat * self.n_lon

    def cell_of(self, lat, lon) -> np.ndarray:
        """Cell ids (``lat_index * n_lon + lon_index``), ``-1`` outside the box."""
        lat = np.asarray(lat, dtype=np.float64)
        lon = np.asarray(lon, dtype=np.float64)
        i = np.floor((lat - self.lat_min) / self.cell_lat + _EDGE_EPS).astype(np.int64)
        j = np.floor((lon - self.lon_min) / self.cell_lon + _EDGE_EPS).astype(np.int64)
        inside = (
            (lat >= self.lat_min) & (lat < self.lat_max) & (lon >= self.lon_min) & (lon < self.lon_max)
            & (i >= 0) & (i < self.n_lat) & (j >= 0) & (j < self.n_lon)
        )
        return np.where(inside, i * self.n_lon + j, -1)

    def indices(self, cell) -> Tuple[np.ndarray, np.ndarray]:
        cell = np.asarray(cell, dtype=np.int64)
        return cell // self.n_lon, cell % self.n_lon

    def bounds(self, cell: int) -> Tuple[float, float, float, float]:
        """``(lat_lo, lat_hi, lon_lo, lon_hi)`` of one cell."""
        i, j = divmod(int(cell), self.n_lon)
        lat_lo = self.lat_min + i * self.cell_lat
        lon_lo = self.lon_min + j * self.cell_lon
        return lat_lo, lat_lo + self.cell_lat, lon_lo, lon_lo + self.cell_lon

    def centroid(self, cell: int) -> Tuple[float, float]:
        lat_lo, lat_hi, lon_lo, lon_hi = self.bounds(cell)
        return (lat_lo + lat_hi) / 2.0, (lon_lo + lon_hi) / 2.0

    def to_dict(self) -> Dict[str, float]:
        return {k: getattr(self, k) for k in ("lat_min", "lat_max", "lon_min", "lon_max", "cell_lat", "cell_lon")}


@dataclass
class DiscretizeResult:
    pairs: np.ndarray  # (m, 2) grid cell ids
    dropped: int


def discretize(trips: Sequence[TripRecord], grid: Optional[GridSpec] = None) -> DiscretizeResult:
    """Map each trip to ``(pickup cell, dropoff cell)``; trips leaving the box are dropped."""
    grid = grid or GridSpec()
    if not trips:
        return DiscretizeResult(np.zeros((0, 2), dtype=np.int64), 0)
    a = np.array([(t.pickup_lat, t.pickup_lon, t.dropoff_lat, t.dropoff_lon) for t in trips], dtype=np.float64)
    src = grid.cell_of(a[:, 0], a[:, 1])
    dst = grid.cell_of(a[:, 2], a[:, 3])
    keep = (src >= 0) & (dst >= 0)
    pairs = np.column_stack([src[keep], dst[keep]]).astype(np.int64)
    return DiscretizeResult(pairs, int((~keep).sum()))


@dataclass(frozen=True)
class StateMap:
    """Retained grid cells, in increasing cell-id order, and their visit counts."""

    cells: np.ndarray
    visits: np.ndarray
    min_visits: int

    @property
    def p(self) -> int:
        return self.cells.size

    def state_of(self, cell: int) -> int:
        pos = int(np.searchsorted(self.cells, cell))
        if pos >= self.cells.size or self.cells[pos] != cell:
            raise KeyError(cell)
        return pos


@dataclass
class FilterResult:
    state_map: StateMap
    pairs: np.ndarray  # (m, 2) dense state indices
    pairs_in: int
    dropped: int

    def reconciles(self) -> bool:
        return self.pairs_in == self.pairs.shape[0] + self.dropped


def filter_states(pairs, min_visits: int = 200) -> FilterResult:
    """Keep cells with at least ``min_visits`` pickups plus dropoffs.

    Pairs touching a removed cell are dropped; the surviving cells are
    re-indexed densely in increasing cell-id order.
    """
    if min_visits < 1:
        raise ConfigError("min_visits must be at least 1")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    cells, inverse = np.unique(pairs, return_inverse=True)
    inverse = inverse.reshape(-1, 2)
    visits = np.bincount(inverse.ravel(), minlength=cells.size)
    kept = visits >= min_visits
    if not kept.any():
        raise EmptyStateSpaceError(f"no cell reaches {min_visits} visits")
    dense = np.full(cells.size, -1, dtype=np.int64)
    dense[kept] = np.arange(int(kept.sum()))
    mapped = dense[inverse]
    ok = (mapped >= 0).all(axis=1)
    smap = StateMap(cells[kept], visits[kept], int(min_visits))
    return FilterResult(smap, mapped[ok], int(pairs.shape[0]), int((~ok).sum()))


@dataclass(frozen=True)
class TimeSegment:
    """Half-open clock interval ``[start, end)`` in seconds after midnight."""

    name: str
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end <= _DAY:
            raise ConfigError(f"segment {self.name!r} must satisfy 0 <= start < end <= 24:00")

    def contains(self, seconds: int) -> bool:
        return self.start <= seconds < self.end


def _clock(s: str) -> int:
    parts = [int(x) for x in s.strip().split(":")]
    while len(parts) < 3:
        parts.append(0)
    h, m, sec = parts
    if not (0 <= h <= 24 and 0 <= m < 60 and 0 <= sec < 60) or (h == 24 and (m or sec)):
        raise ConfigError(f"bad clock time {s!r}")
    return h * 3600 + m * 60 + sec


def parse_segments(spec: str) -> List[TimeSegment]:
    """Parse ``"name=HH:MM-HH:MM,..."``; ``"default"`` gives the three day segments."""
    if spec.strip() == "default":
        return list(DEFAULT_SEGMENTS)
    out = []
    for item in spec.split(","):
        try:
            name, span = item.split("=")
            lo, hi = span.split("-")
        except ValueError:
            raise ConfigError(f"bad segment {item!r}; expected name=HH:MM-HH:MM") from None
        out.append(TimeSegment(name.strip(), _clock(lo), _clock(hi)))
    return out


DEFAULT_SEGMENTS = (
    TimeSegment("morning", 6 * 3600, 12 * 3600),
    TimeSegment("afternoon", 12 * 3600, 18 * 3600),
    TimeSegment("evening", 18 * 3600, _DAY),
)


@dataclass
class StratifyResult:
    buckets: Dict[str, List[TripRecord]]
    dropped: int


def check_segments(segments: Sequence[TimeSegment]) -> None:
    names = [s.name for s in segments]
    if len(set(names)) != len(names):
        raise ConfigError("segment names must be unique")
    ordered = sorted(segments, key=lambda s: s.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise ConfigError(f"segments {a.name!r} and {b.name!r} overlap")


def stratify_time(
    trips: Iterable[TripRecord],
    segments: Sequence[TimeSegment] = DEFAULT_SEGMENTS,
    utc_offset_hours: float = 0.0,
) -> StratifyResult:
    """Bucket trips by pickup clock time.

    Timestamps are taken as local clock time; ``utc_offset_hours`` shifts them
    first.  Trips outside every segment are dropped and counted.
    """
    segments = list(segments)
    check_segments(segments)
    shift = timedelta(hours=utc_offset_hours)
    buckets: Dict[str, List[TripRecord]] = {s.name: [] for s in segments}
    dropped = 0
    for trip in trips:
        t = trip.pickup_time + shift if utc_offset_hours else trip.pickup_time
        sec = t.hour * 3600 + t.minute * 60 + t.second
        for seg in segments:
            if seg.contains(sec):
                buckets[seg.name].append(trip)
                break
        else:
            dropped += 1
    return StratifyResult(buckets, dropped)


@dataclass
class CountResult:
    counts: np.ndarray
    F_tilde: np.ndarray
    P_tilde: np.ndarray


def count_chunks(chunks: Iterable[np.ndarray], p: int) -> np.ndarray:
    """Sum per-chunk transition counts; the total equals a single pass exactly."""
    total = np.zeros((p, p), dtype=np.int64)
    for chunk in chunks:
        chunk = np.asarray(chunk, dtype=np.int64).reshape(-1, 2)
        if chunk.size:
            flat = chunk[:, 0] * p + chunk[:, 1]
            total += np.bincount(flat, minlength=p * p).reshape(p, p)
    return total


def build_counts(pairs, p: int, chunk_size: Optional[int] = None) -> CountResult:
    """Transition counts with ``F~ = counts / total`` and row-normalized ``P~``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise InsufficientDataError("no transitions to count")
    if pairs.min() < 0 or pairs.max() >= p:
        raise ValidationError(f"state indices must lie in [0, {p})")
    step = chunk_size or pairs.shape[0]
    counts = count_chunks((pairs[i : i + step] for i in range(0, pairs.shape[0], step)), p)
    return CountResult(counts, counts / counts.sum(), transition_from_counts(counts))


PARTITION_COLUMNS = ("cell_lat_index", "cell_lon_index", "centroid_lat", "centroid_lon", "block")


def _check_labels(state_map: StateMap, partition) -> np.ndarray:
    labels = partition.labels if isinstance(partition, PartitionLabels) else np.asarray(partition, dtype=np.int64)
    if labels.size != state_map.p:
        raise DimensionError(f"{labels.size} labels for {state_map.p} states")
    return labels


def partition_csv(state_map: StateMap, partition, grid: GridSpec) -> str:
    labels = _check_labels(state_map, partition)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PARTITION_COLUMNS)
    for cell, block in zip(state_map.cells, labels):
        i, j = divmod(int(cell), grid.n_lon)
        lat, lon = grid.centroid(int(cell))
        w.writerow([i, j, repr(lat), repr(lon), int(block)])
    return buf.getvalue()


def partition_geojson(state_map: StateMap, partition, grid: GridSpec) -> Dict:
    labels = _check_labels(state_map, partition)
    features = []
    for state, (cell, block) in enumerate(zip(state_map.cells, labels)):
        lat_lo, lat_hi, lon_lo, lon_hi = grid.bounds(int(cell))
        ring = [[lon_lo, lat_lo], [lon_hi, lat_lo], [lon_hi, lat_hi], [lon_lo, lat_hi], [lon_lo, lat_lo]]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"state": state, "cell": int(cell), "block": int(block)},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def export_partition(state_map: StateMap, partition, grid: GridSpec, path, fmt: str = "csv") -> None:
    """Write a partition of the retained cells as CSV or GeoJSON."""
    if fmt == "csv":
        Path(path).write_text(partition_csv(state_map, partition, grid))
    elif fmt == "geojson":
        Path(path).write_text(json.dumps(partition_geojson(state_map, partition, grid), indent=1) + "\n")
    else:
        raise ConfigError(f"unknown partition format {fmt!r}")


def read_partition_csv(source) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(lat_index, lon_index, block)`` arrays from an exported partition CSV."""
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or list(reader.fieldnames) != list(PARTITION_COLUMNS):
        raise SchemaError(f"expected columns {PARTITION_COLUMNS}")
    rows = [(int(r["cell_lat_index"]), int(r["cell_lon_index"]), int(r["block"])) for r in reader]
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def validate_geojson(obj) -> None:
    """Minimal structural check: a FeatureCollection of closed Polygon features."""
    if not isinstance(obj, dict) or obj.get("type") != "FeatureCollection":
        raise SchemaError("not a FeatureCollection")
    feats = obj.get("features")
    if not isinstance(feats, list):
        raise SchemaError("features must be a list")
    for f in feats:
        if f.get("type") != "Feature" or not isinstance(f.get("properties"), dict):
            raise SchemaError("every feature needs type Feature and properties")
        geom = f.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise SchemaError("every geometry must be a Polygon")
        rings = geom.get("coordinates")
        if not rings or any(len(ring) < 4 or ring[0] != ring[-1] for ring in rings):
            raise SchemaError("polygon rings must be closed with at least 4 positions")
        if "block" not in f["properties"]:
            raise SchemaError("feature lacks a block property")


@dataclass
class PipelineCounters:
    rows_read: int = 0
    parse_dropped: int = 0
    records: int = 0
    segment_dropped: int = 0
    out_of_box: int = 0
    pairs_in: int = 0
    filter_dropped: int = 0
    transitions: int = 0

    def reconciles(self) -> bool:
        return (
            self.rows_read == self.records + self.parse_dropped
            and self.pairs_in == self.transitions + self.filter_dropped
        )


@dataclass
class SegmentOutput:
    name: str
    state_map: StateMap
    counts: CountResult
    partition: PartitionLabels
    counters: PipelineCounters


def run_pipeline(
    source,
    r: int,
    grid: Optional[GridSpec] = None,
    min_visits: int = 200,
    segments: Optional[Sequence[TimeSegment]] = None,
    method: str = "aggregate",
    kmeans_config=None,
    schema: Optional[TaxiSchema] = None,
    utc_offset_hours: float = 0.0,
) -> List[SegmentOutput]:
    """parse -> (stratify) -> discretize -> filter -> count -> partition, per segment.

    ``method`` selects the left-feature aggregation partition (``"aggregate"``)
    or the right-feature lumpable partition (``"lump"``).  Without segments a
    single output named ``"all"`` is produced.
    """
    from statecompress.spectral import spectral_lumpable_partition_matrix, spectral_state_aggregation_matrix

    if method not in ("aggregate", "lump"):
        raise ConfigError(f"unknown method {method!r}")
    grid = grid or GridSpec()
    parsed = parse_trips(source, schema)
    if not parsed.records:
        raise InsufficientDataError("no valid trip records")
    if segments is None:
        groups = {"all": parsed.records}
        seg_dropped = 0
    else:
        strat = stratify_time(parsed.records, segments, utc_offset_hours)
        groups, seg_dropped = strat.buckets, strat.dropped

    outputs = []
    for name, trips in groups.items():
        counters = PipelineCounters(
            rows_read=parsed.rows_read, parse_dropped=parsed.dropped, records=len(parsed.records), segment_dropped=seg_dropped
        )
        disc = discretize(trips, grid)
        counters.out_of_box = disc.dropped
        if disc.pairs.shape[0] == 0:
            raise InsufficientDataError(f"segment {name!r}: no trips inside the grid")
        filt = filter_states(disc.pairs, min_visits)
        counters.pairs_in = filt.pairs_in
        counters.filter_dropped = filt.dropped
        counters.transitions = int(filt.pairs.shape[0])
        p = filt.state_map.p
        if r > p:
            raise ValidationError(f"segment {name!r}: r={r} exceeds the {p} retained states")
        counts = build_counts(filt.pairs, p)
        if method == "aggregate":
            part = spectral_state_aggregation_matrix(counts.P_tilde, r, kmeans_config)
        else:
            part = spectral_lumpable_partition_matrix(counts.F_tilde, r, kmeans_config)
        outputs.append(SegmentOutput(name, filt.state_map, counts, part, counters))
    return outputs
