"""Regenerate the bundled synthetic trip fixture.

1000 rows in the yellow-cab column layout: 960 trips between eight busy cells
(two groups with distinct destination preferences), 15 trips to scattered
quiet cells, 12 trips leaving the default bounding box and 13 corrupted rows.
"""
import csv
import sys
from pathlib import Path

import numpy as np

from statecompress.taxi import GridSpec

OUT = Path(__file__).resolve().parents[1] / "src" / "statecompress" / "data" / "taxi_fixture.csv"
COLUMNS = [
    "VendorID", "tpep_pickup_datetime", "tpep_dropoff_datetime", "passenger_count", "trip_distance",
    "pickup_longitude", "pickup_latitude", "dropoff_longitude", "dropoff_latitude", "fare_amount",
]
HOTSPOTS = [(20, 10), (22, 14), (25, 9), (27, 13), (70, 30), (72, 34), (75, 29), (78, 33)]
# boundary pickup times planted at the start of the file
PLANTED_TIMES = ["06:00:00", "05:59:59", "18:00:00", "11:59:59", "12:00:00", "23:59:59", "00:00:00", "17:59:59"]


def point_in(grid, i, j, rng):
    lat = grid.lat_min + (i + rng.uniform(0.1, 0.9)) * grid.cell_lat
    lon = grid.lon_min + (j + rng.uniform(0.1, 0.9)) * grid.cell_lon
    return round(lat, 6), round(lon, 6)


def main(out=OUT):
    rng = np.random.default_rng(2016)
    grid = GridSpec()
    group_pref = [np.array([0.28, 0.26, 0.24, 0.22, 0.0, 0.0, 0.0, 0.0]) * 0.8 + 0.025,
                  np.array([0.0, 0.0, 0.0, 0.0, 0.22, 0.24, 0.26, 0.28]) * 0.8 + 0.025]
    rows = []
    for t in range(960):
        src = t % 8
        dst = int(rng.choice(8, p=group_pref[src // 4]))
        rows.append((HOTSPOTS[src], HOTSPOTS[dst]))
    for _ in range(15):
        rows.append(((int(rng.integers(40, 60)), int(rng.integers(0, 50))), HOTSPOTS[int(rng.integers(8))]))
    for _ in range(12):
        rows.append((HOTSPOTS[int(rng.integers(8))], None))
    order = rng.permutation(len(rows))
    rows = [rows[i] for i in order]

    records = []
    for idx, (a, b) in enumerate(rows):
        plat, plon = point_in(grid, *a, rng)
        if b is None:
            dlat, dlon = round(40.60 + rng.uniform(0, 0.05), 6), round(-73.80 + rng.uniform(0, 0.05), 6)
        else:
            dlat, dlon = point_in(grid, *b, rng)
        if idx < len(PLANTED_TIMES):
            clock = PLANTED_TIMES[idx]
        else:
            sec = int(rng.integers(0, 86400))
            clock = f"{sec // 3600:02d}:{sec % 3600 // 60:02d}:{sec % 60:02d}"
        day = 1 + int(rng.integers(0, 28))
        pickup = f"2016-02-{day:02d} {clock}"
        records.append({
            "VendorID": int(rng.integers(1, 3)),
            "tpep_pickup_datetime": pickup,
            "tpep_dropoff_datetime": pickup,
            "passenger_count": int(rng.integers(1, 5)),
            "trip_distance": round(float(rng.uniform(0.3, 6.0)), 2),
            "pickup_longitude": plon,
            "pickup_latitude": plat,
            "dropoff_longitude": dlon,
            "dropoff_latitude": dlat,
            "fare_amount": round(float(rng.uniform(3, 30)), 2),
        })

    corruptions = [
        ("dropoff_longitude", ""), ("dropoff_longitude", ""), ("pickup_latitude", "abc"),
        ("pickup_longitude", "nan"), ("dropoff_latitude", "inf"), ("tpep_pickup_datetime", "2016-13-01 00:00:00"),
        ("tpep_pickup_datetime", ""), ("tpep_pickup_datetime", "not-a-date"), ("pickup_latitude", ""),
        ("dropoff_latitude", "40.7.1"), ("pickup_longitude", "-73,98"), ("tpep_pickup_datetime", "2016-02-30 10:00:00"),
        ("dropoff_longitude", "NULL"),
    ]
    bad_rows = []
    for col, value in corruptions:
        base = dict(records[int(rng.integers(len(records)))])
        base[col] = value
        bad_rows.append(base)
    positions = sorted(rng.choice(np.arange(len(PLANTED_TIMES), 1000), size=len(bad_rows), replace=False).tolist())
    for pos, row in zip(positions, bad_rows):
        records.insert(pos, row)
    assert len(records) == 1000

    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(records)


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else OUT)
