"""Regenerates the station CSV fixtures used by the data and acceptance tests."""
import csv
import math
import random
from datetime import datetime, timedelta

HERE = __file__.rsplit("/", 1)[0]


def stations(n, rng, lat0=33.0, lon0=-118.5, spread=1.5):
    return [(f"ST{i:03d}", round(lat0 + rng.uniform(0, spread), 4), round(lon0 + rng.uniform(0, spread), 4)) for i in range(n)]


def write(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def stations_188():
    rng = random.Random(188)
    start = datetime(2020, 1, 1)
    rows = []
    for sid, lat, lon in stations(188, rng, 30.0, -120.0, 10.0):
        for h in range(3):
            t = start + timedelta(hours=h)
            rows.append([sid, lat, lon, t.strftime("%Y-%m-%d %H:%M:%S"), round(15 + rng.gauss(0, 3), 2), round(rng.uniform(20, 90), 1)])
    write(f"{HERE}/stations_188.csv", ["station", "lat", "lon", "time", "temperature", "humidity"], rows)


def stations_20():
    # smooth spatial field drifting in time, with about 3% of readings missing
    rng = random.Random(20)
    start = datetime(2021, 6, 1)
    rows = []
    sts = stations(20, rng)
    for h in range(120):
        t = start + timedelta(hours=h)
        for sid, lat, lon in sts:
            temp = 18 + 4 * math.sin(2 * math.pi * h / 24 + lat) + 2 * math.cos(lon * 3) + rng.gauss(0, 0.2)
            hum = 60 - 1.5 * (temp - 18) + rng.gauss(0, 1.0)
            wind = 3 + math.sin(2 * math.pi * h / 24) + rng.gauss(0, 0.3)
            vals = [round(temp, 3), round(hum, 3), round(wind, 3)]
            if 0 < h < 119:
                vals = ["" if rng.random() < 0.03 else v for v in vals]
            rows.append([sid, lat, lon, t.strftime("%Y-%m-%dT%H:%M:%S"), *vals])
    write(f"{HERE}/stations_20.csv", ["station", "lat", "lon", "time", "temperature", "humidity", "wind"], rows)


if __name__ == "__main__":
    stations_188()
    stations_20()
