#!/usr/bin/env python3
"""Writes the bundled load/wind series under data/series."""
import math
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "data" / "series"


def write(name, wind_bus, rows):
    lines = [f"minute,load_scale,wind_{wind_bus}"]
    lines += [f"{m},{ls:.4f},{w:.4f}" for m, ls, w in rows]
    (OUT / name).write_text("\n".join(lines) + "\n")


def daily(wind_bus, wind_mean, wind_swing, seed):
    # 24 h at 10 min: night valley near 04:00, evening peak near 18:00.
    rng = random.Random(seed)
    rows = []
    gust = 0.0
    for i in range(144):
        h = i / 6.0
        shape = 0.5 * (1 - math.cos(2 * math.pi * (h - 4.0) / 24.0))
        evening = math.exp(-((h - 18.0) / 2.5) ** 2)
        load = 0.70 + 0.22 * shape + 0.10 * evening
        gust = 0.8 * gust + 0.2 * rng.gauss(0.0, 1.0)
        wind = wind_mean + wind_swing * math.cos(2 * math.pi * (h - 2.0) / 24.0) + 0.05 * gust
        rows.append((10 * i, load, max(wind, 0.0)))
    return rows


def valley_peak(wind_bus):
    # Valley for 6 intervals, peak for 6, then valley again so that a long
    # horizon (up to 12) has no reason to hold energy past a 12-interval run.
    rows = []
    for i in range(24):
        load = 1.30 if 6 <= i < 12 else 0.55
        rows.append((10 * i, load, 0.15))
    return rows


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    write("case5_24h.csv", 4, daily(4, 0.25, 0.12, 5))
    write("case14_24h.csv", 5, daily(5, 0.35, 0.15, 14))
    write("case5_valley_peak.csv", 4, valley_peak(4))
