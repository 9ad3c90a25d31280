#!/usr/bin/env python3
"""Regenerates the bundled synthetic fixture under tests/fixtures/synthetic.

Events follow a logistic model in two raster covariates plus a planted
high-lethality region (lat 0..30, lon 10..50). Output is deterministic.
"""

import json
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "synthetic"
CELL = 5.0
NROWS, NCOLS = int(180 / CELL), int(360 / CELL)
YEARS = (2010, 2011)
REGION = (0.0, 30.0, 10.0, 50.0)
BETA = {"pop": 0.8, "lum": -0.4}


def grid(fn):
    lat = 90.0 - (np.arange(NROWS) + 0.5) * CELL
    lon = -180.0 + (np.arange(NCOLS) + 0.5) * CELL
    la, lo = np.meshgrid(np.radians(lat), np.radians(lon), indexing="ij")
    return fn(la, lo)


def write_raster(path, values):
    with open(path, "w") as f:
        f.write(f"ncols {NCOLS}\nnrows {NROWS}\nxllcorner -180\nyllcorner -90\n")
        f.write(f"cellsize {CELL:g}\nnodata_value -9999\n")
        for row in values:
            f.write(" ".join(f"{v:.4f}" if v != -9999 else "-9999" for v in row) + "\n")


def sample(values, lat, lon):
    r = np.clip(((90.0 - lat) // CELL).astype(int), 0, NROWS - 1)
    c = np.clip(((lon + 180.0) // CELL).astype(int), 0, NCOLS - 1)
    return values[r, c]


def in_region(lat, lon):
    return (lat >= REGION[0]) & (lat <= REGION[1]) & (lon >= REGION[2]) & (lon <= REGION[3])


def main():
    rng = np.random.default_rng(20240611)
    OUT.mkdir(parents=True, exist_ok=True)

    pop = grid(lambda la, lo: 2.0 + np.sin(2 * lo) * np.cos(la) + 0.5 * np.cos(3 * la))
    pop[-1, :] = -9999  # southernmost band has no data
    lum = {
        y: grid(lambda la, lo, k=k: np.cos(lo + 0.4 * k) * np.cos(la) ** 2 + 0.3 * k)
        for k, y in enumerate(YEARS)
    }
    write_raster(OUT / "pop.asc", pop)
    for y, v in lum.items():
        write_raster(OUT / f"lum_{y}.asc", v)

    sites = []
    for i in range(12):
        sites.append((f"inner{i:02d}", rng.uniform(3, 27), rng.uniform(13, 47)))
    for i in range(24):
        z = rng.uniform(-0.9, 0.95)
        sites.append((f"outer{i:02d}", np.degrees(np.arcsin(z)), rng.uniform(-180, 180)))
    with open(OUT / "sites.csv", "w") as f:
        f.write("name,latitude,longitude\n")
        for name, la, lo in sites:
            f.write(f"{name},{la:.4f},{lo:.4f}\n")

    n = 3000
    kind = rng.uniform(size=n)
    lat = np.degrees(np.arcsin(rng.uniform(-1, 1, size=n)))
    lon = rng.uniform(-180, 180, size=n)
    region = kind < 0.3
    lat[region] = rng.uniform(REGION[0], REGION[1], size=region.sum())
    lon[region] = rng.uniform(REGION[2], REGION[3], size=region.sum())
    near = (kind >= 0.3) & (kind < 0.55)
    pick = rng.integers(0, len(sites), size=near.sum())
    lat[near] = np.array([sites[k][1] for k in pick]) + rng.uniform(-0.3, 0.3, size=near.sum())
    lon[near] = np.array([sites[k][2] for k in pick]) + rng.uniform(-0.3, 0.3, size=near.sum())
    year = rng.integers(YEARS[0] - 1, YEARS[1] + 2, size=n)

    p = sample(pop, lat, lon)
    valid = p != -9999
    zp = np.where(valid, (p - p[valid].mean()) / p[valid].std(ddof=1), 0.0)
    lv = np.array([sample(lum[min(max(y, YEARS[0]), YEARS[1])], a, b) for a, b, y in zip(lat, lon, year)])
    zl = (lv - lv.mean()) / lv.std(ddof=1)
    eta = -1.0 + BETA["pop"] * zp + BETA["lum"] * zl + 3.5 * in_region(lat, lon)
    lethal = rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))
    nkill = np.where(lethal, 1 + rng.poisson(2.0, size=n), 0)
    missing = rng.uniform(size=n) < 0.03
    spec = np.where(rng.uniform(size=n) < 0.85, 1, rng.integers(2, 6, size=n))

    with open(OUT / "events.csv", "w") as f:
        f.write("id,latitude,longitude,year,nkill,specificity\n")
        for i in range(n):
            la = 95.0 if i % 500 == 17 else lat[i]
            nk = "" if missing[i] else str(nkill[i])
            f.write(f"E{i:05d},{la:.4f},{lon[i]:.4f},{year[i]},{nk},{spec[i]}\n")

    base = {
        "seed": 7,
        "mesh": {"subdivisions": 3},
        "data": {
            "events_path": "events.csv",
            "rasters": {"pop": "pop.asc", "lum": {str(y): f"lum_{y}.asc" for y in YEARS}},
            "sites_path": "sites.csv",
            "window": {"first_year": YEARS[0], "last_year": YEARS[1]},
            "min_specificity": 1,
        },
        "model": {
            "likelihood": "bernoulli",
            "covariates": ["pop", "lum"],
            "noise_term": False,
            "prior": {"mode": "default", "r_km": 500, "sigma2": 50},
        },
        "predict": {"resolution_deg": 2.0, "years": list(YEARS)},
        "hotspot": {"epsilon": 0.5},
        "output": {"directory": "out"},
    }
    with open(OUT / "bernoulli.json", "w") as f:
        json.dump(base, f, indent=2)
        f.write("\n")
    poisson = json.loads(json.dumps(base))
    poisson["model"]["likelihood"] = "poisson"
    poisson["hotspot"] = {"epsilon": 5.0}
    with open(OUT / "poisson.json", "w") as f:
        json.dump(poisson, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
