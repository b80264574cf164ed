"""Freeze transverse-Mercator reference values from PROJ into tests/data.

PROJ's UTM uses the Poder/Engsager extended transverse Mercator, an
implementation independent of the one in gpslio.geodesy. Run once; the
JSON output is committed so the tests do not need pyproj.
"""

import json
from pathlib import Path

import numpy as np
from pyproj import Transformer

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "tm_oracle_grid.json"


def project(lat, lon, zone):
    south = lat < 0
    crs = f"+proj=utm +zone={zone} {'+south ' if south else ''}+ellps=WGS84 +units=m +no_defs"
    tr = Transformer.from_crs("EPSG:4326", crs, always_xy=True)
    e, n = tr.transform(lon, lat)
    return e, n


def main():
    points = []
    # 10 x 10 grid, latitudes 0..80, longitude offsets spanning a zone
    for lat in np.linspace(0.0, 80.0, 10):
        for k, dlon in enumerate(np.linspace(-2.9, 2.9, 10)):
            zone = 1 + (7 * k + int(lat)) % 60
            lon = 6.0 * zone - 183.0 + dlon
            e, n = project(lat, lon, zone)
            points.append({"lat": float(lat), "lon": float(lon), "zone": zone,
                           "easting": e, "northing": n})
    e, n = project(43.9450, -78.8960, 17)
    data = {"source": "PROJ utm (extended transverse Mercator)",
            "campus_point": {"lat": 43.9450, "lon": -78.8960, "zone": 17,
                             "easting": e, "northing": n},
            "grid": points}
    OUT.write_text(json.dumps(data, indent=1) + "\n")
    print(f"wrote {len(points)} points to {OUT}")


if __name__ == "__main__":
    main()
