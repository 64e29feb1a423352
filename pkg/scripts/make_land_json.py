"""Convert a Natural Earth low-resolution country shapefile into the bundled land JSON.

Countries are dissolved into land masses so that internal borders disappear.
Run once offline; needs ``pyshp`` and ``shapely`` (not runtime dependencies).

    python scripts/make_land_json.py path/to/naturalearth_lowres.shp src/geoharm/assets/land_110m.json
"""
import json
import sys

import shapefile
from shapely.geometry import shape, mapping
from shapely.ops import unary_union


def main(src, dst):
    reader = shapefile.Reader(src)
    geoms = [shape(s.__geo_interface__).buffer(0) for s in reader.shapes()]
    land = unary_union(geoms)
    polys = list(land.geoms) if hasattr(land, "geoms") else [land]
    rings = []
    for poly in polys:
        rings.append([[round(x, 6), round(y, 6)] for x, y in poly.exterior.coords])
        for hole in poly.interiors:
            rings.append([[round(x, 6), round(y, 6)] for x, y in hole.coords])
    doc = {
        "format": "geoharm-polygons",
        "version": 1,
        "source": "Natural Earth 1:110m admin-0 countries, dissolved to land",
        "rings": rings,
    }
    with open(dst, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
    print(f"{len(polys)} polygons, {len(rings)} rings -> {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
