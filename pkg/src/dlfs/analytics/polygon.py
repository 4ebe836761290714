"""Label raster <-> pixel-boundary polygons in UTM coordinates.

Rings follow pixel edges, so rasterizing them by pixel center gives back
the label map exactly. Outer rings run counter-clockwise and holes
clockwise (easting right, northing up). Where a label touches itself only
at a corner the walk keeps the two pixels apart, matching 4-connectivity,
and rings never pass through a vertex twice.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..tiling import TileKey, TileSpec, raster_origin

Vertex = tuple[int, int]  # (col, row) in pixel-corner units


@dataclass
class LabelPolygon:
    label: int
    exterior: list[tuple[float, float]]  # closed: first == last
    holes: list[list[tuple[float, float]]]


def _boundary_edges(labels: np.ndarray) -> dict[int, dict[Vertex, list[Vertex]]]:
    """Directed pixel edges with the label on the left, grouped by label and start vertex."""
    p = np.pad(labels, 1)
    core = p[1:-1, 1:-1]
    out: dict[int, dict[Vertex, list[Vertex]]] = defaultdict(lambda: defaultdict(list))
    # (neighbor slice, edge start offset, edge end offset) in (col, row) corner units
    sides = (
        (p[:-2, 1:-1], (1, 0), (0, 0)),  # north side, heading west
        (p[2:, 1:-1], (0, 1), (1, 1)),  # south side, heading east
        (p[1:-1, :-2], (0, 0), (0, 1)),  # west side, heading south
        (p[1:-1, 2:], (1, 1), (1, 0)),  # east side, heading north
    )
    for nb, (sc, sr), (ec, er) in sides:
        rows, cols = np.nonzero((core != nb) & (core > 0))
        for r, c, lab in zip(rows.tolist(), cols.tolist(), core[rows, cols].tolist()):
            out[lab][(c + sc, r + sr)].append((c + ec, r + er))
    return out


def _left(d: Vertex) -> Vertex:
    return (d[1], -d[0])


def _trace(adj: dict[Vertex, list[Vertex]]) -> list[list[Vertex]]:
    rings = []
    for start in sorted(adj):
        while adj[start]:
            a, b = start, adj[start].pop(0)
            ring = [a]
            d = (b[0] - a[0], b[1] - a[1])
            while True:
                ring.append(b)
                outs = adj[b]
                if b == start:
                    # closing is one more option, ranked like any other turn
                    options = outs + [None]
                else:
                    options = outs
                nxt = _pick(b, d, options, first_dir=(ring[1][0] - start[0], ring[1][1] - start[1]))
                if nxt is None:
                    break
                outs.remove(nxt)
                d = (nxt[0] - b[0], nxt[1] - b[1])
                b = nxt
            rings.extend(_simplify(loop) for loop in _split_loops(ring))
    return rings


def _split_loops(ring: list[Vertex]) -> list[list[Vertex]]:
    """Cut a closed walk at repeated vertices into simple closed loops.

    A field that wraps around and meets itself diagonally yields a walk
    through the pinch vertex twice; the pieces are a shell and a hole that
    touch at that point.
    """
    loops = []
    stack: list[Vertex] = []
    pos: dict[Vertex, int] = {}
    for v in ring:
        i = pos.get(v)
        if i is None:
            pos[v] = len(stack)
            stack.append(v)
            continue
        loops.append(stack[i:] + [v])
        for u in stack[i + 1:]:
            del pos[u]
        del stack[i + 1:]
    return loops


def _pick(v: Vertex, d: Vertex, options: list, first_dir: Vertex):
    if len(options) == 1:
        return options[0]
    left = _left(d)
    right = (-left[0], -left[1])
    for want in (left, d, right):
        for o in options:
            od = first_dir if o is None else (o[0] - v[0], o[1] - v[1])
            if od == want:
                return o
    raise AssertionError("inconsistent boundary graph")


def _simplify(ring: list[Vertex]) -> list[Vertex]:
    """Drop vertices in the middle of straight runs; the result is closed."""
    pts = ring[:-1]
    n = len(pts)
    keep = []
    for k in range(n):
        a, b, c = pts[k - 1], pts[k], pts[(k + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            keep.append(b)
    return keep + keep[:1]


def _area2(ring: list[Vertex]) -> int:
    # twice the signed area in (col, row) units; positive is clockwise on screen,
    # which is counter-clockwise with northing up
    return sum(a[0] * b[1] - b[0] * a[1] for a, b in zip(ring, ring[1:])) * -1


def _inside(pt: tuple[float, float], ring: list[Vertex]) -> bool:
    x, y = pt
    hit = False
    for (x0, y0), (x1, y1) in zip(ring, ring[1:]):
        if (y0 > y) != (y1 > y) and x < x0 + (y - y0) * (x1 - x0) / (y1 - y0):
            hit = not hit
    return hit


def _probe(hole: list[Vertex]) -> tuple[float, float]:
    """Center of the pixel just right of the first hole edge (outside the label)."""
    (x0, y0), (x1, y1) = hole[0], hole[1]
    dx, dy = (x1 > x0) - (x1 < x0), (y1 > y0) - (y1 < y0)
    rx, ry = -dy, dx  # right-hand side in (col, row) units
    return x0 + dx * 0.5 + rx * 0.5, y0 + dy * 0.5 + ry * 0.5


def polygonize_pixels(labels: np.ndarray) -> dict[int, list[tuple[list[Vertex], list[list[Vertex]]]]]:
    """Per label: ``(exterior, holes)`` rings in pixel-corner units."""
    result: dict[int, list] = {}
    for lab, adj in sorted(_boundary_edges(labels).items()):
        rings = _trace(adj)
        outers = [r for r in rings if _area2(r) > 0]
        holes = [r for r in rings if _area2(r) < 0]
        polys = [(o, []) for o in outers]
        for h in holes:
            pt = _probe(h)
            owners = [p for p in polys if _inside(pt, p[0])]
            min(owners, key=lambda p: abs(_area2(p[0])))[1].append(h)
        result[lab] = polys
    return result


def polygonize(labels: np.ndarray, key: TileKey, spec: TileSpec) -> list[LabelPolygon]:
    e0, n0 = raster_origin(key, spec)
    res = spec.resolution_m

    def geo(ring):
        return [(e0 + c * res, n0 - r * res) for c, r in ring]

    out = []
    for lab, polys in polygonize_pixels(labels).items():
        for ext, holes in polys:
            out.append(LabelPolygon(lab, geo(ext), [geo(h) for h in holes]))
    return out


def rasterize(polygons: list[LabelPolygon], key: TileKey, spec: TileSpec, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Burn polygons back into a label raster by pixel-center inclusion (even-odd)."""
    e0, n0 = raster_origin(key, spec)
    res = spec.resolution_m
    h, w = shape or (spec.raster_px, spec.raster_px)
    out = np.zeros((h, w), dtype=np.int32)
    for poly in polygons:
        toggles = np.zeros((h, w + 1), dtype=np.int8)
        for ring in (poly.exterior, *poly.holes):
            pts = [(round((e - e0) / res), round((n0 - n) / res)) for e, n in ring]
            for (c0, r0), (c1, r1) in zip(pts, pts[1:]):
                if c0 == c1 and r0 != r1:
                    lo, hi = sorted((r0, r1))
                    toggles[max(lo, 0):min(hi, h), min(max(c0, 0), w)] ^= 1
        inside = (np.cumsum(toggles, axis=1)[:, :w] & 1).astype(bool)
        out[inside] = poly.label
    return out


def to_geojson(polygons: list[LabelPolygon], key: TileKey) -> dict:
    return {
        "type": "FeatureCollection",
        "crs": {"type": "name", "properties": {"name": f"urn:ogc:def:crs:EPSG::{32600 + key.zone}"}},
        "features": [
            {
                "type": "Feature",
                "properties": {"label": p.label, "zone": key.zone, "tile_i": key.i, "tile_j": key.j},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[list(pt) for pt in ring] for ring in (p.exterior, *p.holes)],
                },
            }
            for p in polygons
        ],
    }


def from_geojson(doc: dict | str) -> list[LabelPolygon]:
    if isinstance(doc, str):
        doc = json.loads(doc)
    out = []
    for f in doc["features"]:
        rings = [[tuple(pt) for pt in ring] for ring in f["geometry"]["coordinates"]]
        out.append(LabelPolygon(int(f["properties"]["label"]), rings[0], rings[1:]))
    return out
