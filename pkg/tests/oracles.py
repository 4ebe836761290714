"""Independent reference implementations used only by the tests.

Each one is deliberately naive (pure Python loops, textbook formulas) and
shares no code with the package it checks.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

# FNV-1a, 64 bit, straight from the definition


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


# transverse Mercator, independent of the Krüger series in the package

WGS84_A = 6378137.0
WGS84_F = 1 / 298.257223563
K0 = 0.9996


def meridian_arc(phi: float) -> float:
    """Distance along the meridian from the equator, by 64-point Gauss-Legendre quadrature."""
    e2 = WGS84_F * (2 - WGS84_F)
    x, w = np.polynomial.legendre.leggauss(64)
    p = 0.5 * phi * (x + 1)
    return float(0.5 * phi * np.sum(w * WGS84_A * (1 - e2) / (1 - e2 * np.sin(p) ** 2) ** 1.5))


def redfearn_utm(lon: float, lat: float, zone: int) -> tuple[float, float]:
    """Redfearn's series (the classic survey-manual formulas), sub-mm inside a zone."""
    a, f = WGS84_A, WGS84_F
    e2 = f * (2 - f)
    ep2 = e2 / (1 - e2)
    phi = math.radians(lat)
    lam = math.radians(lon - (zone * 6 - 183))
    s, c = math.sin(phi), math.cos(phi)
    t = math.tan(phi)
    nu = a / math.sqrt(1 - e2 * s * s)
    eta2 = ep2 * c * c
    t2 = t * t
    m = meridian_arc(phi)
    l2 = lam * lam
    x = (lam * c
         + lam ** 3 * c ** 3 / 6 * (1 - t2 + eta2)
         + lam ** 5 * c ** 5 / 120 * (5 - 18 * t2 + t2 * t2 + 14 * eta2 - 58 * t2 * eta2)
         + lam ** 7 * c ** 7 / 5040 * (61 - 479 * t2 + 179 * t2 * t2 - t2 ** 3))
    y = (m / nu
         + l2 / 2 * s * c
         + l2 ** 2 / 24 * s * c ** 3 * (5 - t2 + 9 * eta2 + 4 * eta2 ** 2)
         + l2 ** 3 / 720 * s * c ** 5 * (61 - 58 * t2 + t2 * t2 + 270 * eta2 - 330 * t2 * eta2)
         + l2 ** 4 / 40320 * s * c ** 7 * (1385 - 3111 * t2 + 543 * t2 * t2 - t2 ** 3))
    return 500000.0 + K0 * nu * x, K0 * nu * y


# raster and image-processing oracles


def flood_fill_4(mask: np.ndarray) -> np.ndarray:
    """Label 4-connected True regions, numbering in row-major first-touch order."""
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.int64)
    n = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] and out[r, c] == 0:
                n += 1
                out[r, c] = n
                q = deque([(r, c)])
                while q:
                    y, x = q.popleft()
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and out[yy, xx] == 0:
                            out[yy, xx] = n
                            q.append((yy, xx))
    return out


def gradient_loops(pixels: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Forward-difference gradient magnitude summed over bands, pixel by pixel."""
    b, h, w = pixels.shape
    out = np.zeros((h, w))
    for k in range(b):
        for r in range(h):
            for c in range(w):
                gx = gy = 0.0
                if c + 1 < w and valid[r, c] and valid[r, c + 1]:
                    gx = float(pixels[k, r, c + 1]) - float(pixels[k, r, c])
                if r + 1 < h and valid[r, c] and valid[r + 1, c]:
                    gy = float(pixels[k, r + 1, c]) - float(pixels[k, r, c])
                out[r, c] += math.sqrt(gx * gx + gy * gy)
    return out


def erode_square_loops(valid: np.ndarray, depth: int) -> np.ndarray:
    """A pixel survives if every pixel within Chebyshev distance ``depth`` is valid and inside."""
    h, w = valid.shape
    out = np.zeros_like(valid)
    for r in range(h):
        for c in range(w):
            r0, r1, c0, c1 = r - depth, r + depth, c - depth, c + depth
            if r0 < 0 or c0 < 0 or r1 >= h or c1 >= w:
                continue
            out[r, c] = bool(valid[r0:r1 + 1, c0:c1 + 1].all())
    return out


def bounds_scan(valid: np.ndarray):
    rows = [r for r in range(valid.shape[0]) if valid[r].any()]
    cols = [c for c in range(valid.shape[1]) if valid[:, c].any()]
    if not rows:
        return None
    return rows[0], cols[0], rows[-1] - rows[0] + 1, cols[-1] - cols[0] + 1


def weighted_mean_loops(values: list[np.ndarray], weights: list[np.ndarray]) -> np.ndarray:
    """Per-pixel weighted mean with math.fsum; NaN where the weights sum to zero."""
    b, h, w = values[0].shape
    out = np.full((b, h, w), np.nan)
    for r in range(h):
        for c in range(w):
            ws = [float(wt[r, c]) for wt in weights]
            den = math.fsum(ws)
            if den <= 0:
                continue
            for k in range(b):
                out[k, r, c] = math.fsum(wi * float(v[k, r, c]) for wi, v in zip(ws, values)) / den
    return out


def pixel_in_polygon(x: float, y: float, rings) -> bool:
    """Even-odd rule over every ring of a polygon."""
    inside = False
    for ring in rings:
        for (x0, y0), (x1, y1) in zip(ring, ring[1:]):
            if (y0 > y) != (y1 > y):
                xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
                if x < xc:
                    inside = not inside
    return inside


def signed_area(ring) -> float:
    """Shoelace area: positive for counter-clockwise with y pointing up."""
    return 0.5 * sum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(ring, ring[1:]))


# synthetic field stack for segmentation

FIELD_SHAPE = (64, 64)


def field_truth() -> np.ndarray:
    """Three rectangular fields: left half, top-right quarter, bottom-right quarter."""
    truth = np.empty(FIELD_SHAPE, dtype=np.int32)
    truth[:, :32] = 1
    truth[:32, 32:] = 2
    truth[32:, 32:] = 3
    return truth


def field_stack(seed: int, n_images: int = 12, cloud_fraction: float = 0.2, bands: int = 4):
    """Pixels (n, bands, 64, 64) in reflectance units, plus the ground truth map.

    Every field follows its own random trajectory through time; about
    ``cloud_fraction`` of the images carry a bright rectangular cloud.
    """
    rng = np.random.default_rng(seed)
    truth = field_truth()
    h, w = FIELD_SHAPE
    stack = np.empty((n_images, bands, h, w), dtype=np.float32)
    n_cloudy = int(round(cloud_fraction * n_images))
    cloudy = set(rng.choice(n_images, n_cloudy, replace=False).tolist())
    for t in range(n_images):
        level = rng.uniform(0.02, 0.25, size=(4, bands))  # per field (index 1..3) and band
        img = level[truth].transpose(2, 0, 1) + rng.normal(0, 0.002, (bands, h, w))
        if t in cloudy:
            ph, pw = rng.integers(12, 28, size=2)
            r0, c0 = rng.integers(0, h - ph), rng.integers(0, w - pw)
            img[:, r0:r0 + ph, c0:c0 + pw] = rng.uniform(0.8, 1.0, size=(bands, ph, pw))
        stack[t] = img
    return stack, truth, sorted(cloudy)


def boundary_pixels(truth: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbor in a different ground-truth field."""
    b = np.zeros(truth.shape, dtype=bool)
    d = truth[:, 1:] != truth[:, :-1]
    b[:, 1:] |= d
    b[:, :-1] |= d
    d = truth[1:, :] != truth[:-1, :]
    b[1:, :] |= d
    b[:-1, :] |= d
    return b


def segmentation_agreement(labels: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of pixels assigned consistently with the ground truth.

    Each predicted component maps to the field it overlaps most. A labeled
    pixel agrees if its component maps to its own field; an unlabeled
    (edge) pixel agrees if it sits on a ground-truth boundary.
    """
    mapping = {}
    for lab in np.unique(labels):
        if lab == 0:
            continue
        vals, counts = np.unique(truth[labels == lab], return_counts=True)
        mapping[int(lab)] = int(vals[np.argmax(counts)])
    # a field claimed by two components counts only its larger one
    best: dict[int, tuple[int, int]] = {}
    for lab, f in mapping.items():
        size = int((labels == lab).sum())
        if f not in best or size > best[f][1]:
            best[f] = (lab, size)
    winners = {lab for lab, _ in best.values()}
    good = 0
    edge_ok = boundary_pixels(truth)
    for (r, c), lab in np.ndenumerate(labels):
        if lab == 0:
            good += bool(edge_ok[r, c])
        else:
            good += int(lab) in winners and mapping[int(lab)] == truth[r, c]
    return good / labels.size
