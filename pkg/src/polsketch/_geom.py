"""Small integer/angle geometry helpers shared by the sketch and region stages."""

from __future__ import annotations

import numpy as np


def wrap_orientation(theta_deg: float) -> float:
    """Fold an angle into [0, 180)."""
    t = theta_deg % 180.0
    return t + 180.0 if t < 0 else t


def orientation_delta(a_deg: float, b_deg: float) -> float:
    """Smallest angle between two undirected orientations, in [0, 90]."""
    d = abs(wrap_orientation(a_deg) - wrap_orientation(b_deg))
    return min(d, 180.0 - d)


def bresenham(x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
    """All integer pixels on the segment from (x0,y0) to (x1,y1), endpoints included.

    Returns an (n, 2) int array of (x, y) pairs ordered from start to end.
    """
    pts = []
    dx, dy = abs(x1 - x0), abs(y1 - y0)
    sx = 1 if x1 >= x0 else -1
    sy = 1 if y1 >= y0 else -1
    x, y = x0, y0
    err = dx - dy
    while True:
        pts.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return np.array(pts, dtype=np.int64)


def disc_element(radius: int) -> np.ndarray:
    """Boolean disc structuring element of the given integer radius."""
    if radius <= 0:
        return np.ones((1, 1), dtype=bool)
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (xx * xx + yy * yy) <= r * r
