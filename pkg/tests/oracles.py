"""Reference formulas shared by the test modules."""

import math

from scipy.optimize import brentq


def heisenberg_distance(dx, dy, area):
    """Sub-Riemannian distance on the Heisenberg group with [X1, X2] = Z.

    ``area`` is the signed area the horizontal lift must sweep.  Geodesics
    project to circular arcs; an arc of angle phi on a chord of length r
    sweeps r^2 (phi - sin phi) / (8 sin^2(phi/2)) and has length
    r (phi/2) / sin(phi/2).
    """
    r = math.hypot(dx, dy)
    a = abs(area)
    if a == 0:
        return r
    if r == 0:
        return math.sqrt(4 * math.pi * a)
    target = a / r ** 2
    ratio = lambda phi: (phi - math.sin(phi)) / (8 * math.sin(phi / 2) ** 2) - target  # noqa: E731
    phi = brentq(ratio, 1e-12, 2 * math.pi - 1e-12, xtol=1e-15)
    return r * (phi / 2) / math.sin(phi / 2)


def polarized_distance(p, q):
    """Group distance between points given in polarised coordinates."""
    dx, dy = q[0] - p[0], q[1] - p[1]
    dz = q[2] - p[2] - p[0] * dy          # third coordinate of p^{-1} q
    return heisenberg_distance(dx, dy, dz - dx * dy / 2)
