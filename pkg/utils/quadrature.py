"""
Quadrature rules shared by the contour and Fredholm code.

Circle rules carry the 1/(2*pi*i) of a contour integral in their weights, so
that sum(w * f(nodes)) approximates (1/(2*pi*i)) * oint f(xi) dxi.
"""
import logging
import math

import numpy as np

from config.config import MAX_NODES, MIN_NODES, QUAD_TOLERANCE
from utils.errors import ValidationError

logger = logging.getLogger(__name__)


def circle_nodes(radius, n, center=0.0):
    """
    Periodic trapezoid rule on a counterclockwise circle.

    Args:
        radius: circle radius (> 0)
        n: number of equispaced nodes
        center: circle center

    Returns:
        (nodes, weights) with weights (node - center)/n
    """
    if radius <= 0:
        raise ValidationError(f"circle radius must be positive, got {radius}")
    if n < 1:
        raise ValidationError(f"node count must be positive, got {n}")
    offsets = radius * np.exp(2j * np.pi * np.arange(n) / n)
    return center + offsets, offsets / n


def node_count(ratio, tol=QUAD_TOLERANCE, scale=1.0, min_nodes=MIN_NODES, max_nodes=MAX_NODES):
    """
    Smallest trapezoid node count M with scale * ratio**M below tol.

    ``ratio`` is the aliasing ratio of the integrand on the circle (distance of
    the nearest singularity, as a radius ratio). The result is rounded up to a
    multiple of 8 and clamped to [min_nodes, max_nodes].
    """
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"aliasing ratio must lie in (0,1), got {ratio}")
    needed = math.log(tol / max(scale, 1e-300)) / math.log(ratio)
    m = max(min_nodes, int(math.ceil(needed)))
    m = 8 * int(math.ceil(m / 8))
    if m > max_nodes:
        logger.warning(f"Node budget capped at {max_nodes} (wanted {m}, aliasing ratio {ratio:.4f})")
        m = max_nodes
    return m


def geometric_depth(ratio, tol, scale=1.0):
    """Smallest K with scale * ratio**K / (1 - ratio) < tol."""
    if not 0.0 <= ratio < 1.0:
        raise ValidationError(f"geometric ratio must lie in [0,1), got {ratio}")
    if ratio == 0.0:
        return 1
    bound = tol * (1.0 - ratio) / max(abs(scale), 1e-300)
    if bound >= 1.0:
        return 1
    return max(1, int(math.ceil(math.log(bound) / math.log(ratio))))


def gauss_legendre(n, a, b):
    """Gauss–Legendre nodes and weights mapped to [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def half_line_algebraic(n, s):
    """Gauss–Legendre on (s, inf) through xi = s + w/(1 - w), w in (0, 1)."""
    w, wt = gauss_legendre(n, 0.0, 1.0)
    return s + w / (1.0 - w), wt / (1.0 - w) ** 2
