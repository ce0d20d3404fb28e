"""Random test curves for the sampling audits.

Curves are drawn as ``c_0 + sum_{m=1}^{10} c_m (1 - exp(-m z))`` with uniform
coefficients and rescaled so that their H_beta norm is uniform on
``(0, radius]``. Every such curve lies in H_beta exactly.
"""

from __future__ import annotations

import numpy as np

from .curves import cell_weights, norm_beta_values

N_TERMS = 10


def _basis(points: np.ndarray) -> np.ndarray:
    m = np.arange(1, N_TERMS + 1)[:, None]
    return np.vstack([np.ones_like(points), -np.expm1(-m * points[None, :])])


def sample_curves(points, beta, n, radius, gen, nonnegative=False):
    """``(n, len(points))`` curves inside the beta-ball of ``radius``."""
    points = np.asarray(points, dtype=float)
    lo = 0.0 if nonnegative else -1.0
    coef = gen.uniform(lo, 1.0, size=(n, N_TERMS + 1))
    curves = coef @ _basis(points)
    norms = norm_beta_values(curves, cell_weights(points, beta))
    target = radius * (1.0 - gen.random(n))
    return curves * (target / np.where(norms > 0, norms, 1.0))[:, None]


def sample_pairs(points, beta, n, radius, gen, h0=None):
    """Pairs of curves in the ball.

    A third of the pairs are close neighbours (relative gap 1e-3), a third are
    points on a common ray, the rest independent; model-relevant shapes (flat
    curves and the scaled initial curve) seed the first few pairs.
    """
    points = np.asarray(points, dtype=float)
    w = cell_weights(points, beta)
    h = sample_curves(points, beta, n, radius, gen)
    k = sample_curves(points, beta, n, radius, gen)
    third = n // 3
    near = h[:third] + 1e-3 * radius * k[:third] / np.maximum(
        norm_beta_values(k[:third], w), 1e-300
    )[:, None]
    k[:third] = near
    ray = slice(third, n - third)
    scale = gen.uniform(0.0, 1.0, size=n - 2 * third)
    k[ray] = h[ray] * scale[:, None]
    if n >= 2:
        h[0] = np.full_like(points, 0.5 * radius)
        k[0] = np.full_like(points, -0.5 * radius)
    if h0 is not None and n >= 3:
        h0n = float(norm_beta_values(h0, w))
        if h0n > 0:
            h[1] = h0 * (radius / h0n)
            k[1] = h0 * (0.5 * radius / h0n)
    return h, k


def sample_boundary_curves(points, beta, n, radius, gen):
    """Curves with an exact zero at a random interior grid point ``s``.

    Returns ``(curves, s_index)``.
    """
    points = np.asarray(points, dtype=float)
    h = sample_curves(points, beta, n, radius, gen, nonnegative=True)
    idx = gen.integers(1, points.size, size=n)
    h = h - h[np.arange(n), idx][:, None]
    h[np.arange(n), idx] = 0.0
    return h, idx
