"""Deterministic quasi-random point sets on spheres and balls of C^k."""

import numpy as np
from scipy.stats import norm, qmc


def _halton(dim, n, seed):
    u = qmc.Halton(d=dim, scramble=True, seed=seed).random(n)
    return np.clip(u, 1e-12, 1 - 1e-12)


def sphere_points(k, n, radius=1.0, seed=0):
    """``n`` points on the sphere of the given radius in C^k (shape (n, k))."""
    g = norm.ppf(_halton(2 * k, n, seed))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return radius * (g[:, :k] + 1j * g[:, k:])


def ball_points(k, n, radius=1.0, seed=0):
    """``n`` points uniformly spread in the closed ball of C^k."""
    u = _halton(2 * k + 1, n, seed)
    g = norm.ppf(u[:, :2 * k])
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * u[:, 2 * k] ** (1.0 / (2 * k))
    return r[:, None] * (g[:, :k] + 1j * g[:, k:])


def sup_distance(f, g, k, n=10_000, seed=0, radius=1.0):
    """Sampled sup over the ball of ``||f(z) - g(z)||``.

    The difference of two holomorphic maps has a plurisubharmonic norm, so
    the supremum over the ball is attained on its boundary sphere.
    """
    pts = sphere_points(k, n, radius, seed)
    return float(np.linalg.norm(f(pts) - g(pts), axis=1).max())
