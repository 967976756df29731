"""Synthetic point sets with known structure for tests, benchmarks and demos."""
from __future__ import annotations

import numpy as np

from .kernels import Dataset


def _rng(rng):
    return np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng


def gaussian_cloud(n: int, d: int = 2, rng=0, scale: float = 1.0) -> Dataset:
    return Dataset(_rng(rng).normal(scale=scale, size=(n, d)))


def uniform_box(n: int, d: int = 2, rng=0, width: float = 1.0) -> Dataset:
    return Dataset(_rng(rng).uniform(0.0, width, size=(n, d)))


def blobs(n: int, k: int = 2, d: int = 2, spread: float = 0.1, separation: float = 5.0,
          rng=0):
    """``k`` isotropic Gaussian blobs with centers on a line; returns (data, labels)."""
    g = _rng(rng)
    labels = np.arange(n) % k
    centers = np.zeros((k, d))
    centers[:, 0] = separation * np.arange(k)
    X = centers[labels] + g.normal(scale=spread, size=(n, d))
    return Dataset(X), labels


def nested(n: int, inner_frac: float = 0.5, inner_std: float = 0.2, radius: float = 1.0,
           ring_noise: float = 0.0, rng=0):
    """A Gaussian cluster at the origin inside a circle; returns (data, labels)."""
    g = _rng(rng)
    n_in = int(round(n * inner_frac))
    inner = g.normal(scale=inner_std, size=(n_in, 2))
    theta = g.uniform(0.0, 2 * np.pi, n - n_in)
    r = radius + ring_noise * g.normal(size=n - n_in)
    outer = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    labels = np.concatenate([np.zeros(n_in, np.int64), np.ones(n - n_in, np.int64)])
    return Dataset(np.vstack([inner, outer])), labels


def identical(n: int, d: int = 2, value: float = 0.0) -> Dataset:
    return Dataset(np.full((n, d), value))


def star(n: int, radius: float = 1.0) -> Dataset:
    """Vertex 0 at the origin, the rest evenly spaced on a circle around it."""
    theta = 2 * np.pi * np.arange(n - 1) / (n - 1)
    ring = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return Dataset(np.vstack([[0.0, 0.0], ring]))


def equilateral(side: float = 1.0) -> Dataset:
    return Dataset(np.array([[0.0, 0.0], [side, 0.0], [side / 2, side * np.sqrt(3) / 2]]))


def two_cliques(n: int, gap: float = 50.0, jitter: float = 0.0, rng=0):
    """Two equal groups of (near-)coincident points far apart; returns (data, labels)."""
    g = _rng(rng)
    labels = np.arange(n) % 2
    X = np.zeros((n, 2))
    X[:, 0] = gap * labels
    if jitter:
        X += g.normal(scale=jitter, size=X.shape)
    return Dataset(X), labels


def planted_cluster(n: int = 100, planted: int = 20, spread: float = 3.0,
                    tight: float = 0.01, rng=0):
    """``planted`` near-duplicates among uniformly spread points; returns (data, mask)."""
    g = _rng(rng)
    X = g.uniform(-spread, spread, size=(n, 2))
    X[:planted] = g.normal(scale=tight, size=(planted, 2))
    mask = np.zeros(n, bool)
    mask[:planted] = True
    return Dataset(X), mask
