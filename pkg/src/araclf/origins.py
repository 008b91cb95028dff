"""Distributions over candidate origins of an observed binary instance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Neighborhood, _as_binary, enumerate_neighborhood

UNIFORM = "uniform"
INVERSE_DISTANCE = "inverse-distance"


@dataclass(frozen=True)
class OriginDistribution:
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if len(support) == 0:
            raise ValueError("empty origin support")
        if weights.shape != (len(support),) or np.any(weights < 0):
            raise ValueError("weights must be a nonnegative vector matching the support")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("origin weights must sum to 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    def sample(self, n, rng) -> np.ndarray:
        return self.support[rng.choice(len(self.support), size=n, p=self.weights)]

    def expect(self, fn) -> np.ndarray:
        """Exact expectation of a row-wise function over the support."""
        return self.weights @ fn(self.support)


def heuristic_origin(x_obs, radius=1, mode=UNIFORM, mask=None) -> OriginDistribution:
    """Metric-based p(x | x').

    ``uniform`` weights every vector within Hamming ``radius`` of ``x_obs``
    (``x_obs`` included) equally. ``inverse-distance`` drops ``x_obs`` and
    weights the rest proportionally to 1 / distance.
    """
    x_obs = _as_binary(x_obs, "x_obs")
    support = enumerate_neighborhood(Neighborhood(x_obs, radius, None if mask is None else tuple(mask)))
    if mode == UNIFORM:
        return OriginDistribution(support, np.full(len(support), 1.0 / len(support)))
    if mode == INVERSE_DISTANCE:
        dist = np.count_nonzero(support != x_obs, axis=1)
        support, dist = support[dist > 0], dist[dist > 0]
        if len(support) == 0:
            raise ValueError("inverse-distance heuristic has empty support at radius 0")
        w = 1.0 / dist
        return OriginDistribution(support, w / w.sum())
    raise ValueError(f"unknown heuristic mode {mode!r}")
