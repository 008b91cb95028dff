"""Simulation of an ARA-modelled attacker on binary features.

The attacker only cares about instances of bad classes (``0..l-1``). Given
such an instance he picks, within a Hamming neighborhood, the point
maximising ``sum_c u[c, i] * p_A^c(z)`` over good classes ``c``. Our
uncertainty about him enters through random utilities (Beta per cell) and
random probabilities ``p_A^c(z)`` (Beta moment-matched around the
defender's own averaged predictive).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Neighborhood, _as_binary, enumerate_neighborhood, flip_masks, neighbors_batch
from .origins import OriginDistribution

MEAN_EPS = 1e-12


def beta_from_mean_var(mean, var):
    """Beta parameters with the given mean and variance (vectorised)."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any((mean <= 0) | (mean >= 1)):
        raise ValueError("Beta mean must lie in (0, 1)")
    if np.any(var <= 0) or np.any(var >= mean * (1 - mean)):
        raise ValueError("Beta variance must lie in (0, mean * (1 - mean))")
    alpha = ((1 - mean) / var - 1 / mean) * mean**2
    beta = alpha * (1 / mean - 1)
    if alpha.ndim == 0:
        return float(alpha), float(beta)
    return alpha, beta


def beta_moments(alpha, beta):
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    s = alpha + beta
    mean = alpha / s
    var = alpha * beta / (s**2 * (s + 1))
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def concavity_variance_bound(mean):
    """Largest variance keeping a Beta with this mean unimodal-concave:
    ``min(m^2 (1-m) / (1+m), m (1-m)^2 / (2-m))``."""
    m = np.asarray(mean, dtype=float)
    if np.any((m <= 0) | (m >= 1)):
        raise ValueError("mean must lie in the open interval (0, 1)")
    out = np.minimum(m**2 * (1 - m) / (1 + m), m * (1 - m) ** 2 / (2 - m))
    return float(out) if out.ndim == 0 else out


def beta_around(mean, variance_fraction):
    """Beta parameters centred at ``mean`` with variance a fraction of the
    concavity bound."""
    mean = np.clip(np.asarray(mean, dtype=float), MEAN_EPS, 1 - MEAN_EPS)
    return beta_from_mean_var(mean, variance_fraction * concavity_variance_bound(mean))


@dataclass(frozen=True)
class AttackerUtilitySpec:
    """Attacker utilities u(decision c, truth i) for good c and bad i.

    ``mean`` is k x k (decision x truth); only the bad-truth / good-decision
    block is read, every other cell is zero by construction. When ``alpha``
    and ``beta`` are given the block is random, Beta distributed per cell.
    """

    k: int
    l: int
    mean: np.ndarray
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.shape != (self.k, self.k):
            raise ValueError("utility mean must be k x k")
        if not 0 <= self.l <= self.k:
            raise ValueError("need 0 <= l <= k")
        block = mean[self.l :, : self.l]
        if np.any((block < 0) | (block > 1)):
            raise ValueError("attacker utilities must lie in [0, 1]")
        if (self.alpha is None) != (self.beta is None):
            raise ValueError("give both alpha and beta or neither")
        if self.alpha is not None:
            a = np.asarray(self.alpha, dtype=float)[self.l :, : self.l]
            b = np.asarray(self.beta, dtype=float)[self.l :, : self.l]
            if np.any(a <= 0) or np.any(b <= 0):
                raise ValueError("Beta hyperparameters must be positive")
        object.__setattr__(self, "mean", mean)

    @classmethod
    def constant(cls, k, l, value=0.7, variance_fraction=None):
        """Same utility for every bad->good cell, optionally Beta-randomised
        with variance ``variance_fraction`` times the concavity bound.

        ``value`` may also hold one utility per bad class.
        """
        value = np.broadcast_to(np.asarray(value, dtype=float), (l,))
        mean = np.zeros((k, k))
        mean[l:, :l] = value
        if variance_fraction is None or l == 0 or l == k:
            return cls(k, l, mean)
        a, b = beta_around(value, variance_fraction)
        alpha = np.ones((k, k))
        beta = np.ones((k, k))
        alpha[l:, :l], beta[l:, :l] = a, b
        return cls(k, l, mean, alpha, beta)

    @property
    def random(self) -> bool:
        return self.alpha is not None

    def expected(self) -> np.ndarray:
        out = np.zeros((self.k, self.k))
        out[self.l :, : self.l] = self.mean[self.l :, : self.l]
        return out

    def sample(self, rng, size=None) -> np.ndarray:
        """Realised utility matrices, shape (k, k) or (size, k, k)."""
        shape = () if size is None else (size,)
        out = np.zeros(shape + (self.k, self.k))
        if self.random:
            a = self.alpha[self.l :, : self.l]
            b = self.beta[self.l :, : self.l]
            out[..., self.l :, : self.l] = rng.beta(a, b, size=shape + a.shape)
        else:
            out[..., self.l :, : self.l] = self.mean[self.l :, : self.l]
        return out


@dataclass(frozen=True)
class AttackerProbModel:
    """How we model the attacker's beliefs p_A^c(z) about our decisions.

    ``p*(x | z)`` is uniform over the Hamming ball of ``origin_radius``
    around ``z``; its mean predictive is estimated from ``m_samples`` draws
    (``None`` enumerates the ball exactly). With ``worst_case`` the attacker
    uses that estimate directly; otherwise p_A^c(z) is Beta with variance
    ``variance_fraction`` times the concavity bound.
    """

    origin_radius: int = 1
    m_samples: int | None = 40
    variance_fraction: float = 0.1
    worst_case: bool = False
    renormalize: bool = True

    def __post_init__(self):
        if self.m_samples is not None and self.m_samples < 1:
            raise ValueError("m_samples must be >= 1")
        if not 0 < self.variance_fraction <= 1:
            raise ValueError("variance_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class AttackSample:
    origin: np.ndarray
    label: int
    attacked: np.ndarray
    was_attacked: bool


def estimate_mean_c(x_obs, origin: OriginDistribution, predictive, c, m_samples=None, rng=None) -> float:
    """``sum_x p(c | x) p*(x | x_obs)``, exactly or from ``m_samples`` draws."""
    if len(origin.support) == 0:
        raise ValueError("empty origin set")
    if m_samples is None:
        return float(origin.expect(lambda Z: predictive(Z)[:, c]))
    draws = origin.sample(m_samples, rng)
    return float(np.mean(predictive(draws)[:, c]))


def attacker_best_response(candidates, utilities, label, probs, l):
    """Index of the best candidate for an instance of bad class ``label``.

    ``candidates`` is (m, d) in enumeration order, ``utilities`` a realised
    k x k matrix, ``probs`` an (m, k) array of p_A(c | z). Ties go to the
    earliest candidate.
    """
    candidates = np.atleast_2d(candidates)
    if len(candidates) == 0:
        raise ValueError("empty neighborhood")
    if not 0 <= label < l:
        raise ValueError("best response is only defined for bad classes")
    value = np.asarray(probs)[:, l:] @ np.asarray(utilities)[l:, label]
    return int(np.argmax(value))


class AttackSimulator:
    """Batched sampler of x' ~ p(x' | x, y) for a fixed defender predictive.

    ``predictive`` maps an (n, d) array to (n, k) class probabilities. In
    exact-mean mode (``m_samples=None``) candidate means are deterministic
    per instance and memoised.
    """

    def __init__(self, predictive, utilities: AttackerUtilitySpec, prob_model=AttackerProbModel(),
                 radius=1, mask=None, chunk=8192):
        self.predictive = predictive
        self.utilities = utilities
        self.prob_model = prob_model
        self.radius = radius
        self.mask = mask
        self.chunk = chunk
        self.k, self.l = utilities.k, utilities.l
        self._cache = {}
        self._flips = None
        self._origin_flips = None

    def _ensure_flips(self, d):
        if self._flips is None or self._flips.shape[1] != d:
            self._flips = flip_masks(d, self.radius, self.mask)
            self._origin_flips = flip_masks(d, self.prob_model.origin_radius, self.mask)
            self._cache.clear()

    def candidates(self, x) -> np.ndarray:
        x = _as_binary(x)
        return enumerate_neighborhood(Neighborhood(x, self.radius, None if self.mask is None else tuple(self.mask)))

    def _means_direct(self, X, rng):
        n, d = X.shape
        Z = neighbors_batch(X, self._flips)  # (n, m, d)
        m = Z.shape[1]
        out = np.empty((n, m, self.k - self.l))
        q = self._origin_flips.shape[0]
        for s in range(0, n, max(1, self.chunk // m)):
            Zc = Z[s : s + max(1, self.chunk // m)]
            nc = Zc.shape[0]
            if self.prob_model.m_samples is None:
                O = neighbors_batch(Zc.reshape(-1, d), self._origin_flips)  # (nc*m, q, d)
                P = self.predictive(O.reshape(-1, d)).reshape(nc, m, q, self.k)
                out[s : s + nc] = P[..., self.l :].mean(axis=2)
            else:
                M = self.prob_model.m_samples
                pick = rng.integers(0, q, size=(nc, m, M))
                O = np.where(self._origin_flips[pick], 1.0 - Zc[:, :, None, :], Zc[:, :, None, :])
                P = self.predictive(O.reshape(-1, d)).reshape(nc, m, M, self.k)
                out[s : s + nc] = P[..., self.l :].mean(axis=2)
        return out

    def candidate_means(self, X, rng=None) -> np.ndarray:
        """Mean predictive of good classes for every candidate: (n, m, k-l)."""
        X = np.asarray(X, dtype=float)
        self._ensure_flips(X.shape[1])
        if self.prob_model.m_samples is not None:
            return self._means_direct(X, rng)
        keys = [row.tobytes() for row in X.astype(np.uint8)]
        missing = {}
        for i, key in enumerate(keys):
            if key not in self._cache and key not in missing:
                missing[key] = i
        if missing:
            idx = np.fromiter(missing.values(), dtype=int)
            fresh = self._means_direct(X[idx], rng)
            for key, val in zip(missing, fresh):
                self._cache[key] = val
        return np.stack([self._cache[key] for key in keys])

    def realise_probs(self, means, rng) -> np.ndarray:
        """Draw p_A^c(z) around the candidate means."""
        pm = self.prob_model
        if pm.worst_case:
            probs = means
        else:
            a, b = beta_around(means, pm.variance_fraction)
            probs = rng.beta(a, b)
        if pm.renormalize and probs.shape[-1] > 1:
            total = probs.sum(axis=-1, keepdims=True)
            probs = np.where(total > 1.0, probs / total, probs)
        return probs

    def attack(self, X, y, rng):
        """Return ``(X_attacked, was_attacked)`` for a batch."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        out = X.copy()
        bad = np.flatnonzero(y < self.l)
        if len(bad) == 0 or self.l == self.k:
            return out, np.zeros(len(X), dtype=bool)
        means = self.candidate_means(X[bad], rng)
        probs = self.realise_probs(means, rng)
        u = self.utilities.sample(rng, size=len(bad))  # (nb, k, k)
        weights = u[np.arange(len(bad)), self.l :, y[bad]]  # (nb, k-l)
        value = np.einsum("nmc,nc->nm", probs, weights)
        choice = np.argmax(value, axis=1)
        out[bad] = np.where(self._flips[choice], 1.0 - X[bad], X[bad])
        flag = np.zeros(len(X), dtype=bool)
        flag[bad] = True
        return out, flag


def sample_attack(x, y, simulator: AttackSimulator, rng) -> AttackSample:
    """One draw from p(x' | x, y). Good-class instances pass through."""
    x = _as_binary(x)
    xa, flag = simulator.attack(x[None, :], np.array([y]), rng)
    return AttackSample(x, int(y), xa[0], bool(flag[0]))
