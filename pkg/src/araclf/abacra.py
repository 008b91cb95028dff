"""Recovering p(x | x') for attacked binary instances and deciding under it.

Three ways to get origin samples are offered (see :data:`STRATEGIES`): the
two metric heuristics and AB-ACRA, a rejection/ABC sampler that proposes
``x ~ p(x)``, pushes it through the simulated attacker and keeps it when the
simulated observation lands close to the real one on a set of summary
features. :func:`exact_origin_posterior` enumerates the same posterior for
small problems and is what the sampler is tested against.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .attacker import AttackSimulator
from .classifiers import predict_proba
from .core import _as_binary, check_utility
from .origins import INVERSE_DISTANCE, UNIFORM, OriginDistribution, heuristic_origin

__all__ = [
    "ABCConfig",
    "ABCFailure",
    "ABCResult",
    "EmpiricalModel",
    "OriginDistribution",
    "ProductBernoulli",
    "STRATEGIES",
    "abc_sample_origin",
    "exact_origin_posterior",
    "expected_utilities",
    "fit_feature_model",
    "heuristic_origin",
    "robust_classify",
]

ABC = "abc"
STRATEGIES = (UNIFORM, INVERSE_DISTANCE, ABC)


class ProductBernoulli:
    """Independent Bernoulli features."""

    kind = "product-bernoulli"

    def __init__(self, means):
        means = np.asarray(means, dtype=float)
        if np.any((means <= 0) | (means >= 1)):
            raise ValueError("Bernoulli means must lie strictly inside (0, 1); use smoothing")
        self.means = means

    @property
    def d(self):
        return self.means.size

    def sample(self, n, rng):
        return (rng.random((n, self.d)) < self.means).astype(float)

    def log_prob(self, X):
        X = np.atleast_2d(X)
        return X @ np.log(self.means) + (1 - X) @ np.log1p(-self.means)

    def prob(self, X):
        return np.exp(self.log_prob(X))

    def enumerate(self):
        """All 2^d points with their probabilities (small d only)."""
        if self.d > 20:
            raise ValueError("too many features to enumerate")
        support = np.array(list(itertools.product((0.0, 1.0), repeat=self.d)))
        return support, self.prob(support)


class EmpiricalModel:
    """The training multiset itself, sampled uniformly with replacement."""

    kind = "empirical"

    def __init__(self, X):
        X = np.asarray(X, dtype=float)
        if len(X) == 0:
            raise ValueError("empty data")
        self.X = X

    @property
    def d(self):
        return self.X.shape[1]

    def sample(self, n, rng):
        return self.X[rng.integers(0, len(self.X), size=n)]

    def enumerate(self):
        support, counts = np.unique(self.X, axis=0, return_counts=True)
        return support, counts / counts.sum()

    def prob(self, X):
        support, p = self.enumerate()
        lookup = {row.tobytes(): w for row, w in zip(support, p)}
        return np.array([lookup.get(row.tobytes(), 0.0) for row in np.atleast_2d(np.asarray(X, dtype=float))])


def fit_feature_model(X, kind="empirical", smoothing=1.0):
    """Product-Bernoulli means are ``(count + a) / (n + 2a)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("empty data")
    if kind == "empirical":
        return EmpiricalModel(X)
    if kind == "product-bernoulli":
        return ProductBernoulli((X.sum(axis=0) + smoothing) / (len(X) + 2 * smoothing))
    raise ValueError(f"unknown feature model {kind!r}")


@dataclass(frozen=True)
class ABCConfig:
    summary: tuple | None = None  # feature indices; None means all features
    tol: int = 1
    n_samples: int = 5
    max_proposals: int = 1_000_000
    batch_size: int = 512

    def __post_init__(self):
        if self.tol < 0 or int(self.tol) != self.tol:
            raise ValueError("tolerance must be a nonnegative integer")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class ABCResult:
    samples: np.ndarray
    proposals: int
    accepted: int = field(default=0)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0


class ABCFailure(RuntimeError):
    def __init__(self, proposals):
        super().__init__(f"no proposal accepted after {proposals} proposals")
        self.proposals = proposals


def summary_distance(A, b, summary=None):
    """Hamming distance on summary coordinates, row-wise."""
    A = np.atleast_2d(A)
    if summary is not None:
        idx = list(summary)
        A, b = A[:, idx], np.asarray(b)[idx]
    return np.count_nonzero(A != b, axis=1)


def abc_sample_origin(x_obs, feature_model, simulator: AttackSimulator, cfg: ABCConfig, rng,
                      predictive=None) -> ABCResult:
    """AB-ACRA: approximate draws from p(x | x_obs).

    Proposals come in batches; within a batch, acceptances are kept in
    proposal order and sampling stops once ``cfg.n_samples`` are in hand.
    Labels are drawn from ``predictive`` (defaults to the simulator's).
    """
    x_obs = _as_binary(x_obs, "x_obs")
    predictive = predictive or simulator.predictive
    accepted = []
    n_acc = proposals = 0
    while n_acc < cfg.n_samples and proposals < cfg.max_proposals:
        b = min(cfg.batch_size, cfg.max_proposals - proposals)
        X = feature_model.sample(b, rng)
        P = predictive(X)
        cum = np.cumsum(P, axis=1)
        y = np.minimum((rng.random((b, 1)) > cum).sum(axis=1), P.shape[1] - 1)
        Xt, _ = simulator.attack(X, y, rng)
        ok = summary_distance(Xt, x_obs, cfg.summary) <= cfg.tol
        hits = np.flatnonzero(ok)
        need = cfg.n_samples - n_acc
        if len(hits) >= need:
            # only count proposals up to the last one we keep
            proposals += int(hits[need - 1]) + 1
            hits = hits[:need]
        else:
            proposals += b
        accepted.append(X[hits])
        n_acc += len(hits)
    if n_acc == 0:
        raise ABCFailure(proposals)
    samples = np.concatenate(accepted)
    return ABCResult(samples, proposals, len(samples))


def exact_origin_posterior(x_obs, feature_model, simulator: AttackSimulator, rng, n_nested=200,
                           predictive=None) -> OriginDistribution:
    """Enumerated ``p(x | x_obs) ∝ p(x) p(x_obs | x)``.

    Only origins within the attack radius of ``x_obs`` can reach it, so the
    support is restricted to that ball. ``p(x_obs | x, y)`` for bad ``y`` is
    the frequency of ``x_obs`` among ``n_nested`` simulated attacks.
    """
    x_obs = _as_binary(x_obs, "x_obs")
    predictive = predictive or simulator.predictive
    support, prior = feature_model.enumerate()
    near = np.count_nonzero(support != x_obs, axis=1) <= simulator.radius
    support, prior = support[near], prior[near]
    if len(support) == 0:
        raise ValueError("observation unreachable under the feature model")
    P = predictive(support)
    l = simulator.l
    lik = np.zeros(len(support))
    same = np.all(support == x_obs, axis=1)
    lik += same * P[:, l:].sum(axis=1)
    for i in range(l):
        X = np.repeat(support, n_nested, axis=0)
        Xt, _ = simulator.attack(X, np.full(len(X), i), rng)
        hit = np.all(Xt == x_obs, axis=1).reshape(len(support), n_nested).mean(axis=1)
        lik += P[:, i] * hit
    w = prior * lik
    if w.sum() <= 0:
        raise ValueError("all posterior weights are zero; observation unreachable")
    keep = w > 0
    return OriginDistribution(support[keep], w[keep] / w.sum())


def expected_utilities(probs, U):
    """Monte-Carlo psi(y_C) from per-sample predictive rows ``probs`` (N, k)."""
    probs = np.atleast_2d(probs)
    if len(probs) == 0:
        raise ValueError("no origin samples")
    U = check_utility(U, probs.shape[1])
    return U @ probs.mean(axis=0)


def robust_classify(origin_samples, model_or_predictive, U, weights=None):
    """Decision maximising expected utility over origin samples.

    Returns ``(label, psi)``. ``model_or_predictive`` is a classifier or a
    callable mapping (N, d) arrays to (N, k) probabilities. With ``weights``
    the samples are treated as a weighted support instead of draws.
    """
    X = np.atleast_2d(np.asarray(origin_samples, dtype=float))
    if len(X) == 0:
        raise ValueError("empty sample list")
    probs = model_or_predictive(X) if callable(model_or_predictive) else predict_proba(model_or_predictive, X)
    if weights is not None:
        U = check_utility(U, probs.shape[1])
        psi = U @ (np.asarray(weights) @ probs)
    else:
        psi = expected_utilities(probs, U)
    return int(np.argmax(psi)), psi


def origin_samples(x_obs, strategy, *, radius=1, n_samples=5, rng=None, feature_model=None,
                   simulator=None, abc=None):
    """Origin draws for one observation under one of :data:`STRATEGIES`.

    Heuristic strategies return their full weighted support, not draws.
    Returns ``(samples, weights, telemetry)``.
    """
    if strategy in (UNIFORM, INVERSE_DISTANCE):
        dist = heuristic_origin(x_obs, radius, strategy)
        return dist.support, dist.weights, {"acceptance_rate": float("nan"), "proposals": 0}
    if strategy == ABC:
        cfg = abc or ABCConfig(n_samples=n_samples)
        res = abc_sample_origin(x_obs, feature_model, simulator, cfg, rng)
        return res.samples, None, {"acceptance_rate": res.acceptance_rate, "proposals": res.proposals}
    raise ValueError(f"unknown strategy {strategy!r}")
