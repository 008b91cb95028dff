"""Gradient attacks on differentiable classifiers over [0, 1]^d.

All attacks ascend the adversarial loss ``-log p(y | x, beta)`` and clip
their output to the unit box. Inputs may be single vectors or (n, d)
batches; labels broadcast row-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifiers import as_particles, grad_input_logprob

LINF = "linf"
L1 = "l1"


def _ascent_direction(model, X, y):
    """Gradient of -log p(y | x, beta) with respect to x."""
    g = -grad_input_logprob(model, X, y)
    if np.isnan(g).any():
        raise FloatingPointError("gradient is NaN")
    return g


def fgsm(model, X, y, eps):
    """One signed-gradient step of size ``eps`` against log p(y | x)."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    X = np.asarray(X, dtype=float)
    if eps == 0:
        return X.copy()
    return np.clip(X + eps * np.sign(_ascent_direction(model, X, y)), 0.0, 1.0)


def project_linf(X, X0, eps):
    return np.clip(np.clip(X, X0 - eps, X0 + eps), 0.0, 1.0)


def project_l1(X, X0, eps, iters=60):
    """Euclidean projection onto {|delta|_1 <= eps} intersected with the box.

    Box-constrained soft-thresholding: ``delta_j = clip(soft(v_j, t), lo_j,
    hi_j)`` with the threshold ``t`` found by bisection, keeping the side of
    the bracket that is feasible.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    V = X - X0
    lo, hi = -X0, 1.0 - X0

    def shrink(t):
        return np.clip(np.sign(V) * np.maximum(np.abs(V) - t[:, None], 0.0), lo, hi)

    D = np.clip(V, lo, hi)
    over = np.abs(D).sum(axis=1) > eps
    if over.any():
        t_lo = np.zeros(len(V))
        t_hi = np.abs(V).max(axis=1)
        for _ in range(iters):
            mid = 0.5 * (t_lo + t_hi)
            feasible = np.abs(shrink(mid)).sum(axis=1) <= eps
            t_hi = np.where(feasible, mid, t_hi)
            t_lo = np.where(feasible, t_lo, mid)
        D = np.where(over[:, None], shrink(t_hi), D)
    return X0 + D


def pgd(model, X, y, eps, steps=10, alpha=None, norm=LINF, random_start=False, rng=None):
    """Projected gradient ascent on -log p(y | x) inside an eps-ball.

    Step size defaults to ``2.5 * eps / steps``. The l-inf variant steps
    along the gradient sign; the l1 variant along the l1-normalised
    gradient.
    """
    if norm not in (LINF, L1):
        raise ValueError(f"unknown norm {norm!r}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X0 = np.asarray(X, dtype=float)
    single = X0.ndim == 1
    X0 = np.atleast_2d(X0)
    if eps == 0:
        return X0[0].copy() if single else X0.copy()
    alpha = 2.5 * eps / steps if alpha is None else alpha
    project = project_linf if norm == LINF else project_l1
    Xa = X0.copy()
    if random_start:
        if norm == LINF:
            Xa = project(X0 + rng.uniform(-eps, eps, X0.shape), X0, eps)
        else:
            Xa = project(X0 + rng.laplace(0, eps / X0.shape[1], X0.shape), X0, eps)
    for _ in range(steps):
        g = _ascent_direction(model, Xa, y)
        if norm == LINF:
            Xa = Xa + alpha * np.sign(g)
        else:
            Xa = Xa + alpha * g / np.maximum(np.abs(g).sum(axis=1, keepdims=True), 1e-12)
        Xa = project(Xa, X0, eps)
    return Xa[0] if single else Xa


@dataclass(frozen=True)
class AttackHyperPrior:
    """Our uncertainty about the attacker's step size and iteration count.

    ``eps`` is a Beta(a, b) rescaled to [eps_min, eps_max] (or Gamma(shape,
    scale) with ``eps_dist="gamma"``); ``T`` is Poisson(lambda_T) truncated
    below at 1. ``noise_scale`` multiplies the Langevin noise standard
    deviation sqrt(2 eps_t); 1 is plain SGLD.
    """

    eps_min: float = 0.05
    eps_max: float = 0.3
    eps_dist: str = "beta"
    eps_a: float = 2.0
    eps_b: float = 2.0
    lambda_T: float = 1.0
    sign: bool = True
    noise: bool = True
    noise_scale: float = 1.0
    decay: float = 0.55

    def __post_init__(self):
        if self.eps_min <= 0 or self.eps_max < self.eps_min:
            raise ValueError("need 0 < eps_min <= eps_max")
        if self.lambda_T <= 0:
            raise ValueError("lambda_T must be positive")
        if self.eps_dist not in ("beta", "gamma"):
            raise ValueError(f"unknown eps distribution {self.eps_dist!r}")

    def sample_eps(self, rng) -> float:
        if self.eps_dist == "beta":
            return float(self.eps_min + (self.eps_max - self.eps_min) * rng.beta(self.eps_a, self.eps_b))
        return float(self.eps_min + rng.gamma(self.eps_a, self.eps_b))

    def sample_T(self, rng) -> int:
        return max(1, int(rng.poisson(self.lambda_T)))


@dataclass
class AttackResult:
    perturbed: list
    eps: list
    T: list
    trace: list = field(default_factory=list)


def sgld_attack(particles, X, y, prior: AttackHyperPrior, rng, per_particle=False, keep_trace=False,
                T=None, eps=None) -> AttackResult:
    """Langevin attack against each particle.

    Draws ``(eps, T)`` once per call (or per particle with
    ``per_particle``), then for each particle runs ``T`` steps of
    ``x <- clip(x + eps_t * dir + N(0, 2 eps_t))`` with
    ``eps_t = eps / (1 + t)^decay`` and ``dir`` the sign of (or the raw)
    gradient of ``-log p(y | x, beta_i)``. ``T``/``eps`` override the draws.
    """
    particles = as_particles(particles)
    if len(particles) == 0:
        raise ValueError("empty particle set")
    X0 = np.asarray(X, dtype=float)
    result = AttackResult([], [], [])
    draw = None
    for beta in particles:
        if draw is None or per_particle:
            t_draw = prior.sample_T(rng) if T is None else int(T)
            e_draw = prior.sample_eps(rng) if eps is None else float(eps)
            draw = (e_draw, t_draw)
        e, steps = draw
        Xa = X0.copy()
        trace = [Xa.copy()] if keep_trace else None
        for t in range(steps):
            e_t = e / (1.0 + t) ** prior.decay
            g = _ascent_direction(beta, Xa, y)
            Xa = Xa + e_t * (np.sign(g) if prior.sign else g)
            if prior.noise:
                Xa = Xa + prior.noise_scale * np.sqrt(2.0 * e_t) * rng.standard_normal(Xa.shape)
            Xa = np.clip(Xa, 0.0, 1.0)
            if keep_trace:
                trace.append(Xa.copy())
        result.perturbed.append(Xa)
        result.eps.append(e)
        result.T.append(steps)
        if keep_trace:
            result.trace.append(trace)
    return result


def mixture_attack(model, X, y, p, attack_a, attack_b, rng):
    """Row-wise Bernoulli(p) choice between two attacks ``f(model, X, y)``."""
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    pick = rng.random(len(X2)) < p
    out = np.where(pick[:, None], attack_a(model, X2, y), attack_b(model, X2, y))
    return (out[0], bool(pick[0])) if single else (out, pick)
