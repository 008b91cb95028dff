"""Softmax-family classifiers: p(y | x, beta) = softmax(f_beta(x))[y].

Two architectures share one small protocol:

* ``forward(X) -> (logits, cache)``
* ``backward(cache, dlogits) -> (param_grads, dX)``

``backward`` is a vector-Jacobian product, so any scalar loss written in
terms of logits (possibly at several inputs) can be differentiated with
respect to both parameters and inputs by :func:`grad_params` and
:func:`grad_input_logprob`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import log_softmax, log_sum_exp, softmax

FORMAT_NAME = "araclf-model"
FORMAT_VERSION = 1


def _batch(X):
    X = np.asarray(X, dtype=float)
    return (X[None, :], True) if X.ndim == 1 else (X, False)


@dataclass(frozen=True)
class MRModel:
    """Multinomial regression, f(x) = W x + b."""

    W: np.ndarray
    b: np.ndarray
    l1_strength: float = 0.0

    kind = "mr"
    param_names = ("W", "b")

    @classmethod
    def zeros(cls, d, k, l1_strength=0.0):
        return cls(np.zeros((k, d)), np.zeros(k), l1_strength)

    @property
    def k(self):
        return self.W.shape[0]

    @property
    def d(self):
        return self.W.shape[1]

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def with_params(self, params):
        return replace(self, **{n: params[n] for n in self.param_names})

    def forward(self, X):
        if X.shape[-1] != self.d:
            raise ValueError(f"expected {self.d} features, got {X.shape[-1]}")
        return X @ self.W.T + self.b, X

    def backward(self, cache, dlogits):
        X = cache
        grads = {"W": dlogits.T @ X, "b": dlogits.sum(axis=0)}
        return grads, dlogits @ self.W


@dataclass(frozen=True)
class MLPModel:
    """Two-layer rectifier network, f(x) = W2 relu(W1 x + b1) + b2."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    kind = "mlp"
    param_names = ("W1", "b1", "W2", "b2")

    @classmethod
    def init(cls, d, hidden, k, rng):
        """Uniform init in +-1/sqrt(fan_in) for weights and biases."""
        s1, s2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(hidden)
        return cls(
            rng.uniform(-s1, s1, (hidden, d)),
            rng.uniform(-s1, s1, hidden),
            rng.uniform(-s2, s2, (k, hidden)),
            rng.uniform(-s2, s2, k),
        )

    @property
    def k(self):
        return self.W2.shape[0]

    @property
    def d(self):
        return self.W1.shape[1]

    @property
    def hidden(self):
        return self.W1.shape[0]

    @property
    def params(self):
        return {n: getattr(self, n) for n in self.param_names}

    def with_params(self, params):
        return replace(self, **{n: params[n] for n in self.param_names})

    def forward(self, X):
        if X.shape[-1] != self.d:
            raise ValueError(f"expected {self.d} features, got {X.shape[-1]}")
        pre = X @ self.W1.T + self.b1
        act = np.maximum(pre, 0.0)
        return act @ self.W2.T + self.b2, (X, pre, act)

    def backward(self, cache, dlogits):
        X, pre, act = cache
        dact = dlogits @ self.W2
        # subgradient of relu at 0 is 0
        dpre = dact * (pre > 0)
        grads = {
            "W1": dpre.T @ X,
            "b1": dpre.sum(axis=0),
            "W2": dlogits.T @ act,
            "b2": dlogits.sum(axis=0),
        }
        return grads, dpre @ self.W1


@dataclass(frozen=True)
class ParticleSet:
    """K parameter samples of one architecture, approximating p(beta | D)."""

    particles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        parts = tuple(self.particles)
        if not parts:
            raise ValueError("empty particle set")
        kinds = {(p.kind, tuple(v.shape for v in p.params.values())) for p in parts}
        if len(kinds) != 1:
            raise ValueError("particles must share one architecture")
        object.__setattr__(self, "particles", parts)

    def __len__(self):
        return len(self.particles)

    def __iter__(self):
        return iter(self.particles)

    @property
    def k(self):
        return self.particles[0].k

    @property
    def d(self):
        return self.particles[0].d


def as_particles(model) -> ParticleSet:
    return model if isinstance(model, ParticleSet) else ParticleSet((model,))


def logits(model, X):
    X, single = _batch(X)
    out, _ = model.forward(X)
    return out[0] if single else out


def predict_proba(model, X):
    """Predictive distribution; particle sets average the per-particle softmax."""
    X, single = _batch(X)
    if isinstance(model, ParticleSet):
        p = np.mean([softmax(m.forward(X)[0]) for m in model], axis=0)
    else:
        p = softmax(model.forward(X)[0])
    return p[0] if single else p


def predict(model, X):
    return np.argmax(predict_proba(model, X), axis=-1)


def accuracy(model, X, y) -> float:
    return float(np.mean(predict(model, X) == np.asarray(y)))


def log_predictive(model, X, y):
    """log p(y | x, beta) for each row (log of the particle average for a
    particle set)."""
    X, _ = _batch(X)
    y = np.broadcast_to(np.asarray(y, dtype=int).reshape(-1), (len(X),))
    rows = np.arange(len(X))
    lps = np.stack([log_softmax(m.forward(X)[0])[rows, y] for m in as_particles(model)])
    return log_sum_exp(lps, axis=0) - np.log(len(lps))


def grad_input_logprob(model, X, y):
    """Gradient of log p(y | x) with respect to x, row-wise.

    For a particle set this is the gradient of the log of the averaged
    predictive, i.e. the per-particle gradients weighted by p_j(y | x).
    """
    X, single = _batch(X)
    y = np.broadcast_to(np.asarray(y, dtype=int).reshape(-1), (len(X),))
    rows = np.arange(len(X))
    grads, lps = [], []
    for m in as_particles(model):
        out, cache = m.forward(X)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite logits")
        dlogits = -softmax(out)
        dlogits[rows, y] += 1.0
        grads.append(m.backward(cache, dlogits)[1])
        lps.append(log_softmax(out)[rows, y])
    if len(grads) == 1:
        dX = grads[0]
    else:
        w = softmax(np.stack(lps), axis=0)  # (K, n) posterior weight of each particle
        dX = np.einsum("kn,knd->nd", w, np.stack(grads))
    if not np.all(np.isfinite(dX)):
        raise FloatingPointError("non-finite input gradient")
    return dX[0] if single else dX


def grad_params(model, head, *inputs):
    """Differentiate a scalar loss of the logits at several inputs.

    ``head(*logit_arrays)`` must return ``(value, [dvalue/dlogits, ...])``.
    Returns ``(value, grads)`` with ``grads`` keyed like ``model.params``.
    """
    outs, caches = zip(*(model.forward(_batch(X)[0]) for X in inputs))
    value, dlogits = head(*outs)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite loss")
    grads = {n: np.zeros_like(v) for n, v in model.params.items()}
    for cache, dl in zip(caches, dlogits):
        g, _ = model.backward(cache, dl)
        for n in grads:
            grads[n] += g[n]
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise FloatingPointError("NaN in backward pass")
    return value, grads


def cross_entropy_head(y):
    """Mean negative log-likelihood head for :func:`grad_params`."""
    y = np.asarray(y, dtype=int)

    def head(out):
        n = len(out)
        lp = log_softmax(out)
        d = softmax(out)
        d[np.arange(n), y] -= 1.0
        return -lp[np.arange(n), y].mean(), [d / n]

    return head


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def fit_map_multinomial(X, y, k, l1_strength=0.0, max_iter=3000, tol=1e-9):
    """MAP multinomial regression under a Laplace prior on the weights.

    Minimises ``sum_i -log softmax(W x_i + b)[y_i] + l1_strength * |W|_1``
    by accelerated proximal gradient (FISTA) from a zero start. Biases are
    not penalised. Deterministic for fixed inputs.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if l1_strength < 0:
        raise ValueError("l1_strength must be nonnegative")
    n, d = X.shape
    onehot = np.eye(k)[y]
    # Lipschitz bound of the smooth part: 0.5 * ||[X 1]||_2^2
    lip = 0.5 * np.linalg.norm(np.hstack([X, np.ones((n, 1))]), 2) ** 2
    step = 1.0 / max(lip, 1e-12)

    def smooth(W, b):
        out = X @ W.T + b
        lp = log_softmax(out)
        loss = -np.sum(lp * onehot)
        g = np.exp(lp) - onehot
        return loss, g.T @ X, g.sum(axis=0)

    def objective(W, b):
        return smooth(W, b)[0] + l1_strength * np.abs(W).sum()

    W = np.zeros((k, d))
    b = np.zeros(k)
    VW, Vb = W.copy(), b.copy()
    t = 1.0
    prev = objective(W, b)
    for _ in range(max_iter):
        loss, gW, gb = smooth(VW, Vb)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss while fitting multinomial regression")
        W_new = _soft_threshold(VW - step * gW, step * l1_strength)
        b_new = Vb - step * gb
        cur = objective(W_new, b_new)
        if cur > prev:
            # restart momentum when the objective goes up
            t = 1.0
            VW, Vb = W, b
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        VW = W_new + ((t - 1.0) / t_new) * (W_new - W)
        Vb = b_new + ((t - 1.0) / t_new) * (b_new - b)
        converged = prev - cur <= tol * max(1.0, abs(prev))
        W, b, t, prev = W_new, b_new, t_new, cur
        if converged:
            break
    return MRModel(W, b, float(l1_strength))


def select_summary_features(model: MRModel, count: int) -> list[int]:
    """Indices of the ``count`` features with largest max_c |W[c, j]|.

    Descending score; ties go to the lower index.
    """
    d = model.W.shape[1]
    if not 1 <= count <= d:
        raise ValueError(f"count must be in [1, {d}]")
    score = np.abs(model.W).max(axis=0)
    order = sorted(range(d), key=lambda j: (-score[j], j))
    return order[:count]


def config_hash(config) -> str:
    blob = json.dumps(config or {}, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def save_model(path, model, config=None):
    """Write a model or particle set to an ``.npz`` container.

    Layout: a ``__meta__`` entry holding UTF-8 JSON (format name, version,
    architecture kind, particle count, parameter names and shapes, the
    sha256 of the canonical training config, and model scalars), plus one
    C-ordered float64 array per parameter named ``p{i}/{param}``.
    """
    particles = as_particles(model)
    first = particles.particles[0]
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": first.kind,
        "particle_set": isinstance(model, ParticleSet),
        "n_particles": len(particles),
        "params": {n: list(v.shape) for n, v in first.params.items()},
        "config_hash": config_hash(config),
        "config": config or {},
    }
    if first.kind == "mr":
        meta["l1_strength"] = [p.l1_strength for p in particles]
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True, default=str).encode(), dtype=np.uint8)}
    for i, p in enumerate(particles):
        for n, v in p.params.items():
            arrays[f"p{i}/{n}"] = np.ascontiguousarray(v, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(model, meta)``."""
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format") != FORMAT_NAME:
            raise ValueError(f"{path} is not an {FORMAT_NAME} container")
        if meta["version"] > FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {meta['version']}")
        models = []
        for i in range(meta["n_particles"]):
            params = {n: z[f"p{i}/{n}"] for n in meta["params"]}
            if meta["kind"] == "mr":
                models.append(MRModel(params["W"], params["b"], meta["l1_strength"][i]))
            elif meta["kind"] == "mlp":
                models.append(MLPModel(**params))
            else:
                raise ValueError(f"unknown model kind {meta['kind']!r}")
    model = ParticleSet(tuple(models)) if meta["particle_set"] else models[0]
    return model, meta
