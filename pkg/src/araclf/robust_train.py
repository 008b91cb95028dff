"""Robust training of differentiable classifiers.

The ARA objective, written for minimisation, is per example

    -log p(y|x) - log p(y|x') + |f(x) - f(x')|_1 + |LSE f(x) - LSE f(x')|

where LSE f(x) is the unnormalised log p(x | beta); the partition function
cancels in the last difference. Particles are evolved with SGLD on this
loss while attacks are regenerated against each particle every iteration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .classifiers import MLPModel, ParticleSet, as_particles, cross_entropy_head, grad_params, predict_proba
from .core import check_utility, log_softmax, log_sum_exp, softmax
from .gradient_attacks import AttackHyperPrior, fgsm, sgld_attack

STANDARD = "standard"
AT = "AT"
ALP = "ALP"
ARA = "ARA"
MODES = (STANDARD, AT, ALP, ARA)


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration, what="loss"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class LossWeights:
    clean: float = 1.0
    adversarial: float = 1.0
    pairing: float = 1.0
    energy: float = 1.0
    pairing_norm: str = "l1"


@dataclass(frozen=True)
class LossBreakdown:
    clean: float
    adversarial: float
    pairing: float
    energy: float
    total: float


def _ara_head(y, w: LossWeights):
    y = np.asarray(y, dtype=int)

    def head(fx, fxp):
        n = len(fx)
        rows = np.arange(n)
        lp, lpp = log_softmax(fx), log_softmax(fxp)
        ce, ce_adv = -lp[rows, y].mean(), -lpp[rows, y].mean()

        diff = fx - fxp
        if w.pairing_norm == "l1":
            pair = np.abs(diff).sum(axis=1)
            dpair = np.sign(diff)
        elif w.pairing_norm == "l2":
            pair = np.sqrt((diff**2).sum(axis=1))
            dpair = diff / np.maximum(pair, 1e-12)[:, None]
        else:
            raise ValueError(f"unknown pairing norm {w.pairing_norm!r}")

        e_diff = log_sum_exp(fx) - log_sum_exp(fxp)
        energy = np.abs(e_diff)
        px, pxp = softmax(fx), softmax(fxp)
        s = np.sign(e_diff)[:, None]

        dfx = w.clean * px
        dfx[rows, y] -= w.clean
        dfxp = w.adversarial * pxp
        dfxp[rows, y] -= w.adversarial
        dfx += w.pairing * dpair + w.energy * s * px
        dfxp += -w.pairing * dpair - w.energy * s * pxp

        parts = LossBreakdown(
            float(ce), float(ce_adv), float(pair.mean()), float(energy.mean()),
            float(w.clean * ce + w.adversarial * ce_adv + w.pairing * pair.mean() + w.energy * energy.mean()),
        )
        head.parts = parts
        return parts.total, [dfx / n, dfxp / n]

    return head


def ara_loss(model, X, Xp, y, weights=LossWeights()) -> LossBreakdown:
    """Batch-mean ARA loss components (see module docstring)."""
    X, Xp = np.atleast_2d(X), np.atleast_2d(Xp)
    if X.shape != Xp.shape:
        raise ValueError("x and x' must have the same shape")
    fx, _ = model.forward(X)
    fxp, _ = model.forward(Xp)
    if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fxp))):
        raise FloatingPointError("non-finite logits")
    head = _ara_head(np.broadcast_to(np.asarray(y).reshape(-1), (len(X),)), weights)
    head(fx, fxp)
    return head.parts


def ara_loss_and_grad(model, X, Xp, y, weights=LossWeights()):
    X, Xp = np.atleast_2d(X), np.atleast_2d(Xp)
    head = _ara_head(np.broadcast_to(np.asarray(y).reshape(-1), (len(X),)), weights)
    _, grads = grad_params(model, head, X, Xp)
    return head.parts, grads


@dataclass(frozen=True)
class TrainingConfig:
    """Training hyperparameters shared by every mode.

    ``lr`` is the step size (SGD learning rate, or the SGLD step). SGLD
    treats the batch-mean loss as a per-datum average of the full-data
    loss, so its injected noise has variance ``2 * lr / n_train`` per
    coordinate, scaled further by ``noise_scale`` (0 disables noise).
    ``weight_decay`` adds ``wd * beta`` to every gradient (a Gaussian prior).
    """

    mode: str = STANDARD
    epochs: int = 5
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.5
    particles: int = 3
    hidden: int = 128
    weights: LossWeights = field(default_factory=LossWeights)
    attack: AttackHyperPrior = field(default_factory=AttackHyperPrior)
    fgsm_eps: float = 0.1
    noise_scale: float = 1.0
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.particles < 1:
            raise ValueError("need at least one particle")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "attack" in d:
            d["attack"] = AttackHyperPrior(**d["attack"])
        return cls(**d)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s : s + batch_size]


def _grads(model, head, it, *inputs):
    try:
        return grad_params(model, head, *inputs)
    except FloatingPointError as err:
        raise TrainingDiverged(it) from err


def _check(value, grads, it):
    if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingDiverged(it)


def baseline_train(X, y, cfg: TrainingConfig, k=None, init=None, log=None):
    """Momentum-SGD training in ``standard``, ``AT`` or ``ALP`` mode.

    AT halves the cross-entropy between the clean batch and its FGSM
    counterpart at ``cfg.fgsm_eps``; ALP adds the logit-pairing term with
    weight ``cfg.weights.pairing``. ``log`` receives per-epoch mean
    breakdowns as dicts.
    """
    if cfg.mode not in (STANDARD, AT, ALP):
        raise ValueError(f"baseline_train does not handle mode {cfg.mode!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    k = k or int(y.max()) + 1
    rng = np.random.default_rng(cfg.seed)
    model = init or MLPModel.init(X.shape[1], cfg.hidden, k, rng)
    params = {n: v.copy() for n, v in model.params.items()}
    velocity = {n: np.zeros_like(v) for n, v in params.items()}
    it = 0
    for epoch in range(cfg.epochs):
        sums = np.zeros(5)
        nb = 0
        for idx in _batches(len(X), cfg.batch_size, rng):
            model = model.with_params(params)
            xb, yb = X[idx], y[idx]
            if cfg.mode == STANDARD:
                head = cross_entropy_head(yb)
                value, grads = _grads(model, head, it, xb)
                parts = (value, 0.0, 0.0, 0.0, value)
            else:
                try:
                    xa = fgsm(model, xb, yb, cfg.fgsm_eps)
                except FloatingPointError as err:
                    raise TrainingDiverged(it, "attack gradient") from err
                pairing = cfg.weights.pairing if cfg.mode == ALP else 0.0
                # half clean / half adversarial cross-entropy, plus pairing for ALP
                head = _ara_head(yb, LossWeights(0.5, 0.5, pairing, 0.0, cfg.weights.pairing_norm))
                value, grads = _grads(model, head, it, xb, xa)
                b = head.parts
                parts = (b.clean, b.adversarial, b.pairing, b.energy, b.total)
            _check(value, grads, it)
            for n in params:
                g = grads[n] + cfg.weight_decay * params[n] if cfg.weight_decay else grads[n]
                velocity[n] = cfg.momentum * velocity[n] + g
                params[n] = params[n] - cfg.lr * velocity[n]
            sums += parts
            nb += 1
            it += 1
        if log is not None:
            log(dict(zip(("clean", "adversarial", "pairing", "energy", "total"), sums / nb)), epoch=epoch, particle=0)
    return model.with_params(params)


def default_attack_sampler(prior: AttackHyperPrior):
    """Randomised SGLD attacks: one per particle, index-matched."""

    def sample(particles, X, y, rng):
        return sgld_attack(particles, X, y, prior, rng).perturbed

    return sample


def identity_attack(particles, X, y, rng):
    return [np.asarray(X, dtype=float).copy() for _ in particles]


def sgld_train(X, y, cfg: TrainingConfig, attack_sampler=None, k=None, init=None, log=None) -> ParticleSet:
    """ARA training: K SGLD chains on the ARA loss with fresh attacks.

    Every iteration draws one minibatch, attacks it against each particle
    (``attack_sampler(particles, X, y, rng) -> list of arrays``), then moves
    particle i along ``-lr * grad`` of its loss on (x, x'_i) plus Gaussian
    noise. With ``cfg.momentum > 0`` the gradient is replaced by a heavy-ball
    average of past gradients (the Gaussian noise is unchanged); momentum 0
    is plain SGLD.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    k = k or int(y.max()) + 1
    rng = np.random.default_rng(cfg.seed)
    if init is not None:
        particles = list(as_particles(init))
    else:
        particles = [MLPModel.init(X.shape[1], cfg.hidden, k, rng) for _ in range(cfg.particles)]
    attack_sampler = attack_sampler or default_attack_sampler(cfg.attack)
    noise_sd = cfg.noise_scale * np.sqrt(2.0 * cfg.lr / len(X))
    velocity = [{n: np.zeros_like(v) for n, v in p.params.items()} for p in particles]
    it = 0
    for epoch in range(cfg.epochs):
        sums = np.zeros((len(particles), 5))
        nb = 0
        for idx in _batches(len(X), cfg.batch_size, rng):
            xb, yb = X[idx], y[idx]
            try:
                attacked = attack_sampler(ParticleSet(tuple(particles)), xb, yb, rng)
            except FloatingPointError as err:
                raise TrainingDiverged(it, "attack gradient") from err
            for i, (beta, xa) in enumerate(zip(particles, attacked)):
                try:
                    parts, grads = ara_loss_and_grad(beta, xb, xa, yb, cfg.weights)
                except FloatingPointError as err:
                    raise TrainingDiverged(it) from err
                _check(parts.total, grads, it)
                new = {}
                for n, v in beta.params.items():
                    g = grads[n] + cfg.weight_decay * v if cfg.weight_decay else grads[n]
                    velocity[i][n] = cfg.momentum * velocity[i][n] + g
                    new[n] = v - cfg.lr * velocity[i][n]
                    if noise_sd > 0:
                        new[n] = new[n] + noise_sd * rng.standard_normal(v.shape)
                particles[i] = beta.with_params(new)
                sums[i] += (parts.clean, parts.adversarial, parts.pairing, parts.energy, parts.total)
            nb += 1
            it += 1
        if log is not None:
            for i in range(len(particles)):
                log(dict(zip(("clean", "adversarial", "pairing", "energy", "total"), sums[i] / nb)),
                    epoch=epoch, particle=i)
    return ParticleSet(tuple(particles))


def train(X, y, cfg: TrainingConfig, k=None, log=None):
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == ARA:
        return sgld_train(X, y, cfg, k=k, log=log)
    return baseline_train(X, y, cfg, k=k, log=log)


def energy_gap(model, X, Xp) -> float:
    """Mean energy of the clean set minus mean energy of the attacked set.

    The energy is ``-LSE f(x)``, so this is ``mean LSE f(x') - mean LSE f(x)``.

    For particle sets the per-particle gaps are averaged.
    """
    X, Xp = np.atleast_2d(X), np.atleast_2d(Xp)
    if X.shape[0] != Xp.shape[0]:
        raise ValueError("clean and attacked sets differ in size")
    gaps = [np.mean(log_sum_exp(m.forward(Xp)[0])) - np.mean(log_sum_exp(m.forward(X)[0]))
            for m in as_particles(model)]
    return float(np.mean(gaps))


def robust_decide(X_obs, particles, U=None):
    """Expected-utility decision under the particle-averaged predictive.

    Returns labels (ties to the lowest index) for a batch, or one label.
    """
    particles = as_particles(particles)
    P = predict_proba(particles, X_obs)
    U = check_utility(np.eye(particles.k) if U is None else U, particles.k)
    psi = P @ U.T
    return np.argmax(psi, axis=-1)


__all__ = [
    "ALP", "ARA", "AT", "STANDARD", "LossBreakdown", "LossWeights", "TrainingConfig", "TrainingDiverged",
    "ara_loss", "ara_loss_and_grad", "baseline_train", "energy_gap", "identity_attack", "robust_decide",
    "sgld_train", "train",
]
