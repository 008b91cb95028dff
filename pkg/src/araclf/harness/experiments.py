"""Experiment protocols for both tracks.

Tabular track: repeated hold-out over a binary dataset; each repetition
fits a MAP multinomial regression, attacks the bad-class test rows with the
worst-case attacker and scores every defence on the attacked test set.

Image track: security evaluation curves (accuracy vs attack strength) for a
set of trained defences under FGSM/PGD, plus the energy gap.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .. import abacra
from ..abacra import ABCConfig, ABCFailure, abc_sample_origin, fit_feature_model, robust_classify
from ..attacker import AttackerProbModel, AttackerUtilitySpec, AttackSimulator
from ..classifiers import accuracy, fit_map_multinomial, predict, predict_proba, select_summary_features
from ..core import LabeledDataset, zero_one_utility
from ..gradient_attacks import L1, LINF, fgsm, pgd
from ..robust_train import energy_gap
from ..origins import INVERSE_DISTANCE, UNIFORM, heuristic_origin
from .data import repeated_holdout

RAW = "raw"
ABACRA = "abacra"
TABULAR_DEFENCES = (RAW, UNIFORM, INVERSE_DISTANCE, ABACRA)


@dataclass(frozen=True)
class AttackerConfig:
    """Attacker as used for evaluation and as modelled inside AB-ACRA."""

    radius: int = 1
    utility: float = 0.7
    m_samples: int | None = 40
    variance_fraction: float = 0.1
    # evaluation attacker: worst case knows the defender's true predictive
    worst_case: bool = True
    identity: bool = False
    mask: tuple | None = None
    # defender's model of the attacker inside AB-ACRA
    model_m_samples: int | None = None


@dataclass(frozen=True)
class TabularConfig:
    split: float = 0.8
    repetitions: int = 10
    seed: int = 0
    l1_strength: float | None = 0.3
    l1_grid: tuple = (0.1, 0.3, 1.0, 3.0, 10.0)
    cv_folds: int = 3
    attacker: AttackerConfig = field(default_factory=AttackerConfig)
    defences: tuple = TABULAR_DEFENCES
    summary_count: int = 12
    tol: int = 1
    n_samples: int = 5
    max_proposals: int = 20_000
    feature_model: str = "empirical"
    heuristic_radius: int = 1


@dataclass
class RepetitionResult:
    clean: float
    accuracies: dict
    abc_failures: int = 0
    mean_acceptance: float = float("nan")
    mean_proposals: float = float("nan")


@dataclass
class EvaluationResult:
    repetitions: list

    def _values(self, name):
        if name == "clean":
            return np.array([r.clean for r in self.repetitions])
        return np.array([r.accuracies[name] for r in self.repetitions])

    def mean(self, name) -> float:
        return float(self._values(name).mean())

    def std(self, name) -> float:
        return float(self._values(name).std(ddof=1)) if len(self.repetitions) > 1 else 0.0

    def table(self):
        names = ["clean"] + list(self.repetitions[0].accuracies)
        rows = [(n, self.mean(n), self.std(n)) for n in names]
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["defence", "mean_accuracy", "std_accuracy", "abc_failures"])
        fails = sum(r.abc_failures for r in self.repetitions)
        for name, m, s in self.table():
            w.writerow([name, f"{m:.6f}", f"{s:.6f}", fails if name == ABACRA else 0])
        return buf.getvalue()


def select_l1_strength(X, y, k, grid, folds=3, seed=0):
    """K-fold cross-validated choice of the L1 penalty (highest accuracy,
    smallest penalty on ties)."""
    perm = np.random.default_rng(seed).permutation(len(X))
    parts = np.array_split(perm, folds)
    scores = []
    for lam in grid:
        acc = []
        for f in range(folds):
            test = parts[f]
            train = np.concatenate([parts[g] for g in range(folds) if g != f])
            m = fit_map_multinomial(X[train], y[train], k, lam)
            acc.append(accuracy(m, X[test], y[test]))
        scores.append(np.mean(acc))
    best = max(scores)
    return float(min(lam for lam, s in zip(grid, scores) if s >= best - 1e-12))


def build_simulators(model, data: LabeledDataset, cfg: AttackerConfig):
    """(evaluation attacker, defender's attacker model) for a fitted model."""

    def predictive(X):
        return predict_proba(model, X)

    evaluation = AttackSimulator(
        predictive,
        AttackerUtilitySpec.constant(data.k, data.l, cfg.utility),
        AttackerProbModel(cfg.radius, cfg.m_samples, cfg.variance_fraction, worst_case=cfg.worst_case),
        radius=cfg.radius,
        mask=cfg.mask,
    )
    modelled = AttackSimulator(
        predictive,
        AttackerUtilitySpec.constant(data.k, data.l, cfg.utility, cfg.variance_fraction),
        AttackerProbModel(cfg.radius, cfg.model_m_samples, cfg.variance_fraction, worst_case=False),
        radius=cfg.radius,
        mask=cfg.mask,
    )
    return evaluation, modelled


def attack_test_set(simulator, X, y, rng, identity=False):
    if identity:
        return np.asarray(X, dtype=float).copy()
    Xa, _ = simulator.attack(X, y, rng)
    return Xa


def defend(strategy, X_obs, model, *, train_X=None, simulator=None, abc_cfg=None, seed=0, rep=0,
           heuristic_radius=1, U=None):
    """Decisions for every row of ``X_obs`` under one defence strategy.

    Returns ``(labels, telemetry)``; AB-ACRA failures fall back to the raw
    decision and are counted in the telemetry.
    """
    X_obs = np.asarray(X_obs, dtype=float)
    U = zero_one_utility(model.k) if U is None else U
    if strategy == RAW:
        return predict(model, X_obs), {}
    labels = np.empty(len(X_obs), dtype=int)
    if strategy in (UNIFORM, INVERSE_DISTANCE):
        for i, x in enumerate(X_obs):
            dist = heuristic_origin(x, heuristic_radius, strategy)
            labels[i], _ = robust_classify(dist.support, model, U, weights=dist.weights)
        return labels, {}
    if strategy == ABACRA:
        fm = fit_feature_model(train_X, abc_cfg.get("feature_model", "empirical"))
        cfg = abc_cfg["abc"]
        fails, rates, props = 0, [], []
        for i, x in enumerate(X_obs):
            rng = np.random.default_rng([seed, rep, i])
            try:
                res = abc_sample_origin(x, fm, simulator, cfg, rng)
            except ABCFailure as exc:
                fails += 1
                props.append(exc.proposals)
                labels[i] = predict(model, x[None, :])[0]
                continue
            rates.append(res.acceptance_rate)
            props.append(res.proposals)
            labels[i], _ = robust_classify(res.samples, model, U)
        return labels, {
            "abc_failures": fails,
            "acceptance": float(np.mean(rates)) if rates else float("nan"),
            "proposals": float(np.mean(props)) if props else float("nan"),
        }
    raise ValueError(f"unknown defence {strategy!r}")


def run_repetition(data: LabeledDataset, train_idx, test_idx, cfg: TabularConfig, rep, variants=None):
    """One hold-out repetition.

    ``variants`` optionally maps extra result names to ABCConfig overrides
    (dicts of ``tol``/``n_samples``), evaluated with the same fitted model,
    attacked test set and per-instance seeds.
    """
    tr, te = data.subset(train_idx), data.subset(test_idx)
    lam = cfg.l1_strength
    if lam is None:
        lam = select_l1_strength(tr.X, tr.y, data.k, cfg.l1_grid, cfg.cv_folds, seed=cfg.seed + rep)
    model = fit_map_multinomial(tr.X, tr.y, data.k, lam)
    evaluation, modelled = build_simulators(model, data, cfg.attacker)
    rng = np.random.default_rng([cfg.seed, rep, 10**6])
    Xa = attack_test_set(evaluation, te.X, te.y, rng, identity=cfg.attacker.identity)
    summary = tuple(select_summary_features(model, min(cfg.summary_count, data.d)))
    base_abc = ABCConfig(summary, cfg.tol, cfg.n_samples, cfg.max_proposals)

    result = RepetitionResult(accuracy(model, te.X, te.y), {})
    for strategy in cfg.defences:
        if cfg.attacker.identity:
            # a defender who knows there is no attacker has p(x | x') = point mass at x'
            result.accuracies[strategy] = float(np.mean(predict(model, Xa) == te.y))
            continue
        labels, tele = defend(strategy, Xa, model, train_X=tr.X, simulator=modelled,
                              abc_cfg={"abc": base_abc, "feature_model": cfg.feature_model},
                              seed=cfg.seed, rep=rep, heuristic_radius=cfg.heuristic_radius)
        result.accuracies[strategy] = float(np.mean(labels == te.y))
        if strategy == ABACRA:
            result.abc_failures = tele["abc_failures"]
            result.mean_acceptance = tele["acceptance"]
            result.mean_proposals = tele["proposals"]
    for name, override in (variants or {}).items():
        abc_cfg = ABCConfig(summary, override.get("tol", cfg.tol), override.get("n_samples", cfg.n_samples),
                            cfg.max_proposals)
        labels, _ = defend(ABACRA, Xa, model, train_X=tr.X, simulator=modelled,
                           abc_cfg={"abc": abc_cfg, "feature_model": cfg.feature_model},
                           seed=cfg.seed, rep=rep)
        result.accuracies[name] = float(np.mean(labels == te.y))
    return result


def evaluate_under_attack(data: LabeledDataset, cfg: TabularConfig, variants=None) -> EvaluationResult:
    """Attack-then-defend accuracy over repeated hold-out splits."""
    splits = repeated_holdout(len(data), cfg.split, cfg.repetitions, cfg.seed)
    return EvaluationResult([run_repetition(data, tr, te, cfg, r, variants) for r, (tr, te) in enumerate(splits)])


# -- image track ---------------------------------------------------------------


@dataclass(frozen=True)
class CurveRow:
    eps: float
    defence: str
    attack: str
    mean_accuracy: float
    std_accuracy: float


@dataclass
class CurveTable:
    rows: list = field(default_factory=list)

    def get(self, defence, attack, eps) -> CurveRow:
        for r in self.rows:
            if r.defence == defence and r.attack == attack and abs(r.eps - eps) < 1e-12:
                return r
        raise KeyError((defence, attack, eps))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "defence", "attack", "mean_accuracy", "std_accuracy"])
        for r in sorted(self.rows, key=lambda r: (r.defence, r.attack, r.eps)):
            w.writerow([f"{r.eps:g}", r.defence, r.attack, f"{r.mean_accuracy:.6f}", f"{r.std_accuracy:.6f}"])
        return buf.getvalue()


def attack_batch(name, model, X, y, eps, pgd_steps=20, chunk=1000):
    """Apply a named test-time attack to ``model``.

    For particle sets the attack targets each particle in turn and the
    resulting accuracies are later averaged by the caller; see
    :func:`security_curve`.
    """
    out = np.empty_like(X)
    for s in range(0, len(X), chunk):
        xb, yb = X[s : s + chunk], y[s : s + chunk]
        if name == "fgsm":
            out[s : s + chunk] = fgsm(model, xb, yb, eps)
        elif name in ("pgd", "pgd-linf"):
            out[s : s + chunk] = pgd(model, xb, yb, eps, steps=pgd_steps, norm=LINF)
        elif name == "pgd-l1":
            out[s : s + chunk] = pgd(model, xb, yb, eps, steps=pgd_steps, norm=L1)
        else:
            raise ValueError(f"unknown attack {name!r}")
    return out


def _members(defence):
    from ..classifiers import as_particles

    return list(as_particles(defence))


def security_curve(defences: dict, attacks, eps_grid, X, y, pgd_steps=20) -> CurveTable:
    """Accuracy for every (defence, attack, eps).

    A particle-set defence is attacked particle by particle (white-box
    against each posterior sample) and decides with the particle-averaged
    predictive; the reported std is across those per-particle attacks. A
    single model has std 0.
    """
    eps_grid = sorted(eps_grid)
    if not eps_grid or eps_grid[0] != 0:
        raise ValueError("eps grid must start at 0")
    table = CurveTable()
    for dname, defence in defences.items():
        members = _members(defence)
        for aname in attacks:
            for eps in eps_grid:
                accs = []
                for m in members:
                    Xa = attack_batch(aname, m, X, y, eps, pgd_steps)
                    accs.append(accuracy(defence, Xa, y))
                table.rows.append(CurveRow(float(eps), dname, aname, float(np.mean(accs)), float(np.std(accs))))
    return table


def attacked_energy_gap(defence, X, y, attack="pgd", eps=0.25, pgd_steps=20) -> float:
    """Energy gap between clean data and its white-box attacked version.

    Each particle is attacked on its own and contributes the gap measured
    with its own logits; the result is the average over particles.
    """
    gaps = [energy_gap(m, X, attack_batch(attack, m, X, y, eps, pgd_steps)) for m in _members(defence)]
    return float(np.mean(gaps))


__all__ = [
    "ABACRA", "RAW", "TABULAR_DEFENCES", "AttackerConfig", "CurveRow", "CurveTable", "EvaluationResult",
    "TabularConfig", "abacra", "attack_batch", "attacked_energy_gap", "build_simulators", "defend", "evaluate_under_attack",
    "run_repetition", "security_curve", "select_l1_strength",
]
