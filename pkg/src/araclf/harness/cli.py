"""Command-line entry point.

Subcommands: ``synth``, ``train``, ``attack``, ``classify``, ``evaluate``
and ``curve``. Every command writing a table also writes
``<out>.manifest.json`` with the resolved config, seed, library versions and
timings; the table itself carries no timing so reruns are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..abacra import ABC, ABCConfig, ABCFailure, abc_sample_origin, fit_feature_model, robust_classify
from ..classifiers import (MRModel, fit_map_multinomial, load_model, predict, predict_proba, save_model,
                           select_summary_features)
from ..core import BINARY, UNIT, DataError, LabeledDataset, zero_one_utility
from ..gradient_attacks import LINF, AttackHyperPrior, fgsm, pgd, sgld_attack
from ..origins import INVERSE_DISTANCE, UNIFORM, heuristic_origin
from ..robust_train import MODES, TrainingDiverged, train
from .config import SEED_ENV, ConfigError, RunConfig, load_config, with_seed
from .data import (CSVSchema, generate_synthetic, load_csv_dataset, load_idx_images, load_mnist_dir,
                   malware_like_spec, save_csv_dataset, save_idx_dataset)
from .experiments import build_simulators, evaluate_under_attack, security_curve, select_l1_strength

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# -- helpers ------------------------------------------------------------------


def _manifest(out, command, cfg: RunConfig, started, extra=None):
    info = {
        "command": command,
        "seed": cfg.seed,
        "config": _jsonable(asdict(cfg)),
        "versions": {"araclf": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "elapsed_seconds": round(time.time() - started, 3),
    }
    if extra:
        info.update(_jsonable(extra))
    Path(str(out) + ".manifest.json").write_text(json.dumps(info, indent=2, sort_keys=True, default=str) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _csv_schema(path, cfg: RunConfig, args) -> CSVSchema:
    ds = cfg.dataset
    l = args.bad if getattr(args, "bad", None) is not None else ds.l
    domain = ds.domain
    if getattr(args, "classes", None):
        classes = tuple(args.classes.split(","))
    elif ds.classes:
        classes = tuple(str(c) for c in ds.classes)
    else:
        # integer labels 0..k-1 in numeric order
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or ds.label_column not in header:
                raise DataError(f"{path}: missing header or label column")
            li = header.index(ds.label_column)
            labels = {row[li] for row in reader if row}
        try:
            classes = tuple(str(v) for v in sorted(labels, key=int))
        except ValueError:
            raise ConfigError("non-integer labels need an explicit class list (--classes or dataset.classes)") from None
    return CSVSchema(classes, l, ds.label_column, domain)


def _load_data(path, cfg: RunConfig, args) -> LabeledDataset:
    """CSV file, IDX directory (MNIST layout) or ``images,labels`` pair."""
    if path is None:
        return _dataset_from_config(cfg)
    p = Path(path)
    if p.is_dir():
        return load_mnist_dir(p, getattr(args, "split", None) or cfg.dataset.split)
    if "," in str(path):
        img, lab = str(path).split(",", 1)
        return load_idx_images(img, lab)
    if not p.exists():
        raise DataError(f"no such file: {p}")
    return load_csv_dataset(p, _csv_schema(p, cfg, args))


def _dataset_from_config(cfg: RunConfig) -> LabeledDataset:
    ds = cfg.dataset
    if ds.source == "synthetic":
        params = dict(ds.synthetic)
        gen_seed = params.pop("sample_seed", cfg.seed)
        try:
            spec = malware_like_spec(**params)
        except TypeError as exc:
            raise ConfigError(f"dataset.synthetic: {exc}") from None
        return generate_synthetic(spec, np.random.default_rng(gen_seed))
    if ds.source == "csv":
        if not ds.path:
            raise ConfigError("dataset.path is required for csv sources")
        p = Path(ds.path)
        if not p.exists():
            raise DataError(f"no such file: {p}")
        return load_csv_dataset(p, _csv_schema(p, cfg, argparse.Namespace()))
    if ds.source == "idx":
        if not (ds.images and ds.labels):
            raise ConfigError("dataset.images and dataset.labels are required for idx sources")
        return load_idx_images(ds.images, ds.labels)
    if ds.source == "mnist-dir":
        return load_mnist_dir(ds.root or "data/mnist", ds.split)
    raise ConfigError(f"unknown dataset source {ds.source!r}")


def _write_batch(out, data: LabeledDataset):
    out = str(out)
    if data.domain == UNIT and "," in out:
        img, lab = out.split(",", 1)
        save_idx_dataset(img, lab, data)
    elif data.domain == UNIT:
        np.savez(out, X=data.X, y=data.y)
    else:
        save_csv_dataset(out, data)


def _fmt(v):
    return f"{v:.6f}"


# -- subcommands --------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig):
    params = dict(cfg.dataset.synthetic)
    for name in ("d", "n", "k", "l"):
        if getattr(args, name) is not None:
            params[name] = getattr(args, name)
    params.pop("sample_seed", None)
    try:
        spec = malware_like_spec(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synthetic spec: {exc}") from None
    data = generate_synthetic(spec, np.random.default_rng(cfg.seed))
    save_csv_dataset(args.out, data)
    return {"rows": len(data), "d": data.d, "k": data.k, "l": data.l}


def cmd_train(args, cfg: RunConfig):
    data = _load_data(args.data, cfg, args)
    if args.mode == "mr":
        lam = cfg.tabular.l1_strength
        if lam is None:
            lam = select_l1_strength(data.X, data.y, data.k, cfg.tabular.l1_grid, cfg.tabular.cv_folds, cfg.seed)
        model = fit_map_multinomial(data.X, data.y, data.k, lam)
        save_model(args.out, model, {"mode": "mr", "l1_strength": lam})
        if args.log:
            Path(args.log).write_text("epoch,particle,clean,adversarial,pairing,energy,total\n")
        return {"mode": "mr", "l1_strength": lam}
    tcfg = replace(cfg.training, mode=args.mode)
    rows = []
    model = train(data.X, data.y, tcfg, k=data.k, log=lambda d, epoch, particle: rows.append((epoch, particle, d)))
    save_model(args.out, model, tcfg.to_dict())
    if args.log:
        with open(args.log, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "particle", "clean", "adversarial", "pairing", "energy", "total"])
            for epoch, particle, d in rows:
                w.writerow([epoch, particle] + [_fmt(d[c]) for c in ("clean", "adversarial", "pairing", "energy", "total")])
    return {"mode": args.mode}


def cmd_attack(args, cfg: RunConfig):
    model, _ = load_model(args.model)
    data = _load_data(args.data, cfg, args)
    rng = np.random.default_rng(cfg.seed)
    drawn = {}
    if args.attack == "discrete":
        if not isinstance(model, MRModel):
            raise ConfigError("the discrete attack needs a multinomial-regression model")
        evaluation, _ = build_simulators(model, data, cfg.tabular.attacker)
        X, flags = evaluation.attack(data.X, data.y, rng)
        drawn["attacked_rows"] = int(flags.sum())
    elif args.attack == "fgsm":
        X = fgsm(model, data.X, data.y, args.eps)
        drawn["eps"] = args.eps
    elif args.attack == "pgd":
        X = pgd(model, data.X, data.y, args.eps, steps=args.steps, norm=args.norm)
        drawn.update(eps=args.eps, steps=args.steps, norm=args.norm)
    elif args.attack == "sgld":
        prior = cfg.training.attack
        res = sgld_attack(model, data.X, data.y, prior, rng,
                          T=args.steps if args.steps_given else None, eps=args.eps if args.eps_given else None)
        # one perturbed batch: particle j attacks row i when i % K == j
        K = len(res.perturbed)
        X = np.stack(res.perturbed)[np.arange(len(data.X)) % K, np.arange(len(data.X))]
        drawn.update(eps=res.eps, T=res.T, prior=asdict(prior))
    else:
        raise ConfigError(f"unknown attack {args.attack!r}")
    out = LabeledDataset(X, data.y, data.k, data.l, data.domain)
    _write_batch(args.out, out)
    return {"attack": args.attack, "drawn": drawn}


def cmd_classify(args, cfg: RunConfig):
    model, _ = load_model(args.model)
    data = _load_data(args.data, cfg, args)
    U = zero_one_utility(model.k)
    tele = {"failures": 0}
    rows = []
    if args.strategy == ABC:
        if not isinstance(model, MRModel):
            raise ConfigError("abc classification needs a multinomial-regression model")
        if args.train_data is None:
            raise ConfigError("--train-data is needed to fit p(x) for abc")
        train_data = _load_data(args.train_data, cfg, args)
        fm = fit_feature_model(train_data.X, cfg.tabular.feature_model)
        _, modelled = build_simulators(model, train_data, cfg.tabular.attacker)
        summary = tuple(select_summary_features(model, min(args.summary_count, data.d)))
        abc = ABCConfig(summary, args.tol, args.n_samples, cfg.tabular.max_proposals)
    for i, x in enumerate(data.X):
        acc, props, fallback = "", "", 0
        if args.strategy == "raw":
            psi = U @ predict_proba(model, x[None, :])[0]
            label = int(np.argmax(psi))
        elif args.strategy in (UNIFORM, INVERSE_DISTANCE):
            dist = heuristic_origin(x, cfg.tabular.heuristic_radius, args.strategy)
            label, psi = robust_classify(dist.support, model, U, weights=dist.weights)
        else:
            rng = np.random.default_rng([cfg.seed, i])
            try:
                res = abc_sample_origin(x, fm, modelled, abc, rng)
                label, psi = robust_classify(res.samples, model, U)
                acc, props = _fmt(res.acceptance_rate), res.proposals
            except ABCFailure as exc:
                fallback = 1
                tele["failures"] += 1
                label = int(predict(model, x[None, :])[0])
                psi = np.full(model.k, np.nan)
                acc, props = _fmt(0.0), exc.proposals
        rows.append([i, label] + [_fmt(p) for p in psi] + [acc, props, fallback])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "decision"] + [f"psi_{c}" for c in range(model.k)] + ["acceptance_rate", "proposals", "fallback"])
        w.writerows(rows)
    return {"strategy": args.strategy, "telemetry": tele}


def cmd_evaluate(args, cfg: RunConfig):
    data = _load_data(args.data, cfg, args)
    if data.domain != BINARY:
        raise DataError("evaluate runs the binary-feature protocol; use curve for images")
    result = evaluate_under_attack(data, cfg.tabular)
    Path(args.out).write_text(result.to_csv())
    return {
        "abc_failures": sum(r.abc_failures for r in result.repetitions),
        "mean_acceptance": float(np.nanmean([r.mean_acceptance for r in result.repetitions])),
    }


def cmd_curve(args, cfg: RunConfig):
    if not args.model:
        raise ConfigError("give at least one --model name=path")
    defences = {}
    for spec in args.model:
        if "=" not in spec:
            raise ConfigError(f"--model expects name=path, got {spec!r}")
        name, path = spec.split("=", 1)
        defences[name], _ = load_model(path)
    data = _load_data(args.data, cfg, args)
    if args.limit:
        data = data.subset(np.arange(min(args.limit, len(data))))
    table = security_curve(defences, cfg.curve.attacks, cfg.curve.eps, data.X, data.y, cfg.curve.pgd_steps)
    Path(args.out).write_text(table.to_csv())
    return {"defences": sorted(defences)}


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "attack": cmd_attack,
    "classify": cmd_classify, "evaluate": cmd_evaluate, "curve": cmd_curve,
}


def build_parser():
    p = _Parser(prog="araclf", description="Adversarial-risk-analysis classifiers")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="YAML or JSON config file")
        sp.add_argument("--seed", type=int, help=f"seed (overrides config; ${SEED_ENV} overrides both)")
        if data:
            sp.add_argument("--data", help="CSV file, MNIST-style IDX directory, or 'images,labels' IDX pair")
            sp.add_argument("--classes", help="comma-separated label values, bad classes first")
            sp.add_argument("--bad", type=int, help="number of bad classes")
            sp.add_argument("--split", choices=("train", "test"), help="split to read from an IDX directory")
        sp.add_argument("--out", required=True)

    s = sub.add_parser("synth", help="generate a synthetic binary dataset")
    common(s, data=False)
    for name in ("d", "n", "k", "l"):
        s.add_argument(f"--{name}", type=int)

    s = sub.add_parser("train", help="fit a classifier")
    common(s)
    s.add_argument("--mode", default="mr", choices=("mr",) + MODES)
    s.add_argument("--log", help="CSV file for per-epoch loss breakdowns")

    s = sub.add_parser("attack", help="perturb a batch against a saved model")
    common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--attack", default="fgsm", choices=("fgsm", "pgd", "sgld", "discrete"))
    s.add_argument("--eps", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--norm", default=LINF, choices=("linf", "l1"))

    s = sub.add_parser("classify", help="robust decisions for observed instances")
    common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--strategy", default=ABC, choices=("raw", UNIFORM, INVERSE_DISTANCE, ABC))
    s.add_argument("--train-data", help="data used to fit p(x) for abc")
    s.add_argument("--tol", type=int)
    s.add_argument("--n-samples", type=int)
    s.add_argument("--summary-count", type=int)

    s = sub.add_parser("evaluate", help="repeated hold-out attack/defence evaluation")
    common(s)

    s = sub.add_parser("curve", help="security evaluation curve for saved image models")
    common(s)
    s.add_argument("--model", action="append", help="name=path, repeatable")
    s.add_argument("--limit", type=int, help="only use the first N rows")
    return p


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None and not os.environ.get(SEED_ENV):
        cfg = with_seed(cfg, args.seed)
    if args.command == "attack":
        args.eps_given = args.eps is not None
        args.steps_given = args.steps is not None
        if args.attack in ("fgsm", "pgd") and args.eps is None:
            raise ConfigError(f"--eps is required for {args.attack}")
        if args.steps is None:
            args.steps = 10
    if args.command == "classify":
        args.tol = cfg.tabular.tol if args.tol is None else args.tol
        args.n_samples = cfg.tabular.n_samples if args.n_samples is None else args.n_samples
        args.summary_count = cfg.tabular.summary_count if args.summary_count is None else args.summary_count
        if args.tol < 0 or args.n_samples < 1 or args.summary_count < 1:
            raise ConfigError("need tol >= 0, n-samples >= 1 and summary-count >= 1")
    return cfg


def main(argv=None) -> int:
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
        cfg = _resolve(args)
        extra = COMMANDS[args.command](args, cfg)
        _manifest(args.out, args.command, cfg, started, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining validation failures come from user-supplied values
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def run():
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    run()
