"""Image-track experiment: standard, AT and ARA networks on the MNIST subset.

Trains the three preset configurations, writes the FGSM/PGD security curves
and the attacked energy gap of each defence. Run ``scripts/fetch_mnist.py``
first.

    python scripts/run_mnist_experiment.py --out results/mnist
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from araclf.classifiers import save_model  # noqa: E402
from araclf.harness.data import load_mnist_dir  # noqa: E402
from araclf.harness.experiments import attacked_energy_gap, security_curve  # noqa: E402
from araclf.harness.presets import ENERGY_ATTACK, IMAGE_EPS_GRID, mnist_presets  # noqa: E402
from araclf.robust_train import train  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", type=Path, default=ROOT / "data" / "mnist")
    p.add_argument("--out", type=Path, default=ROOT / "results" / "mnist")
    p.add_argument("--epochs-scale", type=float, default=1.0, help="shrink every run, e.g. 0.2 for a smoke test")
    p.add_argument("--attacks", default="fgsm,pgd")
    args = p.parse_args(argv)

    tr, te = load_mnist_dir(args.data, "train"), load_mnist_dir(args.data, "test")
    args.out.mkdir(parents=True, exist_ok=True)
    models = {}
    for name, cfg in mnist_presets(args.epochs_scale).items():
        t0 = time.time()
        models[name] = train(tr.X, tr.y, cfg, k=10)
        save_model(args.out / f"{name}.npz", models[name], cfg.to_dict())
        print(f"trained {name} ({cfg.mode}, {cfg.epochs} epochs) in {time.time() - t0:.0f}s", flush=True)

    curve = security_curve(models, args.attacks.split(","), IMAGE_EPS_GRID, te.X, te.y)
    (args.out / "curve.csv").write_text(curve.to_csv())
    for attack in args.attacks.split(","):
        print(f"{attack}: eps " + " ".join(f"{e:>6g}" for e in IMAGE_EPS_GRID))
        for name in models:
            accs = " ".join(f"{curve.get(name, attack, e).mean_accuracy:6.3f}" for e in IMAGE_EPS_GRID)
            print(f"  {name:<9} {accs}")

    gaps = {name: attacked_energy_gap(m, te.X, te.y, **ENERGY_ATTACK) for name, m in models.items()}
    (args.out / "energy_gap.json").write_text(json.dumps(gaps, indent=2))
    print("energy gap under PGD eps=%g: " % ENERGY_ATTACK["eps"]
          + ", ".join(f"{n} {g:+.3f}" for n, g in gaps.items()))


if __name__ == "__main__":
    main()
