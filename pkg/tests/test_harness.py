import gzip
import json
import struct

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from araclf.classifiers import MRModel, accuracy, fit_map_multinomial, load_model
from araclf.core import BINARY, UNIT, DataError, LabeledDataset
from araclf.harness.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from araclf.harness.config import SEED_ENV, ConfigError, CurveConfig, load_config, parse_config
from araclf.harness.data import (CSVSchema, SyntheticTabularSpec, generate_synthetic, load_csv_dataset,
                                 load_idx_images, load_mnist_dir, malware_like_spec, repeated_holdout,
                                 save_csv_dataset, save_idx_dataset, write_idx_images)
from araclf.harness.experiments import (ABACRA, RAW, AttackerConfig, TabularConfig, attack_batch,
                                        evaluate_under_attack, security_curve)
from araclf.origins import INVERSE_DISTANCE, UNIFORM


# -- CSV -----------------------------------------------------------------------


def write(path, text):
    path.write_text(text)
    return path


def test_csv_examples(tmp_path):
    p = write(tmp_path / "a.csv", "f0,f1,label\n1,0,bad\n0,0,good\n1,1,good\n")
    data = load_csv_dataset(p, CSVSchema(("bad", "good"), 1))
    assert len(data) == 3 and data.d == 2
    assert data.y.tolist() == [0, 1, 1]

    p = write(tmp_path / "b.csv", "f0,f1,label\n1,0,bad\n0,2,good\n")
    with pytest.raises(DataError, match=":3:"):
        load_csv_dataset(p, CSVSchema(("bad", "good"), 1))
    with pytest.raises(DataError):
        load_csv_dataset(write(tmp_path / "c.csv", ""), CSVSchema(("bad", "good"), 1))


def test_csv_errors(tmp_path):
    schema = CSVSchema(("bad", "good"), 1)
    with pytest.raises(DataError, match="unknown label"):
        load_csv_dataset(write(tmp_path / "a.csv", "f0,label\n1,ugly\n"), schema)
    with pytest.raises(DataError, match=":2:"):
        load_csv_dataset(write(tmp_path / "b.csv", "f0,label\n1,bad,3\n"), schema)
    with pytest.raises(DataError, match="column"):
        load_csv_dataset(write(tmp_path / "c.csv", "f0,y\n1,bad\n"), schema)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 30))
def test_csv_round_trip(tmp_path_factory, seed, d, n):
    rng = np.random.default_rng(seed)
    data = LabeledDataset((rng.random((n, d)) < 0.5).astype(float), rng.integers(0, 3, n), 3, 1)
    p = tmp_path_factory.mktemp("csv") / "d.csv"
    save_csv_dataset(p, data, classes=["m", "b1", "b2"])
    back = load_csv_dataset(p, CSVSchema(("m", "b1", "b2"), 1))
    assert np.array_equal(back.X, data.X) and np.array_equal(back.y, data.y)


# -- IDX -----------------------------------------------------------------------


def test_idx_header_arithmetic(tmp_path):
    img = tmp_path / "img"
    pixels = np.zeros((2, 28, 28), dtype=np.uint8)
    pixels[1, 0, 0] = 255
    write_idx_images(img, tmp_path / "lab", pixels, [3, 9])
    raw = img.read_bytes()
    assert struct.unpack(">IIII", raw[:16]) == (0x00000803, 2, 28, 28) and len(raw) == 16 + 2 * 784
    data = load_idx_images(img, tmp_path / "lab")
    assert data.X.shape == (2, 784) and data.X[1, 0] == 1.0
    # labels are 0-based class indices: byte 9 is class index 9
    assert data.y.tolist() == [3, 9]


def test_idx_errors(tmp_path):
    write_idx_images(tmp_path / "img", tmp_path / "lab", np.zeros((2, 2, 2)), [0, 1])
    with pytest.raises(DataError, match="magic"):
        load_idx_images(tmp_path / "img", tmp_path / "img")
    write_idx_images(tmp_path / "img3", tmp_path / "lab3", np.zeros((3, 2, 2)), [0, 1, 2])
    with pytest.raises(DataError, match="count"):
        load_idx_images(tmp_path / "img3", tmp_path / "lab")
    blob = (tmp_path / "img").read_bytes()
    (tmp_path / "short").write_bytes(blob[:-1])
    with pytest.raises(DataError, match="truncated"):
        load_idx_images(tmp_path / "short", tmp_path / "lab")
    (tmp_path / "tiny").write_bytes(blob[:6])
    with pytest.raises(DataError, match="truncated"):
        load_idx_images(tmp_path / "tiny", tmp_path / "lab")


def test_idx_round_trip_and_mnist_layout(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, (5, 3, 3)).astype(np.uint8)
    data = LabeledDataset(pixels.reshape(5, -1) / 255.0, rng.integers(0, 10, 5), 10, 0, UNIT)
    save_idx_dataset(tmp_path / "train-images-idx3-ubyte.gz", tmp_path / "train-labels-idx1-ubyte.gz", data)
    with gzip.open(tmp_path / "train-images-idx3-ubyte.gz") as fh:
        assert struct.unpack(">I", fh.read(4))[0] == 0x00000803
    back = load_mnist_dir(tmp_path, "train")
    assert np.array_equal(back.X, data.X) and np.array_equal(back.y, data.y)
    with pytest.raises(DataError):
        load_mnist_dir(tmp_path, "test")


# -- synthetic data and splits ---------------------------------------------------


def test_synthetic_frequencies_and_seeding():
    spec = SyntheticTabularSpec(np.full((2, 5), 0.5), np.array([0.5, 0.5]), 1, 10_000)
    data = generate_synthetic(spec, np.random.default_rng(0))
    sigma = np.sqrt(0.25 / 10_000)
    assert np.all(np.abs(data.X.mean(axis=0) - 0.5) < 3 * sigma)
    again = generate_synthetic(spec, np.random.default_rng(0))
    assert np.array_equal(again.X, data.X) and np.array_equal(again.y, data.y)
    first = SyntheticTabularSpec(np.full((3, 2), 0.3), np.array([1.0, 0.0, 0.0]), 1, 50)
    assert np.all(generate_synthetic(first, np.random.default_rng(1)).y == 0)


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticTabularSpec(np.array([[0.0, 0.5]]), np.array([1.0]), 0, 5)
    with pytest.raises(ValueError):
        SyntheticTabularSpec(np.full((2, 2), 0.5), np.array([0.6, 0.6]), 1, 5)
    spec = malware_like_spec()
    assert (spec.k, spec.l, spec.d, spec.n) == (4, 3, 20, 4000)
    assert spec.priors[:3].sum() == pytest.approx(0.5)
    # the class of the key feature is the only one with the sharp mean
    assert np.argmax(spec.means[:, 3]) == 0 and spec.means[0, 3] == pytest.approx(0.97)


def test_malware_layout_shrinks_to_fit_small_d():
    small = malware_like_spec(d=8)  # 3 shared + one key per class
    assert small.d == 8
    assert np.array_equal(np.argmax(small.means[:, 3:7], axis=0), np.arange(4))
    with pytest.raises(ValueError):
        malware_like_spec(d=6)


def test_repeated_holdout():
    splits = repeated_holdout(10, 0.8, 3, seed=0)
    for tr, te in splits:
        assert len(tr) == 8 and len(te) == 2
        assert set(tr) | set(te) == set(range(10)) and not set(tr) & set(te)
    many = repeated_holdout(40, 0.8, 10, seed=1)
    assert len({tuple(te) for _, te in many}) == 10
    with pytest.raises(DataError):
        repeated_holdout(1, 0.8, 1)


# -- evaluation protocol -----------------------------------------------------------


def small_tabular(seed=0):
    spec = malware_like_spec(d=8, n=300, seed=3)
    return generate_synthetic(spec, np.random.default_rng(seed))


def test_identity_attacker_gives_clean_accuracy_for_every_defence():
    data = small_tabular()
    cfg = TabularConfig(repetitions=2, attacker=AttackerConfig(identity=True), summary_count=6)
    res = evaluate_under_attack(data, cfg)
    for r in res.repetitions:
        assert set(r.accuracies) == {RAW, UNIFORM, INVERSE_DISTANCE, ABACRA}
        assert all(a == r.clean for a in r.accuracies.values())


def test_no_bad_class_rows_means_clean_accuracy():
    data = small_tabular()
    good = data.subset(np.flatnonzero(data.y >= data.l))
    cfg = TabularConfig(repetitions=2, defences=(RAW,))
    res = evaluate_under_attack(good, cfg)
    assert res.mean(RAW) == res.mean("clean")


def test_attack_degrades_raw_accuracy():
    spec = malware_like_spec(n=1000)
    data = generate_synthetic(spec, np.random.default_rng(0))
    res = evaluate_under_attack(data, TabularConfig(repetitions=2, defences=(RAW,)))
    assert res.mean(RAW) < res.mean("clean")
    lines = res.to_csv().splitlines()
    assert lines[0] == "defence,mean_accuracy,std_accuracy,abc_failures" and len(lines) == 3


def test_security_curve_shape_and_zero_eps():
    rng = np.random.default_rng(0)
    X = rng.random((60, 4))
    y = (X[:, 0] > 0.5).astype(int)
    m = fit_map_multinomial(X, y, 2, 0.0)
    table = security_curve({"std": m}, ["fgsm"], [0.0, 0.1, 0.3], X, y)
    assert len(table.rows) == 3
    assert table.get("std", "fgsm", 0.0).mean_accuracy == accuracy(m, X, y)
    assert table.get("std", "fgsm", 0.3).mean_accuracy <= table.get("std", "fgsm", 0.0).mean_accuracy
    with pytest.raises(ValueError):
        security_curve({"std": m}, ["fgsm"], [0.1], X, y)
    with pytest.raises(ValueError):
        attack_batch("cw", m, X, y, 0.1)


# -- configuration ---------------------------------------------------------------


def test_config_parsing(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({
        "seed": 4,
        "attacker": {"utility": [0.6, 0.7, 0.8], "m_samples": None},
        "defender": {"tol": 2},
        "protocol": {"repetitions": 3},
        "training": {"mode": "ARA", "weights": {"pairing": 0.1}},
        "curve": {"eps": [0, 0.25]},
    }))
    cfg = load_config(p, env={})
    assert cfg.seed == 4 and cfg.tabular.seed == 4 and cfg.training.seed == 4
    assert cfg.tabular.attacker.utility == (0.6, 0.7, 0.8) and cfg.tabular.attacker.m_samples is None
    assert cfg.tabular.tol == 2 and cfg.tabular.repetitions == 3
    assert cfg.training.weights.pairing == 0.1 and cfg.curve.eps == (0.0, 0.25)
    assert load_config(p, env={SEED_ENV: "11"}).training.seed == 11


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"seed": -1},
    {"attacker": {"utility": 1.5}},
    {"attacker": {"radius": 1, "colour": "red"}},
    {"protocol": {"split": 1.0}},
    {"training": {"mode": "magic"}},
    {"curve": {"eps": [0.1, 0.2]}},
])
def test_config_errors(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1,\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(None, env={SEED_ENV: "abc"})
    with pytest.raises(ConfigError):
        CurveConfig(eps=(0.0, 0.3, 0.2))


# -- CLI -------------------------------------------------------------------------


@pytest.fixture
def tabular_files(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "seed": 1,
        "dataset": {"source": "synthetic", "l": 3, "synthetic": {"d": 8, "n": 240}},
        "defender": {"summary_count": 6, "tol": 1, "n_samples": 3},
        "protocol": {"repetitions": 2},
    }))
    data = tmp_path / "data.csv"
    assert main(["synth", "--config", str(cfg), "--d", "8", "--n", "240", "--out", str(data)]) == EXIT_OK
    return tmp_path, cfg, data


def test_cli_tabular_pipeline_is_deterministic(tabular_files, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    tmp, cfg, data = tabular_files
    common = ["--config", str(cfg), "--bad", "3"]
    assert main(["train", *common, "--data", str(data), "--out", str(tmp / "m.npz")]) == EXIT_OK
    model, meta = load_model(tmp / "m.npz")
    assert isinstance(model, MRModel)
    manifest = json.loads((tmp / "m.npz.manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seed"] == 1

    outputs = []
    for run in range(2):
        att = tmp / f"att{run}.csv"
        cls = tmp / f"cls{run}.csv"
        ev = tmp / f"ev{run}.csv"
        assert main(["attack", *common, "--data", str(data), "--model", str(tmp / "m.npz"),
                     "--attack", "discrete", "--out", str(att)]) == EXIT_OK
        assert main(["classify", *common, "--data", str(att), "--model", str(tmp / "m.npz"),
                     "--train-data", str(data), "--out", str(cls)]) == EXIT_OK
        assert main(["evaluate", *common, "--data", str(data), "--out", str(ev)]) == EXIT_OK
        outputs.append([p.read_bytes() for p in (att, cls, ev)])
    assert outputs[0] == outputs[1]
    header = outputs[0][1].decode().splitlines()[0]
    assert header == "id,decision,psi_0,psi_1,psi_2,psi_3,acceptance_rate,proposals,fallback"

    # the seed override changes the attacked batch's random draws but keeps the format
    monkeypatch.setenv(SEED_ENV, "5")
    assert main(["evaluate", *common, "--data", str(data), "--out", str(tmp / "ev5.csv")]) == EXIT_OK
    assert json.loads((tmp / "ev5.csv.manifest.json").read_text())["seed"] == 5


def test_cli_exit_codes(tabular_files, tmp_path):
    tmp, cfg, data = tabular_files
    assert main(["train", "--data", str(tmp / "nope.csv"), "--bad", "3", "--out", str(tmp / "x")]) == EXIT_DATA
    bad = tmp / "bad.yaml"
    bad.write_text("unknown_key: 1\n")
    assert main(["train", "--config", str(bad), "--data", str(data), "--out", str(tmp / "x")]) == EXIT_CONFIG
    assert main(["train", "--mode", "wrong", "--out", str(tmp / "x")]) == EXIT_CONFIG
    assert main(["attack", "--data", str(data), "--model", str(tmp / "nope.npz"), "--attack", "fgsm",
                 "--out", str(tmp / "x")]) == EXIT_CONFIG
    nonbinary = tmp / "nb.csv"
    nonbinary.write_text("f0,label\n2,0\n")
    assert main(["train", "--data", str(nonbinary), "--out", str(tmp / "x")]) == EXIT_DATA

    # a diverging image run reports a numerical failure
    rng = np.random.default_rng(0)
    write_idx_images(tmp / "i", tmp / "l", rng.integers(0, 256, (20, 2, 2)), rng.integers(0, 2, 20))
    huge = tmp / "huge.yaml"
    huge.write_text(yaml.safe_dump({"training": {"epochs": 3, "hidden": 4, "lr": 1e308, "momentum": 0.0}}))
    with np.errstate(all="ignore"):
        code = main(["train", "--config", str(huge), "--mode", "standard", "--data", f"{tmp / 'i'},{tmp / 'l'}",
                     "--out", str(tmp / "h.npz")])
    assert code == EXIT_NUMERIC


def test_cli_image_pipeline(tmp_path):
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 40)
    pixels = np.where(y[:, None, None] == 1, 200, 40) + rng.integers(0, 40, (40, 3, 3))
    write_idx_images(tmp_path / "i", tmp_path / "l", pixels, y)
    pair = f"{tmp_path / 'i'},{tmp_path / 'l'}"
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({
        "training": {"epochs": 3, "hidden": 4, "lr": 0.1, "batch_size": 8, "particles": 2},
        "curve": {"eps": [0, 0.1], "attacks": ["fgsm"]},
    }))
    for mode in ("standard", "ARA"):
        assert main(["train", "--config", str(cfg), "--mode", mode, "--data", pair,
                     "--out", str(tmp_path / f"{mode}.npz"), "--log", str(tmp_path / f"{mode}.log.csv")]) == EXIT_OK
    log = (tmp_path / "ARA.log.csv").read_text().splitlines()
    assert log[0] == "epoch,particle,clean,adversarial,pairing,energy,total" and len(log) == 1 + 3 * 2

    tables = []
    for run in range(2):
        out = tmp_path / f"curve{run}.csv"
        assert main(["curve", "--config", str(cfg), "--data", pair, "--model", f"std={tmp_path / 'standard.npz'}",
                     "--model", f"ara={tmp_path / 'ARA.npz'}", "--out", str(out)]) == EXIT_OK
        tables.append(out.read_bytes())
    assert tables[0] == tables[1]
    assert len(tables[0].decode().splitlines()) == 1 + 2 * 2

    out = tmp_path / "adv.npz"
    assert main(["attack", "--config", str(cfg), "--data", pair, "--model", str(tmp_path / "ARA.npz"),
                 "--attack", "sgld", "--out", str(out)]) == EXIT_OK
    Xa = np.load(out)["X"]
    assert Xa.shape == (40, 9) and Xa.min() >= 0 and Xa.max() <= 1
    drawn = json.loads((tmp_path / "adv.npz.manifest.json").read_text())["drawn"]
    # one hyperparameter draw shared by both particles
    assert len(drawn["eps"]) == 2 and len(set(drawn["eps"])) == 1 and len(set(drawn["T"])) == 1
