import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from teachtrace.cli import main
from teachtrace.harness import (
    DatasetFormatError,
    ExperimentConfig,
    SyntheticSpec,
    apply_preset,
    build_dataset,
    config_from_mapping,
    emit_reports,
    generate_synthetic,
    load_csv,
    load_metrics_csv,
    run_seed,
    save_csv,
    split_dataset,
    summarize,
    write_metrics_csv,
)
from teachtrace.numerics import make_rng
from teachtrace.students import LabeledDataset

SMALL_SPEC = SyntheticSpec(samples_per_class=(120, 40))


def small_config(**overrides) -> ExperimentConfig:
    base = dict(teacher="random", seeds=(7,), episodes=2, steps=3, batch_size=8,
                synthetic=SMALL_SPEC)
    base.update(overrides)
    return ExperimentConfig(**base)


# ----------------------------------------------------------------- synthetic


def test_synthetic_counts_and_tags():
    data = generate_synthetic(SMALL_SPEC, make_rng(0, 0, 20))
    assert len(data) == 160
    assert np.sum(data.labels == 0) == 120
    assert np.sum(data.labels == 1) == 40
    assert data.concepts is not None
    assert set(np.unique(data.concepts)) <= set(range(4))


def test_synthetic_respects_affinity_support():
    spec = replace(SMALL_SPEC, affinity=((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 1.0)))
    data = generate_synthetic(spec, make_rng(1, 0, 20))
    assert set(np.unique(data.concepts[data.labels == 0])) == {0}
    assert set(np.unique(data.concepts[data.labels == 1])) == {3}


def test_synthetic_zero_spread_collapses_to_centers():
    spec = replace(SMALL_SPEC, spreads=(0.0, 0.0, 0.0, 0.0),
                   affinity=((1.0, 0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0)))
    data = generate_synthetic(spec, make_rng(2, 0, 20))
    for y in (0, 1):
        rows = data.features[data.labels == y]
        assert np.all(rows == rows[0])


def test_synthetic_explicit_centers():
    centers = np.zeros((2, 4, 2))
    centers[1, :, :] = 5.0
    spec = replace(SMALL_SPEC, spreads=(0.0,) * 4, centers=tuple(map(tuple, centers.reshape(8, 2).tolist())))
    with pytest.raises(ValueError):
        generate_synthetic(spec, make_rng(0, 0, 20))  # wrong shape
    spec = replace(SMALL_SPEC, spreads=(0.0,) * 4, centers=centers)
    data = generate_synthetic(spec, make_rng(0, 0, 20))
    assert np.all(data.features[data.labels == 1] == 5.0)


def test_synthetic_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(spreads=(0.5, 0.5, 0.5, -0.1))
    with pytest.raises(ValueError):
        SyntheticSpec(samples_per_class=(10,))
    with pytest.raises(ValueError):
        SyntheticSpec(affinity=((0.0, 0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0)))
    with pytest.raises(ValueError):
        SyntheticSpec(classes=1, samples_per_class=(10,))


def test_synthetic_same_stream_same_data():
    a = generate_synthetic(SMALL_SPEC, make_rng(5, 0, 20))
    b = generate_synthetic(SMALL_SPEC, make_rng(5, 0, 20))
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


# -------------------------------------------------------------------- csv io


def test_csv_round_trip(tmp_path):
    data = generate_synthetic(SMALL_SPEC, make_rng(3, 0, 20))
    path = tmp_path / "data.csv"
    save_csv(data, path)
    back = load_csv(path)
    assert np.array_equal(back.features, data.features)
    assert np.array_equal(back.labels, data.labels)
    assert back.num_classes == data.num_classes
    assert back.concepts is None  # tags are generation metadata, not saved


@pytest.mark.parametrize(
    "text,code",
    [
        ("", "empty_file"),
        ("x0,x1,label\n", "empty_file"),
        ("x0,x1\n1.0,2.0\n", "missing_label"),
        ("x0,label\n1.0,zero\n", "non_integer_label"),
        ("x0,label\n1.0,1.5\n", "non_integer_label"),
        ("x0,label\nabc,0\n", "non_numeric_feature"),
        ("x0,label\n1.0,-1\n", "negative_label"),
        ("x0,x1,label\n1.0,0\n", "ragged_row"),
    ],
)
def test_csv_error_codes(tmp_path, text, code):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DatasetFormatError) as err:
        load_csv(path)
    assert err.value.code == code


# ----------------------------------------------------------------- splitting


def _split_parts(splits):
    return {
        "train": set(splits.train.features[:, 0].tolist()),
        "valid": set(splits.valid.features[:, 0].tolist()),
        "reward": set(splits.reward_slice.features[:, 0].tolist()),
        "test": set(splits.test.features[:, 0].tolist()),
    }


def _tagged_dataset(n_per_class=(50, 30)):
    # feature 0 is a unique id so subsets can be compared by membership
    n = sum(n_per_class)
    feats = np.stack([np.arange(n, dtype=float), np.zeros(n)], axis=1)
    labels = np.concatenate([np.full(k, y) for y, k in enumerate(n_per_class)])
    return LabeledDataset(feats, labels, len(n_per_class))


def test_split_sizes_and_stratification():
    data = _tagged_dataset((500, 500))
    splits = split_dataset(data, make_rng(0, 0, 21))
    assert len(splits.test) == 300  # 30% of each class
    assert len(splits.valid) == 140  # 20% of the 700 remaining
    assert len(splits.train) == 560
    for part in (splits.train, splits.valid, splits.test):
        assert set(np.unique(part.labels)) == {0, 1}
    parts = _split_parts(splits)
    assert parts["reward"] <= parts["valid"]
    assert not parts["train"] & parts["valid"]
    assert not parts["train"] & parts["test"]
    assert not parts["valid"] & parts["test"]
    assert parts["train"] | parts["valid"] | parts["test"] == set(range(1000))


def test_split_reward_slice_small_but_present():
    data = _tagged_dataset((500, 500))
    splits = split_dataset(data, make_rng(0, 0, 21))
    # 5% of the 140-sample validation set is 7, split evenly as 4 + 4
    assert len(splits.reward_slice) == 8
    assert set(np.unique(splits.reward_slice.labels)) == {0, 1}


def test_split_reward_slice_is_class_balanced():
    data = _tagged_dataset((800, 200))
    splits = split_dataset(data, make_rng(0, 0, 21))
    labels = splits.reward_slice.labels
    # equal per-class counts even though the classes are 4:1 imbalanced
    assert int(np.sum(labels == 0)) == int(np.sum(labels == 1))
    n_valid = len(splits.valid)
    per_class = max(1, round(0.05 * n_valid / 2))
    assert len(splits.reward_slice) == 2 * per_class


def test_split_tiny_class_clamps():
    data = _tagged_dataset((40, 4))
    splits = split_dataset(data, make_rng(1, 0, 21))
    # the 4-sample class keeps 1 test, 1 valid, 2 train
    assert np.sum(splits.test.labels == 1) == 1
    assert np.sum(splits.valid.labels == 1) == 1
    assert np.sum(splits.train.labels == 1) == 2


def test_split_rejects_sub4_class():
    data = _tagged_dataset((40, 3))
    with pytest.raises(ValueError, match="class 1"):
        split_dataset(data, make_rng(0, 0, 21))


def test_split_folds_rotate_validation():
    data = _tagged_dataset((60, 60))
    valid_sets = []
    for fold in range(3):
        splits = split_dataset(data, make_rng(2, 0, 21), fold=fold, folds=3)
        parts = _split_parts(splits)
        valid_sets.append(parts["valid"])
        assert not parts["train"] & parts["valid"]
    assert not valid_sets[0] & valid_sets[1]
    assert not valid_sets[0] & valid_sets[2]
    # same shuffle each call, so the three folds tile the non-test remainder
    rest = valid_sets[0] | valid_sets[1] | valid_sets[2]
    test_part = _split_parts(split_dataset(data, make_rng(2, 0, 21), fold=0, folds=3))["test"]
    assert rest | test_part == set(range(120))
    with pytest.raises(ValueError):
        split_dataset(data, make_rng(0, 0, 21), fold=3, folds=3)


def test_split_deterministic():
    data = _tagged_dataset((50, 30))
    a = split_dataset(data, make_rng(9, 0, 21))
    b = split_dataset(data, make_rng(9, 0, 21))
    assert np.array_equal(a.train.features, b.train.features)
    assert np.array_equal(a.test.features, b.test.features)


# -------------------------------------------------------------------- config


def test_config_from_mapping_sections():
    cfg = config_from_mapping({
        "teacher": "kadt_kt",
        "seeds": [1, 2],
        "dataset": {"samples_per_class": [80, 20], "spreads": [0.1, 0.1, 0.1, 0.1]},
        "splits": {"folds": 2},
        "agent": {"gamma": 0.9, "hidden": [16, 16]},
        "kt": {"key_dim": 10, "lr": 0.02},
        "student": {"lr": 0.1},
        "spl": {"threshold": 0.7},
    })
    assert cfg.teacher == "kadt_kt"
    assert cfg.seeds == (1, 2)
    assert cfg.synthetic.samples_per_class == (80, 20)
    assert cfg.folds == 2
    assert cfg.gamma == 0.9
    assert cfg.hidden == (16, 16)
    assert cfg.key_dim == 10 and cfg.kt_lr == 0.02
    assert cfg.student_lr == 0.1
    assert cfg.spl_threshold == 0.7


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        config_from_mapping({"teachers": "kadt"})
    with pytest.raises(ValueError, match=r"\[agent\]"):
        config_from_mapping({"agent": {"gama": 0.9}})
    with pytest.raises(ValueError, match="table"):
        config_from_mapping({"kt": 5})


def test_config_validation():
    with pytest.raises(ValueError, match="teacher"):
        ExperimentConfig(teacher="dqn")
    with pytest.raises(ValueError, match="student"):
        ExperimentConfig(student_phase2="tree")
    with pytest.raises(ValueError, match="csv_path"):
        ExperimentConfig(dataset_kind="csv")
    with pytest.raises(ValueError, match="seed"):
        ExperimentConfig(seeds=())


def test_presets():
    cfg = ExperimentConfig()
    desk = apply_preset(cfg, "desk")
    paper = apply_preset(cfg, "paper")
    assert (desk.episodes, desk.steps) == (50, 20)
    assert (paper.episodes, paper.steps) == (350, 50)
    with pytest.raises(ValueError):
        apply_preset(cfg, "huge")


def test_kt_concepts_defaults_to_dataset():
    assert ExperimentConfig().concept_slots == 4
    assert ExperimentConfig(kt_concepts=6).concept_slots == 6
    spec = replace(SMALL_SPEC, concepts=3, spreads=(0.5,) * 3,
                   affinity=((1.0, 0.0, 0.0), (0.0, 0.0, 1.0)))
    assert ExperimentConfig(synthetic=spec).concept_slots == 3


def test_build_dataset_csv_kind(tmp_path):
    data = generate_synthetic(SMALL_SPEC, make_rng(0, 0, 20))
    path = tmp_path / "d.csv"
    save_csv(data, path)
    cfg = small_config(dataset_kind="csv", csv_path=str(path))
    loaded = build_dataset(cfg, seed=1)
    assert np.array_equal(loaded.labels, data.labels)


# ------------------------------------------------------------------- reports


def test_run_seed_deterministic_bytes(tmp_path):
    cfg = small_config(teacher="kadt", seeds=(3,))
    paths = []
    for name in ("a.csv", "b.csv"):
        logs = run_seed(cfg, 3)
        path = tmp_path / name
        write_metrics_csv(path, logs)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_metrics_csv_round_trip(tmp_path):
    cfg = small_config()
    logs = run_seed(cfg, 7)
    path = tmp_path / "metrics_7.csv"
    write_metrics_csv(path, logs)
    back = load_metrics_csv(path)
    rewritten = tmp_path / "again.csv"
    write_metrics_csv(rewritten, back)
    assert path.read_bytes() == rewritten.read_bytes()
    assert back[0].seed == 7 and back[0].teacher == "random"


def test_summarize_matches_brute_force():
    cfg = small_config(seeds=(1, 2))
    all_logs = [log for seed in cfg.seeds for log in run_seed(cfg, seed)]
    summary = summarize(all_logs)["teachers"]["random"]["phase2_test_accuracy"]
    by_seed = {}
    for log in all_logs:
        accs = [e.test_accuracy for e in log.episodes if e.phase == 2 and e.test_accuracy is not None]
        by_seed[log.seed] = sum(accs) / len(accs)
    values = [by_seed[s] for s in sorted(by_seed)]
    mean = sum(values) / len(values)
    assert summary["mean"] == pytest.approx(mean, abs=1e-12)
    assert summary["std"] == pytest.approx(float(np.std(values)), abs=1e-12)
    assert summary["per_seed"] == {str(s): pytest.approx(v) for s, v in by_seed.items()}


def test_emit_reports_files(tmp_path):
    cfg = small_config(out_dir=str(tmp_path))
    logs = run_seed(cfg, 7)
    emit_reports(tmp_path, logs)
    assert (tmp_path / "metrics_7.csv").exists()
    assert (tmp_path / "heatmap_7.csv").exists()
    assert (tmp_path / "curves.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert "random" in summary["teachers"]
    heat = (tmp_path / "heatmap_7.csv").read_text().splitlines()
    assert heat[0].startswith("concept,episode_")
    assert len(heat) == 1 + 4  # header + one row per concept


def test_curves_csv_orders_episodes(tmp_path):
    cfg = small_config(teacher="kadt", seeds=(1,))
    logs = run_seed(cfg, 1)
    emit_reports(tmp_path, logs)
    rows = (tmp_path / "curves.csv").read_text().splitlines()[1:]
    keys = [tuple(r.split(",")[:3]) for r in rows]
    assert keys == sorted(keys)
    phases = {k[1] for k in keys}
    assert phases == {"1", "2"}


def test_folds_recorded_separately(tmp_path):
    cfg = small_config(folds=2, synthetic=replace(SMALL_SPEC, samples_per_class=(120, 60)))
    logs = run_seed(cfg, 4)
    assert [log.fold for log in logs] == [0, 1]
    write_metrics_csv(tmp_path / "m.csv", logs)
    back = load_metrics_csv(tmp_path / "m.csv")
    assert [log.fold for log in back] == [0, 1]


# ------------------------------------------------------------------------ cli


def test_cli_train_and_report(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--teacher", "random", "--seed", "7",
               "--episodes", "2", "--steps", "3", "--out", str(out)])
    assert rc == 0
    assert (out / "metrics_7.csv").exists()
    before = (out / "summary.json").read_bytes()
    rc = main(["report", str(out)])
    assert rc == 0
    assert (out / "summary.json").read_bytes() == before
    capsys.readouterr()


def test_cli_gradcheck(capsys):
    rc = main(["gradcheck", "--seed", "0"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count(" ok ") == 6


def test_cli_report_empty_dir(tmp_path, capsys):
    rc = main(["report", str(tmp_path)])
    assert rc == 1
    capsys.readouterr()
