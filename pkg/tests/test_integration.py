"""Cross-module integration runs on small hand-built datasets."""

import csv

import numpy as np
import pytest

import voxtrain as vt
from voxtrain.config import base_config, merge
from voxtrain.npyio import write_volume
from voxtrain.training import run_standard


@pytest.fixture(scope="module")
def multimodal_root(tmp_path_factory):
    """CT + organ-mask dataset: the mask channel goes through value mapping."""
    root = tmp_path_factory.mktemp("mm")
    rng = np.random.default_rng(5)
    rows = []
    for i in range(14):
        pid = f"M{i:03d}"
        label = i % 2
        ct = rng.normal(0, 30, (10, 10, 10))
        mask = np.zeros((10, 10, 10), dtype=np.int16)
        mask[2:5, 2:5, 2:5] = 1  # organ A
        if label:
            ct[3:7, 3:7, 3:7] += 250.0
            mask[3:7, 3:7, 3:7] = 3  # lesion class
        pdir = root / "data" / pid
        pdir.mkdir(parents=True)
        write_volume(pdir / "CT.npy", np.round(ct).astype(np.int16))
        write_volume(pdir / "SEG.npy", mask)
        rows.append({"PatientID": pid, "Split": "test" if i >= 10 else "train_val",
                     "target": label, "age": "" if i == 3 else 50 + i})
    with open(root / "clin.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["PatientID", "Split", "target", "age"])
        writer.writeheader()
        writer.writerows(rows)
    return root


def multimodal_cfg(root, out, **training):
    tr = {"folds": 2, "epochs": 2, "patience": 2, "seed": 0}
    tr.update(training)
    return merge(base_config(), {
        "experiment": {"name": "mm", "output_root": str(out)},
        "data": {
            "csv_path": str(root / "clin.csv"),
            "data_root": str(root / "data"),
            "image_types": ["CT", "SEG"],
            "tabular_features": ["age"],
            "labels": [{"name": "target", "kind": "binary"}],
            "stratify_on": ["target"],
        },
        "preprocessing": {
            "channels": {"CT": {"a_min": -200.0, "a_max": 400.0,
                                "b_min": 0.0, "b_max": 1.0}},
            "value_maps": {"SEG": {1: 0.5, 3: 1.0}},
            "crop": [8, 8, 8],
        },
        "model": {"architecture": "cnn", "cnn": {"widths": [4, 8], "kernel_size": 3}},
        "training": tr,
    })


def test_multimodal_value_map_pipeline(multimodal_root, tmp_path):
    cfg = multimodal_cfg(multimodal_root, tmp_path)
    m = vt.load_manifest(cfg["data.csv_path"], cfg["data.data_root"], cfg)
    assert m.volume_shape == (10, 10, 10)
    # channel stacking: CT first, mapped segmentation second, cropped to 8^3
    from voxtrain.dataset import CacheStrategy, VolumeDataset
    from voxtrain.transforms import plan_from_config
    ds = VolumeDataset(m, plan_from_config(cfg), CacheStrategy("standard"), "eval")
    s = ds.get_patient("M001")
    assert s.image.shape == (2, 8, 8, 8)
    assert set(np.unique(s.image[1])) <= {0.0, 0.5, 1.0}  # mapped mask values only
    assert 0.0 <= s.image[0].min() and s.image[0].max() <= 1.0

    results = run_standard(cfg)
    assert len(results) == 2
    # imputation recorded for the blanked age cell, from fold-train statistics
    import json
    impute = json.loads((results[0].run_dir / "imputation.json").read_text())
    assert "age" in impute and np.isfinite(impute["age"])

    _, m_test = vt.split_train_test(m)
    out = vt.evaluate_test(results[0].run_dir.parent, m_test, cfg)
    assert "target" in out["ensemble"]


def test_training_with_mixup_and_augmentation(multimodal_root, tmp_path):
    cfg = merge(multimodal_cfg(multimodal_root, tmp_path, epochs=2, folds_to_run=[0]),
                {"augmentation": {"mixup_alpha": 0.4, "flip_x": True,
                                  "rotate": {"enabled": True, "max_angle_deg": 10.0},
                                  "gaussian_noise_sigma": 0.02}})
    result = run_standard(cfg)[0]
    assert (result.run_dir / "DONE").is_file()


def test_training_with_smartcache_strategy(multimodal_root, tmp_path):
    cfg = merge(multimodal_cfg(multimodal_root, tmp_path, epochs=2, folds_to_run=[0]),
                {"dataset": {"strategy": "smartcache", "cache_fraction": 0.5}})
    result = run_standard(cfg)[0]
    assert (result.run_dir / "DONE").is_file()


def test_training_with_persistent_strategy(multimodal_root, tmp_path):
    cfg = merge(multimodal_cfg(multimodal_root, tmp_path, epochs=1, folds_to_run=[0]),
                {"dataset": {"strategy": "persistent",
                             "cache_dir": str(tmp_path / "pcache")}})
    result = run_standard(cfg)[0]
    assert (result.run_dir / "DONE").is_file()
    assert any((tmp_path / "pcache").rglob("*.bin"))


def test_event_only_training(multimodal_root, tmp_path):
    """Single event endpoint: risk head + partial-likelihood loss end to end."""
    rng = np.random.default_rng(0)
    csv_in = multimodal_root / "clin.csv"
    csv_out = multimodal_root / "clin_event.csv"
    with open(csv_in, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        has_lesion = row.pop("target") == "1"
        row["fail_event"] = 1 if has_lesion else 0
        row["fail_days"] = round(float(30 if has_lesion else 80) * rng.uniform(0.8, 1.2), 1)
    with open(csv_out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    cfg = merge(multimodal_cfg(multimodal_root, tmp_path, folds_to_run=[0]), {
        "data": {"csv_path": str(csv_out),
                 "labels": [{"name": "fail", "kind": "event", "unit": "days"}],
                 "stratify_on": ["fail"]},
    })
    result = run_standard(cfg)[0]
    report = result.val_report["fail"]
    assert "c_index" in report
    _, m_test = vt.split_train_test(
        vt.load_manifest(cfg["data.csv_path"], cfg["data.data_root"], cfg))
    out = vt.evaluate_test(result.run_dir.parent, m_test, cfg)
    assert "c_index" in out["ensemble"]["fail"]
