import numpy as np
import pytest

import voxtrain as vt
from voxtrain.config import base_config, merge
from voxtrain.errors import (
    BadSplitValue,
    DataError,
    DuplicatePatientID,
    EmptyTrainSet,
    MissingColumn,
    MissingVolume,
    NonNumericFeature,
    ShapeMismatch,
    TooFewPatients,
    UnknownStratVar,
)
from voxtrain.manifest import impute_values, stratified_kfold, validate_dataset
from voxtrain.npyio import write_volume


def make_dataset(root, rows, header, modalities=("CT",), shape=(4, 4, 4), shapes=None):
    csv_path = root / "clin.csv"
    lines = [",".join(header)] + [",".join(str(c) for c in row) for row in rows]
    csv_path.write_text("\n".join(lines) + "\n")
    data_root = root / "data"
    for row in rows:
        pid = str(row[0])
        (data_root / pid).mkdir(parents=True, exist_ok=True)
        for m in modalities:
            s = (shapes or {}).get(pid, shape)
            write_volume(data_root / pid / f"{m}.npy", np.zeros(s, dtype=np.float32))
    return csv_path, data_root


def sex_config(**data_override):
    data = {"image_types": ["CT"], "tabular_features": ["age"],
            "labels": [{"name": "sex", "kind": "binary"}]}
    data.update(data_override)
    return merge(base_config(), {"data": data})


HEADER = ["PatientID", "Split", "sex", "age"]


def test_load_basic_binary_labels(tmp_path):
    cfg = sex_config()
    csv_path, data_root = make_dataset(tmp_path, [
        ["P001", "train_val", 1, 63],
        ["P002", "test", 0, 70],
    ], HEADER)
    m = vt.load_manifest(csv_path, data_root, cfg)
    assert m.ids == ("P001", "P002")
    assert m.volume_shape == (4, 4, 4)
    rec = m.record("P001")
    assert rec.split == "train_val"
    assert rec.labels["sex"].value == 1.0 and rec.labels["sex"].observed
    assert rec.tabular == (63.0,)


def test_missing_indicator_masks_label(tmp_path):
    cfg = sex_config()
    csv_path, data_root = make_dataset(tmp_path, [
        ["P001", "train_val", -1, 63],
        ["P002", "train_val", "-1.0", 70],
    ], HEADER)
    m = vt.load_manifest(csv_path, data_root, cfg)
    assert not m.record("P001").labels["sex"].observed
    assert not m.record("P002").labels["sex"].observed  # numeric comparison, not string


def test_binary_label_value_checked(tmp_path):
    cfg = sex_config()
    csv_path, data_root = make_dataset(tmp_path, [["P001", "train_val", 2, 63]], HEADER)
    with pytest.raises(DataError, match="binary"):
        vt.load_manifest(csv_path, data_root, cfg)


def test_event_label_two_columns(tmp_path):
    cfg = merge(base_config(), {"data": {
        "image_types": ["CT"], "tabular_features": [],
        "labels": [{"name": "OS", "kind": "event", "unit": "months"}]}})
    header = ["PatientID", "Split", "OS_event", "OS_months"]
    csv_path, data_root = make_dataset(tmp_path, [
        ["P001", "train_val", 1, 14.5],
        ["P002", "train_val", 0, 30],
        ["P003", "train_val", -1, 12],  # missing indicator on either column masks
    ], header)
    m = vt.load_manifest(csv_path, data_root, cfg)
    lv = m.record("P001").labels["OS"]
    assert (lv.value, lv.event, lv.observed) == (14.5, 1.0, True)
    assert m.record("P002").labels["OS"].event == 0.0
    assert not m.record("P003").labels["OS"].observed


def test_missing_column(tmp_path):
    cfg = sex_config()
    csv_path, data_root = make_dataset(tmp_path, [["P001", "train_val", 1]],
                                       ["PatientID", "Split", "sex"])
    with pytest.raises(MissingColumn, match="age"):
        vt.load_manifest(csv_path, data_root, cfg)


def test_bad_split_and_duplicate_and_nonnumeric(tmp_path):
    cfg = sex_config()
    csv_path, data_root = make_dataset(tmp_path, [["P001", "validation", 1, 63]], HEADER)
    with pytest.raises(BadSplitValue):
        vt.load_manifest(csv_path, data_root, cfg)

    csv_path, data_root = make_dataset(tmp_path, [
        ["P001", "train_val", 1, 63], ["P001", "test", 0, 70]], HEADER)
    with pytest.raises(DuplicatePatientID):
        vt.load_manifest(csv_path, data_root, cfg)

    csv_path, data_root = make_dataset(tmp_path, [["P001", "train_val", 1, "old"]], HEADER)
    with pytest.raises(NonNumericFeature):
        vt.load_manifest(csv_path, data_root, cfg)


def test_missing_volume(tmp_path):
    cfg = sex_config(image_types=["CT", "PET"])
    csv_path, data_root = make_dataset(tmp_path, [["P001", "train_val", 1, 63]], HEADER,
                                       modalities=("CT",))
    with pytest.raises(MissingVolume) as err:
        vt.load_manifest(csv_path, data_root, cfg)
    assert (err.value.patient_id, err.value.modality) == ("P001", "PET")


def test_shape_mismatch(tmp_path):
    cfg = sex_config()
    csv_path, data_root = make_dataset(
        tmp_path, [["P001", "train_val", 1, 63], ["P002", "train_val", 0, 70]],
        HEADER, shapes={"P002": (4, 4, 5)})
    with pytest.raises(ShapeMismatch):
        vt.load_manifest(csv_path, data_root, cfg)


def test_empty_tabular_cell_becomes_imputable(tmp_path):
    cfg = sex_config()
    csv_path, data_root = make_dataset(tmp_path, [
        ["P001", "train_val", 1, 60],
        ["P002", "train_val", 0, ""],
        ["P003", "train_val", 1, 70],
    ], HEADER)
    m = vt.load_manifest(csv_path, data_root, cfg)
    assert m.record("P002").tabular == (None,)
    assert impute_values(m)["age"] == pytest.approx(65.0)
    assert impute_values(m, ["P001"])["age"] == pytest.approx(60.0)


def test_reload_is_equal(tmp_path):
    cfg = sex_config()
    csv_path, data_root = make_dataset(tmp_path, [
        ["P001", "train_val", 1, 60], ["P002", "test", -1, ""]], HEADER)
    assert vt.load_manifest(csv_path, data_root, cfg) == vt.load_manifest(csv_path, data_root, cfg)


def test_split_train_test(synthetic_manifest):
    tv, te = vt.split_train_test(synthetic_manifest)
    assert len(tv) + len(te) == len(synthetic_manifest)
    assert set(tv.ids).isdisjoint(te.ids)
    assert set(tv.ids) | set(te.ids) == set(synthetic_manifest.ids)
    assert all(r.split == "train_val" for r in tv.records)


def test_split_empty_train(tmp_path):
    cfg = sex_config()
    csv_path, data_root = make_dataset(tmp_path, [["P001", "test", 1, 60]], HEADER)
    m = vt.load_manifest(csv_path, data_root, cfg)
    with pytest.raises(EmptyTrainSet):
        vt.split_train_test(m)


# --- stratified k-fold -------------------------------------------------------


def balanced_manifest(tmp_path, n=10):
    cfg = sex_config(image_types=[])
    rows = [[f"P{i:03d}", "train_val", i % 2, 50 + i] for i in range(n)]
    csv_path, data_root = make_dataset(tmp_path, rows, HEADER, modalities=())
    return vt.load_manifest(csv_path, data_root, cfg)


def test_kfold_sizes(tmp_path):
    m = balanced_manifest(tmp_path, 10)
    folds = stratified_kfold(m, 5, [], seed=0)
    assert [len(val) for _, val in folds] == [2, 2, 2, 2, 2]
    for train, val in folds:
        assert set(train) | set(val) == set(m.ids)
        assert set(train).isdisjoint(val)


def test_kfold_stratification_exact(tmp_path):
    m = balanced_manifest(tmp_path, 10)  # 5 zeros, 5 ones
    folds = stratified_kfold(m, 5, ["sex"], seed=3)
    for _, val in folds:
        values = sorted(m.record(pid).labels["sex"].value for pid in val)
        assert values == [0.0, 1.0]


def test_kfold_deterministic(tmp_path):
    m = balanced_manifest(tmp_path, 11)
    assert stratified_kfold(m, 3, ["sex"], seed=9) == stratified_kfold(m, 3, ["sex"], seed=9)


def test_kfold_exact_cover_property(tmp_path):
    m = balanced_manifest(tmp_path, 23)
    rng = np.random.default_rng(1)
    for k in (2, 3, 5):
        folds = stratified_kfold(m, k, ["sex"], seed=int(rng.integers(1000)))
        vals = [v for _, val in folds for v in val]
        assert sorted(vals) == sorted(m.ids)  # exact cover
        sizes = [len(val) for _, val in folds]
        assert max(sizes) - min(sizes) <= 1


def test_kfold_missing_labels_form_stratum(tmp_path):
    cfg = sex_config(image_types=[])
    rows = [[f"P{i:03d}", "train_val", -1 if i < 4 else i % 2, 50] for i in range(12)]
    csv_path, data_root = make_dataset(tmp_path, rows, HEADER, modalities=())
    m = vt.load_manifest(csv_path, data_root, cfg)
    folds = stratified_kfold(m, 4, ["sex"], seed=0)
    for _, val in folds:
        n_missing = sum(1 for pid in val if not m.record(pid).labels["sex"].observed)
        assert n_missing == 1  # 4 missing over 4 folds


def test_kfold_errors(tmp_path):
    m = balanced_manifest(tmp_path, 4)
    with pytest.raises(TooFewPatients):
        stratified_kfold(m, 5, [], seed=0)
    with pytest.raises(UnknownStratVar):
        stratified_kfold(m, 2, ["nope"], seed=0)
    with pytest.raises(ValueError):
        stratified_kfold(m, 1, [], seed=0)


def test_validate_dataset_collects_all(tmp_path):
    cfg = sex_config(image_types=["CT", "PET"])
    csv_path, data_root = make_dataset(tmp_path, [
        ["P001", "train_val", 1, 60],
        ["P002", "wrong", 2, "old"],
    ], HEADER, modalities=("CT",))
    problems = validate_dataset(csv_path, data_root, cfg)
    text = "\n".join(problems)
    assert "Split" in text and "binary" in text and "old" in text and "PET" in text
    assert len(problems) >= 4


def test_validate_dataset_clean(synthetic_root, synthetic_cfg):
    assert validate_dataset(synthetic_cfg["data.csv_path"],
                            synthetic_cfg["data.data_root"], synthetic_cfg) == []
