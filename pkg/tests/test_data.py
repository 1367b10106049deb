import numpy as np
import pytest

from otfair.data import (
    Schema, SyntheticSpec, TabularDataset, generate_synthetic, load_csv, load_saved, save,
    train_test_split,
)
from otfair.errors import DataError, ParseError, SchemaError


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_one_hot_sensitive(tmp_path):
    p = _write(tmp_path, "sex,x,y\nM,1,0\nF,2,1\nM,3,0\nF,5,1\n")
    ds = load_csv(p, Schema("y", {"sex": "categorical"}))
    np.testing.assert_array_equal(ds.S, [[1, 0], [0, 1], [1, 0], [0, 1]])
    np.testing.assert_array_equal(ds.Y, [0, 1, 0, 1])
    assert ds.column_names == ["x"]
    assert ds.s_column_names == ["sex=M", "sex=F"]


def test_continuous_sensitive_is_standardized(tmp_path):
    p = _write(tmp_path, "age,job,balance,y\n30,a,1,0\n41,b,2,1\n52,a,0,0\n23,c,9,1\n")
    ds = load_csv(p, "label=y;sensitive=age:continuous")
    assert ds.d_s == 1 and ds.s_kinds == ["continuous"]
    assert abs(ds.S.mean()) < 1e-12 and abs(ds.S.var() - 1) < 1e-12
    assert "age" not in ds.column_names
    assert {"job=a", "job=b", "job=c", "balance"} == set(ds.column_names)


def test_non_binary_label(tmp_path):
    p = _write(tmp_path, "s,x,y\na,1,0\nb,2,2\n")
    with pytest.raises(SchemaError):
        load_csv(p, "label=y;sensitive=s")


def test_positive_label_mapping(tmp_path):
    p = _write(tmp_path, "s,x,y\na,1,>50K\nb,2,<=50K\na,3,>50K\n")
    ds = load_csv(p, Schema("y", {"s": "categorical"}, positive_label=">50K"))
    np.testing.assert_array_equal(ds.Y, [1, 0, 1])


def test_malformed_row_reports_index(tmp_path):
    p = _write(tmp_path, "s,x,y\na,1,0\nb,2\na,3,1\n")
    with pytest.raises(ParseError, match="row 2"):
        load_csv(p, "label=y;sensitive=s")


def test_missing_columns_and_file(tmp_path):
    p = _write(tmp_path, "s,x,y\na,1,0\n")
    with pytest.raises(SchemaError):
        load_csv(p, "label=y;sensitive=race")
    with pytest.raises(DataError):
        load_csv(tmp_path / "absent.csv", "label=y;sensitive=s")


def test_constant_column_dropped_with_warning(tmp_path):
    p = _write(tmp_path, "s,c,x,y\na,7,1,0\nb,7,2,1\na,7,4,1\n")
    ds = load_csv(p, "label=y;sensitive=s")
    assert ds.column_names == ["x"]
    assert any("'c'" in w for w in ds.warnings)


def test_missing_rows_dropped(tmp_path):
    p = _write(tmp_path, "s,x,y\na,1,0\nb,?,1\na,3,1\nb,4,0\n")
    ds = load_csv(p, "label=y;sensitive=s")
    assert ds.n == 3
    assert any("missing" in w for w in ds.warnings)


def test_standardization_and_partition(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["s,a,b,cat,y"]
    for _ in range(200):
        lines.append(f"{rng.choice(['p', 'q', 'r'])},{rng.normal(5, 3)},{rng.exponential()},"
                     f"{rng.choice(['u', 'v'])},{rng.integers(0, 2)}")
    ds = load_csv(_write(tmp_path, "\n".join(lines) + "\n"), "label=y;sensitive=s")
    assert np.abs(ds.X.mean(axis=0)).max() < 1e-9
    assert np.abs(ds.X.var(axis=0) - 1).max() < 1e-6
    np.testing.assert_array_equal(ds.S.sum(axis=1), np.ones(ds.n))


def test_round_trip(tmp_path):
    p = _write(tmp_path, "sex,age,x,y\nM,30,0.1,0\nF,41,0.7,1\nM,52,1e-3,0\nF,23,3.3,1\n")
    ds = load_csv(p, "label=y;sensitive=sex,age:continuous")
    first = save(ds, tmp_path / "saved.csv")
    back = load_saved(first)
    assert back.equals(ds)
    save(back, tmp_path / "again.csv")
    assert load_saved(tmp_path / "again.csv").equals(ds)
    assert (tmp_path / "saved.csv").read_bytes() == (tmp_path / "again.csv").read_bytes()


def test_synthetic_without_bias_is_uncorrelated():
    ds = generate_synthetic(SyntheticSpec(n=2000, bias_strength=0.0, seed=3))
    r = [abs(np.corrcoef(ds.X[:, j], ds.S[:, 0])[0, 1]) for j in range(ds.d_x)]
    assert max(r) < 0.1


def test_synthetic_with_bias_is_correlated():
    ds = generate_synthetic(SyntheticSpec(n=2000, bias_strength=2.0, seed=3))
    assert abs(np.corrcoef(ds.X[:, 0], ds.S[:, 0])[0, 1]) > 0.5


def test_synthetic_is_deterministic(tmp_path):
    spec = SyntheticSpec(n=300, group_count=3, seed=9)
    save(generate_synthetic(spec), tmp_path / "a.csv")
    save(generate_synthetic(spec), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    ds = generate_synthetic(spec)
    np.testing.assert_array_equal(ds.S.sum(axis=1), 1)


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(group_count=1)
    with pytest.raises(ValueError):
        SyntheticSpec(bias_strength=-1)


def test_split_is_seeded_and_disjoint():
    ds = generate_synthetic(SyntheticSpec(n=101, seed=0))
    tr, te = train_test_split(ds, 0.2, seed=5)
    tr2, te2 = train_test_split(ds, 0.2, seed=5)
    assert tr.equals(tr2) and te.equals(te2)
    assert tr.n + te.n == 101 and te.n == 20
    rows = {tuple(r) for r in tr.X} | {tuple(r) for r in te.X}
    assert len(rows) == 101


def test_dataset_is_immutable():
    ds = generate_synthetic(SyntheticSpec(n=10, seed=0))
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0
    with pytest.raises(SchemaError):
        TabularDataset(np.zeros((2, 1)), np.ones((2, 1)), [0, 3], ["x"], [("s", "categorical")],
                       [("s", "a")])
