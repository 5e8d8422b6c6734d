import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbrefine.data import (DataError, Dataset, Feature, FeatureSpace, align_theory, dna_feature_name,
                           from_theory, kfold, load_dataset, load_dna, load_features, save_features)
from kbrefine.theory import parse_rules


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


NOMINAL = """\
# two nominal features with four values each
color:red|green|blue|grey, size:s|m|l|xl, class:neg|pos
red, s, pos
grey, xl, neg
"""


def test_nominal_encoding(tmp_path):
    data = load_features(write(tmp_path, "a.data", NOMINAL))
    assert data.X.shape == (2, 8)
    assert data.feature_names[:2] == ("color=red", "color=green")
    assert data.X[0].tolist() == [1, 0, 0, 0, 1, 0, 0, 0]
    assert data.y.tolist() == [1, 0]


def test_feature_file_errors(tmp_path):
    bad_value = NOMINAL + "purple, s, pos\n"
    with pytest.raises(DataError, match="row 5, column 1"):
        load_features(write(tmp_path, "b.data", bad_value))
    with pytest.raises(DataError, match="fields"):
        load_features(write(tmp_path, "c.data", NOMINAL + "red, pos\n"))
    with pytest.raises(DataError, match="label"):
        load_features(write(tmp_path, "d.data", NOMINAL + "red, s, maybe\n"))
    with pytest.raises(DataError):
        load_features(write(tmp_path, "e.data", ""))


def test_load_is_deterministic(tmp_path):
    p = write(tmp_path, "a.data", NOMINAL)
    assert load_features(p).equals(load_features(p))


def test_binary_round_trip(tmp_path, example_data):
    p = tmp_path / "ex.data"
    save_features(example_data, p)
    assert load_features(p).equals(example_data)


def test_dna_encoding(tmp_path):
    rng = np.random.default_rng(0)
    seqs = ["".join(rng.choice(list("ACGT"), 57)) for _ in range(4)]
    seqs[1] = seqs[1][:10] + "N" + seqs[1][11:]
    text = "".join(f"{'+' if k % 2 else '-'}, s{k}, {s}\n" for k, s in enumerate(seqs))
    data = load_dna(write(tmp_path, "p.dna", text), offset=-50)
    assert data.X.shape == (4, 228)
    assert data.feature_names[:4] == ("pos-50=A", "pos-50=C", "pos-50=G", "pos-50=T")
    assert data.X[1, 40:44].tolist() == [0, 0, 0, 0]
    assert data.classes == ("-", "+")
    assert data.y.tolist() == [0, 1, 0, 1]
    assert load_dataset(tmp_path / "p.dna", dna_offset=-50).equals(data)


def test_dna_errors(tmp_path):
    with pytest.raises(DataError, match="length"):
        load_dna(write(tmp_path, "a.dna", "+, ACGT\n-, ACG\n"))
    with pytest.raises(DataError, match="empty"):
        load_dna(write(tmp_path, "b.dna", "# nothing\n"))


@given(st.integers(-100, 100), st.sampled_from("ACGT"), st.integers(-100, 100), st.sampled_from("ACGT"))
def test_dna_names_are_bijective(p1, b1, p2, b2):
    assert (dna_feature_name(p1, b1) == dna_feature_name(p2, b2)) == ((p1, b1) == (p2, b2))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**32 - 1), st.data())
def test_kfold_partitions(n, seed, data):
    k = data.draw(st.integers(2, n))
    rng = np.random.default_rng(seed)
    ds = Dataset(FeatureSpace.binary(["x"]), np.arange(n, dtype=float).reshape(-1, 1),
                 rng.integers(0, 2, n))
    folds = kfold(ds, k, seed)
    tests = [f[1].X[:, 0].tolist() for f in folds]
    flat = sorted(v for t in tests for v in t)
    assert flat == list(range(n))
    sizes = [len(t) for t in tests]
    assert max(sizes) - min(sizes) <= 1
    for tr, te in folds:
        assert len(tr) + len(te) == n
    again = kfold(ds, k, seed)
    assert all(a[1].equals(b[1]) for a, b in zip(folds, again))


def test_kfold_cases():
    ds = Dataset(FeatureSpace.binary(["x"]), np.zeros((100, 1)), np.arange(100) % 2)
    folds = kfold(ds, 10, 0)
    assert [len(te) for _, te in folds] == [10] * 10
    loo = kfold(ds.subset(range(5)), 5, 0)
    assert all(len(te) == 1 for _, te in loo)
    with pytest.raises(DataError):
        kfold(ds.subset(range(3)), 4)


def test_encoded_values_are_one_hot(tmp_path):
    data = load_features(write(tmp_path, "a.data", NOMINAL))
    assert set(np.unique(data.X)) <= {0.0, 1.0}
    assert data.X[:, :4].sum(axis=1).tolist() == [1, 1]


def test_space_validation():
    with pytest.raises(DataError):
        FeatureSpace((Feature("a"), Feature("a")), ("n", "p"))
    with pytest.raises(DataError):
        FeatureSpace((Feature("a", ()),), ("n", "p"))
    with pytest.raises(DataError):
        Dataset(FeatureSpace.binary(["a"]), np.zeros((2, 1)), np.array([0, 2]))


def test_align_theory(example_rules, example_data):
    rs = align_theory(parse_rules("a :- e, f."), example_data)
    assert rs.inputs == example_data.feature_names
    assert rs.outputs == ("a",)
    assert align_theory(None, example_data).outputs == ("out",)
    with pytest.raises(DataError):
        align_theory(parse_rules("a :- zz."), example_data)
    with pytest.raises(DataError):
        align_theory(parse_rules("a :- e.\nq :- f."), example_data)


def test_align_multiclass():
    space = FeatureSpace.binary(["x", "y"], ("ei", "ie", "n"))
    data = Dataset(space, np.zeros((3, 2)), np.array([0, 1, 2]))
    rs = align_theory(parse_rules("ei :- x.\nie :- y."), data)
    assert rs.outputs == ("ei", "ie", "n")


def test_from_theory_labels(example_rules):
    X = np.array([[0, 1, 1, 1], [1, 0, 0, 0]], dtype=float)
    data = from_theory(example_rules, X, "a")
    assert data.y.tolist() == [1, 0]
