import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coilfail.dataio import (
    CoilSequence,
    FeatureRecord,
    LeakageError,
    ParseError,
    Window,
    apply_normalizer,
    assert_coil_disjoint,
    fit_normalizer,
    leave_coils_out_folds,
    load_sequences,
    save_sequences,
    stratified_split,
    window_sequences,
    windowing_report,
)

HEADER = "coil_id,timestamp,cnl,csp,ssr,csi,label\n"


def seq(coil, n, label="normal", start=0, rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    recs = tuple(FeatureRecord(float(start + i), *rng.normal(size=4)) for i in range(n))
    return CoilSequence(coil, recs, label)


# -------------------------------------------------------------------- load
def test_empty_file_gives_empty_list_with_warning(tmp_path, caplog):
    path = tmp_path / "d.csv"
    path.write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_sequences(path) == []
    assert "empty" in caplog.text


def test_three_row_fixture(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(HEADER
                    + "b,2024-05-01T10:00:00Z,1,2,3,4,normal\n"
                    + "a,1714557600,5,6,7,8,broken\n"
                    + "b,1714550000,9,10,11,12,normal\n")
    seqs = load_sequences(path)
    assert [(s.coil_id, len(s), s.label) for s in seqs] == [("b", 2, "normal"), ("a", 1, "broken")]
    # time-sorted: the epoch row precedes the ISO row
    assert seqs[0].records[0].cnl == 9.0
    assert seqs[0].records[1].timestamp == 1714557600.0


def test_unknown_label_names_line(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(HEADER + "a,1,1,2,3,4,normal\n" + "a,2,1,2,3,4,exploded\n")
    with pytest.raises(ParseError) as err:
        load_sequences(path)
    assert err.value.line == 3
    assert "exploded" in str(err.value)


@pytest.mark.parametrize("row", ["a,1,1,nan,3,4,normal", "a,1,1,inf,3,4,normal", "a,1,1,x,3,4,normal",
                                 "a,yesterday,1,2,3,4,normal"])
def test_bad_values_rejected(tmp_path, row):
    path = tmp_path / "d.csv"
    path.write_text(HEADER + row + "\n")
    with pytest.raises(ParseError):
        load_sequences(path)


def test_header_required(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,1,1,2,3,4,normal\n")
    with pytest.raises(ParseError):
        load_sequences(path)


def test_jsonl_schema(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"coil_id":"a","timestamp":5,"cnl":1,"csp":2,"ssr":3,"csi":4,"label":"broken"}\n'
                    '{"coil_id":"a","timestamp":3,"cnl":0,"csp":2,"ssr":3,"csi":4,"label":"broken"}\n')
    (s,) = load_sequences(path)
    assert [r.timestamp for r in s.records] == [3.0, 5.0]
    path.write_text('{"coil_id":"a","timestamp":5,"cnl":1,"csp":2,"ssr":3,"label":"broken"}\n')
    with pytest.raises(ParseError):
        load_sequences(path)


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_load_save_load_round_trip(tmp_path, fmt):
    rng = np.random.default_rng(1)
    original = [seq("c1", 7, rng=rng), seq("c2", 3, "broken", start=100, rng=rng)]
    path = tmp_path / f"d.{fmt}"
    save_sequences(original, path)
    first = load_sequences(path)
    assert first == original
    save_sequences(first, tmp_path / f"e.{fmt}")
    assert load_sequences(tmp_path / f"e.{fmt}") == original
    assert (tmp_path / f"e.{fmt}").read_bytes() == path.read_bytes()


# ----------------------------------------------------------- normalization
def test_normalizer_hand_values():
    recs = tuple(FeatureRecord(float(i), v, 10 * v, -v, v + 1) for i, v in enumerate([1.0, 2.0, 3.0]))
    s = CoilSequence("c", recs, "normal")
    norm = fit_normalizer([s])
    np.testing.assert_allclose(norm.mean, [2.0, 20.0, -2.0, 3.0])
    np.testing.assert_allclose(norm.std[0], np.sqrt(2.0 / 3.0))
    (out,) = apply_normalizer(norm, [s])
    np.testing.assert_allclose(out.values()[:, 0], [-1.2247448714, 0.0, 1.2247448714], atol=1e-9)


def test_normalizer_constant_feature_rejected():
    recs = tuple(FeatureRecord(float(i), 5.0, float(i), float(i), float(i)) for i in range(4))
    with pytest.raises(ValueError, match="zero-variance"):
        fit_normalizer([CoilSequence("c", recs, "normal")])


def test_normalized_training_data_is_standard():
    rng = np.random.default_rng(2)
    data = [seq(f"c{i}", 50, rng=rng) for i in range(5)]
    out = apply_normalizer(fit_normalizer(data), data)
    vals = np.concatenate([s.values() for s in out])
    np.testing.assert_allclose(vals.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(vals.std(axis=0), 1.0, atol=1e-9)


def test_normalizer_leakage_guard():
    data = [seq("a", 5), seq("b", 5)]
    with pytest.raises(LeakageError):
        fit_normalizer(data, test_coils={"b"})
    fit_normalizer(data, test_coils={"z"})


def test_windows_normalize_once():
    w = Window("a", np.random.default_rng(0).normal(size=(4, 40)), 0)
    norm = fit_normalizer([w])
    (once,) = apply_normalizer(norm, [w])
    with pytest.raises(ValueError, match="already normalized"):
        apply_normalizer(norm, [once])
    # a second application would not be the identity
    twice = (once.values - norm.mean[:, None]) / norm.std[:, None]
    assert not np.allclose(twice, once.values)


def test_normalizer_refuses_synthetic_windows():
    w = Window("s", np.random.default_rng(0).normal(size=(4, 40)), 1, synthetic=True)
    with pytest.raises(LeakageError):
        fit_normalizer([w])


# --------------------------------------------------------------- windowing
@pytest.mark.parametrize("n, windows, dropped", [(80, 2, 0), (39, 0, 39), (100, 2, 20), (40, 1, 0)])
def test_window_counts(n, windows, dropped):
    s = seq("a", n, "broken")
    out = window_sequences([s])
    assert len(out) == windows
    assert all(w.values.shape == (4, 40) and w.label == 1 for w in out)
    rep = windowing_report([s])
    assert rep["windows"] == windows and rep["dropped_records"] == dropped
    assert 40 * windows + dropped == n


def test_windows_are_consecutive_records():
    s = seq("a", 80)
    w0, w1 = window_sequences([s])
    np.testing.assert_array_equal(np.hstack([w0.values, w1.values]), s.values().T)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 200), min_size=1, max_size=6))
def test_windowing_conserves_records(lengths):
    seqs = [seq(f"c{i}", n) for i, n in enumerate(lengths)]
    rep = windowing_report(seqs)
    assert len(window_sequences(seqs)) == rep["windows"]
    for s in seqs:
        pc = rep["per_coil"][s.coil_id]
        assert 40 * pc["windows"] + pc["dropped"] == len(s)


# ------------------------------------------------------------------ splits
def labels_of(normal, broken):
    d = {f"n{i:03d}": 0 for i in range(normal)}
    d.update({f"b{i:03d}": 1 for i in range(broken)})
    return d


def test_stratified_split_exact_fractions():
    train, val = stratified_split(labels_of(10, 10), 0.7, seed=3)
    assert sum(c.startswith("n") for c in train) == 7 and sum(c.startswith("b") for c in train) == 7
    assert sum(c.startswith("n") for c in val) == 3 and sum(c.startswith("b") for c in val) == 3
    assert not set(train) & set(val)


def test_stratified_split_rounding_rule():
    train, val = stratified_split(labels_of(10, 3), 0.7, seed=0)
    assert sum(c.startswith("b") for c in train) == 2
    assert sum(c.startswith("b") for c in val) == 1


def test_stratified_split_deterministic_and_seed_sensitive():
    labels = labels_of(30, 10)
    assert stratified_split(labels, seed=4) == stratified_split(labels, seed=4)
    assert stratified_split(labels, seed=4) != stratified_split(labels, seed=5)


def test_stratified_split_needs_both_classes():
    with pytest.raises(ValueError, match="absent"):
        stratified_split(labels_of(5, 0))


def test_folds_partition_twenty_coils():
    folds = leave_coils_out_folds(labels_of(10, 10), k=10, seed=0)
    assert len(folds) == 10
    assert all(len(f.test) == 2 for f in folds)
    union = [c for f in folds for c in f.test]
    assert sorted(union) == sorted(labels_of(10, 10))
    for f in folds:
        assert not set(f.test) & set(f.rest)
        assert set(f.test) | set(f.rest) == set(labels_of(10, 10))


def _constructive_feasible(n_broken, k):
    """Independent check: pigeonhole says k folds can each get a broken coil iff n_broken >= k."""
    return n_broken >= k


def test_folds_cover_broken_coils_at_low_prevalence():
    n = 500
    broken = round(0.022 * n)
    labels = labels_of(n - broken, broken)
    assert _constructive_feasible(broken, 10)
    folds = leave_coils_out_folds(labels, k=10, seed=9)
    for f in folds:
        assert any(labels[c] == 1 for c in f.test)
        assert any(labels[c] == 0 for c in f.test)
    sizes = [len(f.test) for f in folds]
    assert max(sizes) - min(sizes) <= 1


def test_folds_infeasible():
    with pytest.raises(ValueError):
        leave_coils_out_folds(labels_of(100, 5), k=10)
    with pytest.raises(ValueError):
        leave_coils_out_folds(labels_of(100, 20), k=1)


def test_assert_coil_disjoint():
    assert_coil_disjoint({"a"}, {"b"}, {"c"})
    with pytest.raises(LeakageError):
        assert_coil_disjoint({"a"}, {"b"}, {"a"})
