"""Dataset loading: splits, train-only statistics, noise injection, text
vocabulary, encodings, manifests, and structured error reporting."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rulelens.data import (
    DataError,
    encode_instances,
    inject_symmetric_noise,
    load_adult,
    load_tabular,
    load_text,
    tokenize,
)
from rulelens.fixtures import make_spurious_dataset, toy_rows, write_toy_csv

ADULT_CSV = "data/adult.csv"


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(c) for c in row) + "\n")


@pytest.fixture()
def ten_rows(tmp_path):
    path = tmp_path / "ten.csv"
    rows = [[i, "ab"[i % 2], "yes" if i % 3 == 0 else "no"] for i in range(10)]
    write_csv(path, ["x", "c", "y"], rows)
    return path


@pytest.fixture(scope="module")
def adult():
    return load_adult(ADULT_CSV, seed=0)


class TestSplits:
    def test_ten_row_split_sizes(self, ten_rows):
        ds = load_tabular(ten_rows, label_column="y", seed=0)
        assert (len(ds.train_idx), len(ds.val_idx), len(ds.test_idx)) == (8, 1, 1)

    def test_splits_partition_the_rows(self, ten_rows):
        ds = load_tabular(ten_rows, label_column="y", seed=3)
        merged = np.concatenate([ds.train_idx, ds.val_idx, ds.test_idx])
        np.testing.assert_array_equal(np.sort(merged), np.arange(10))

    def test_same_seed_reproduces_split(self, ten_rows):
        a = load_tabular(ten_rows, label_column="y", seed=5)
        b = load_tabular(ten_rows, label_column="y", seed=5)
        np.testing.assert_array_equal(a.train_idx, b.train_idx)
        np.testing.assert_array_equal(a.val_idx, b.val_idx)
        np.testing.assert_array_equal(a.test_idx, b.test_idx)

    def test_different_seed_changes_split(self, ten_rows):
        a = load_tabular(ten_rows, label_column="y", seed=0)
        b = load_tabular(ten_rows, label_column="y", seed=1)
        assert not (
            np.array_equal(a.val_idx, b.val_idx) and np.array_equal(a.test_idx, b.test_idx)
        )

    def test_floor_rule_matches_permutation_oracle(self, ten_rows):
        ds = load_tabular(ten_rows, label_column="y", seed=9)
        perm = np.random.default_rng(9).permutation(10)
        np.testing.assert_array_equal(ds.train_idx, np.sort(perm[:8]))
        np.testing.assert_array_equal(ds.val_idx, np.sort(perm[8:9]))
        np.testing.assert_array_equal(ds.test_idx, np.sort(perm[9:]))

    def test_bad_ratios_rejected(self, ten_rows):
        with pytest.raises(DataError):
            load_tabular(ten_rows, label_column="y", ratios=(0.8, 0.1, 0.2))

    def test_unknown_split_name(self, ten_rows):
        ds = load_tabular(ten_rows, label_column="y")
        with pytest.raises(DataError):
            ds.split("holdout")


class TestAdult:
    def test_split_sizes(self, adult):
        assert len(adult.train_idx) == 39073
        assert len(adult.val_idx) == 4884
        assert len(adult.test_idx) == 4885

    def test_age_quartile_thresholds(self, adult):
        np.testing.assert_array_equal(adult.schema.thresholds["age"], (28.0, 37.0, 48.0))

    def test_label_order_pins_positive_class(self, adult):
        assert adult.schema.label_names == ("<=50K", ">50K")
        assert adult.K == 2

    def test_feature_kinds(self, adult):
        assert adult.schema.numeric_features == [
            "age",
            "fnlwgt",
            "education-num",
            "capital-gain",
            "capital-loss",
            "hours-per-week",
        ]
        assert len(adult.schema.categorical_features) == 8

    def test_thresholds_use_train_rows_only(self, adult):
        vals = np.sort([adult.instances[i].raw["age"] for i in adult.train_idx])
        expected = []
        for p in (25, 50, 75):
            rank = max(1, math.ceil(p / 100.0 * len(vals)))
            expected.append(vals[rank - 1])
        assert tuple(sorted(set(expected))) == adult.schema.thresholds["age"]


class TestPercentiles:
    def test_nearest_rank_one_to_ten(self, tmp_path):
        path = tmp_path / "seq.csv"
        write_csv(path, ["v", "y"], [[i + 1, "a"] for i in range(10)])
        ds = load_tabular(path, label_column="y", ratios=(1.0, 0.0, 0.0))
        # ceil(2.5)=3rd, ceil(5)=5th, ceil(7.5)=8th smallest of 1..10
        assert ds.schema.thresholds["v"] == (3.0, 5.0, 8.0)

    def test_constant_column_dedupes_to_one_threshold(self, tmp_path):
        path = tmp_path / "const.csv"
        write_csv(path, ["v", "y"], [[7, "a"] for _ in range(6)])
        ds = load_tabular(path, label_column="y", ratios=(1.0, 0.0, 0.0))
        assert ds.schema.thresholds["v"] == (7.0,)
        # zero variance standardizes with unit denominator
        assert ds.schema.numeric_stats["v"] == (7.0, 1.0)

    def test_no_leakage_from_heldout_outlier(self, tmp_path):
        # plant a huge value outside the train split and confirm the
        # thresholds ignore it
        perm = np.random.default_rng(2).permutation(12)
        outlier_row = int(perm[-1])
        values = [float(i) for i in range(12)]
        values[outlier_row] = 1e9
        path = tmp_path / "leak.csv"
        write_csv(path, ["v", "y"], [[v, "a"] for v in values])
        ds = load_tabular(path, label_column="y", ratios=(10 / 12, 1 / 12, 1 / 12), seed=2)
        assert outlier_row not in set(ds.train_idx)
        assert all(t < 1e9 for t in ds.schema.thresholds["v"])


class TestNoise:
    def make(self, tmp_path, n=40, seed=0):
        path = tmp_path / "noise.csv"
        write_csv(path, ["x", "y"], [[i, "abc"[i % 3]] for i in range(n)])
        return load_tabular(path, label_column="y", seed=seed)

    def test_zero_ratio_is_identity(self, tmp_path):
        ds = self.make(tmp_path)
        assert inject_symmetric_noise(ds, 0.0, seed=1) is ds

    def test_exact_flip_count(self, tmp_path):
        ds = self.make(tmp_path)
        noisy = inject_symmetric_noise(ds, 0.25, seed=1)
        diffs = [
            i
            for i in range(len(ds.instances))
            if ds.instances[i].label != noisy.instances[i].label
        ]
        assert len(diffs) == round(0.25 * ds.N)
        assert set(diffs) <= set(ds.train_idx.tolist())

    def test_flipped_labels_change_class(self, tmp_path):
        ds = self.make(tmp_path)
        noisy = inject_symmetric_noise(ds, 0.5, seed=7)
        for a, b in zip(ds.instances, noisy.instances):
            if a.label != b.label:
                assert 0 <= b.label < ds.K

    def test_val_and_test_untouched(self, tmp_path):
        ds = self.make(tmp_path)
        noisy = inject_symmetric_noise(ds, 0.5, seed=3)
        for idx in np.concatenate([ds.val_idx, ds.test_idx]):
            assert ds.instances[idx].label == noisy.instances[idx].label

    def test_ratio_out_of_range(self, tmp_path):
        ds = self.make(tmp_path)
        with pytest.raises(DataError):
            inject_symmetric_noise(ds, 0.6, seed=0)

    @settings(max_examples=20, deadline=None)
    @given(ratio=st.floats(0.0, 0.5), seed=st.integers(0, 2**16))
    def test_flip_count_property(self, tmp_path_factory, ratio, seed):
        ds = self.make(tmp_path_factory.mktemp("noise"), n=30)
        noisy = inject_symmetric_noise(ds, ratio, seed=seed)
        diffs = sum(
            a.label != b.label for a, b in zip(ds.instances, noisy.instances)
        )
        assert diffs == round(ratio * ds.N)


class TestText:
    def write_corpus(self, path, records):
        with open(path, "w", encoding="utf-8") as f:
            for text, label in records:
                f.write(json.dumps({"text": text, "label": label}) + "\n")

    def test_tokenize_lowercases_and_strips_punctuation(self):
        assert tokenize("Good good FOOD!") == ["good", "good", "food"]

    def test_count_multiset(self, tmp_path):
        path = tmp_path / "c.jsonl"
        self.write_corpus(path, [("Good good FOOD!", "pos")] * 5)
        ds = load_text(path, ratios=(1.0, 0.0, 0.0))
        assert ds.instances[0].raw == {"good": 2, "food": 1}

    def test_stopwords_never_enter_vocab(self, tmp_path):
        path = tmp_path / "c.jsonl"
        self.write_corpus(path, [("the the the movie movie was great", "pos")] * 4)
        ds = load_text(path, ratios=(1.0, 0.0, 0.0))
        assert "the" not in ds.schema.vocab
        assert "was" not in ds.schema.vocab
        assert set(ds.schema.vocab) == {"movie", "great"}

    def test_vocab_cap_keeps_most_frequent(self, tmp_path):
        path = tmp_path / "c.jsonl"
        self.write_corpus(
            path, [("zebra zebra zebra apple apple mango banana banana", "pos")] * 3
        )
        ds = load_text(path, vocab_size=3, ratios=(1.0, 0.0, 0.0))
        # frequency then lexicographic: zebra(9), apple(6), banana(6)
        assert ds.schema.vocab == ("zebra", "apple", "banana")

    def test_empty_document_kept_and_flagged(self, tmp_path):
        path = tmp_path / "c.jsonl"
        self.write_corpus(path, [("movie great", "pos")] * 9 + [("the of and", "neg")])
        ds = load_text(path, ratios=(1.0, 0.0, 0.0))
        assert len(ds.instances) == 10
        assert ds.instances[9].flagged
        assert ds.instances[9].raw == {}
        assert not ds.instances[0].flagged

    def test_encoding_is_l1_normalized(self, tmp_path):
        path = tmp_path / "c.jsonl"
        self.write_corpus(path, [("good good food", "pos")] * 4 + [("the", "neg")])
        ds = load_text(path, ratios=(1.0, 0.0, 0.0))
        X = ds.encoded("train")
        np.testing.assert_allclose(X[0].sum(), 1.0)
        good = ds.schema.vocab.index("good")
        np.testing.assert_allclose(X[0][good], 2.0 / 3.0)
        np.testing.assert_array_equal(X[4], np.zeros(len(ds.schema.vocab)))

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"text": "ok", "label": "a"}\n{broken\n', encoding="utf-8")
        with pytest.raises(DataError) as exc:
            load_text(path)
        assert ":2:" in str(exc.value)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"text": "no label here"}\n', encoding="utf-8")
        with pytest.raises(DataError):
            load_text(path)


class TestTabularEncoding:
    def test_standardize_and_one_hot(self, tmp_path):
        path = tmp_path / "enc.csv"
        write_csv(path, ["v", "c", "y"], [[0, "a", "n"], [2, "b", "n"], [4, "a", "y"]])
        ds = load_tabular(path, label_column="y", ratios=(1.0, 0.0, 0.0))
        X = ds.encoded("train")
        # mean 2, std sqrt(8/3); blocks ordered [v, c(a), c(b)]
        std = np.sqrt(8.0 / 3.0)
        np.testing.assert_allclose(X[:, 0], np.array([-2.0, 0.0, 2.0]) / std)
        np.testing.assert_array_equal(X[:, 1:], [[1, 0], [0, 1], [1, 0]])
        assert ds.input_dim == 3

    def test_unknown_category_encodes_as_zero_block(self, tmp_path):
        path = tmp_path / "enc.csv"
        rows = [[i, "a" if i < 9 else "zzz", "n"] for i in range(10)]
        write_csv(path, ["v", "c", "y"], rows)
        ds = load_tabular(path, label_column="y", seed=4)
        unseen = [i for i in range(10) if rows[i][1] == "zzz"][0]
        if unseen not in set(ds.train_idx):
            X = encode_instances(ds, [ds.instances[unseen]])
            np.testing.assert_array_equal(X[0, 1:], np.zeros(X.shape[1] - 1))


class TestManifest:
    def test_manifest_round_trip_and_determinism(self, ten_rows, tmp_path):
        ds = load_tabular(ten_rows, label_column="y", seed=5)
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        ds.write_manifest(p1)
        load_tabular(ten_rows, label_column="y", seed=5).write_manifest(p2)
        assert p1.read_bytes() == p2.read_bytes()
        m = json.loads(p1.read_text())
        assert m["n_instances"] == 10
        assert sorted(m["train"] + m["val"] + m["test"]) == list(range(10))

    def test_reload_is_bit_identical(self, ten_rows):
        a = load_tabular(ten_rows, label_column="y", seed=0)
        b = load_tabular(ten_rows, label_column="y", seed=0)
        assert a.encoded("train").tobytes() == b.encoded("train").tobytes()
        assert a.manifest() == b.manifest()


class TestErrors:
    def test_missing_label_column(self, ten_rows):
        with pytest.raises(DataError) as exc:
            load_tabular(ten_rows, label_column="income")
        assert "income" in str(exc.value)

    def test_empty_cell_rejected(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text("x,y\n1,a\n,b\n", encoding="utf-8")
        with pytest.raises(DataError) as exc:
            load_tabular(path, label_column="y")
        assert "missing value in column 'x'" in str(exc.value)

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("x,y\n1,a\n2,a,extra\n", encoding="utf-8")
        with pytest.raises(DataError) as exc:
            load_tabular(path, label_column="y")
        assert ":3:" in str(exc.value)

    def test_pinned_numeric_with_text_value(self, tmp_path):
        path = tmp_path / "pin.csv"
        write_csv(path, ["v", "y"], [["oops", "a"], ["2", "a"]])
        with pytest.raises(DataError) as exc:
            load_tabular(path, label_column="y", numeric_columns=["v"])
        assert "oops" in str(exc.value)

    def test_unseen_label_with_pinned_order(self, tmp_path):
        path = tmp_path / "lab.csv"
        write_csv(path, ["v", "y"], [[1, "maybe"], [2, "yes"]])
        with pytest.raises(DataError) as exc:
            load_tabular(path, label_column="y", label_order=["yes", "no"])
        assert "maybe" in str(exc.value)

    def test_header_only_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("x,y\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_tabular(path, label_column="y")


class TestFixtures:
    def test_toy_rows_deterministic(self):
        assert toy_rows(n=50, seed=7) == toy_rows(n=50, seed=7)

    def test_toy_csv_loads(self, tmp_path):
        path = tmp_path / "toy.csv"
        write_toy_csv(path, n=200, seed=7)
        ds = load_tabular(path, label_column="label", seed=0)
        assert len(ds.instances) == 200
        assert ds.schema.numeric_features == ["size", "weight"]
        assert ds.schema.label_names == ("no", "yes")

    def test_spurious_shortcut_perfect_on_train_only(self):
        ds = make_spurious_dataset(seed=11)
        for i in ds.train_idx:
            inst = ds.instances[i]
            assert (inst.raw["shortcut"] == "on") == (inst.label == 1)
        agree = np.mean(
            [
                (ds.instances[i].raw["shortcut"] == "on") == (ds.instances[i].label == 1)
                for i in ds.test_idx
            ]
        )
        assert 0.3 < agree < 0.8

    def test_spurious_true_concept(self):
        ds = make_spurious_dataset(seed=11)
        for inst in ds.instances:
            expect = inst.raw["signal_a"] == "hi" and inst.raw["signal_b"] == "hi"
            assert inst.label == int(expect)
