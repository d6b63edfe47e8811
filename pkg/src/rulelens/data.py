"""Dataset loading: tabular CSV, JSON-Lines text corpora, seeded splits,
train-only schema statistics, label-noise injection, and backbone encodings."""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .stopwords import STOPWORDS

TABULAR = "tabular"
TEXT = "text"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class DataError(Exception):
    pass


@dataclass(frozen=True)
class Instance:
    id: int
    raw: dict
    label: int
    flagged: bool = False  # text only: no vocabulary token survived filtering


@dataclass(frozen=True)
class TabularSchema:
    label_column: str
    label_names: tuple[str, ...]
    features: tuple[tuple[str, str], ...]  # (name, "numeric" | "categorical")
    categories: dict[str, tuple[str, ...]]  # train-split values per categorical
    thresholds: dict[str, tuple[float, ...]]  # deduplicated 25/50/75 percentiles
    numeric_stats: dict[str, tuple[float, float]]  # train mean, std

    @property
    def numeric_features(self) -> list[str]:
        return [n for n, k in self.features if k == "numeric"]

    @property
    def categorical_features(self) -> list[str]:
        return [n for n, k in self.features if k == "categorical"]


@dataclass(frozen=True)
class TextSchema:
    label_names: tuple[str, ...]
    vocab: tuple[str, ...]
    stopwords: frozenset


@dataclass
class Dataset:
    kind: str
    instances: list[Instance]
    K: int
    schema: object
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    ratios: tuple[float, float, float]
    _encoded: dict = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return len(self.train_idx)

    def split(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        except KeyError:
            raise DataError(f"unknown split '{name}'") from None

    def labels(self, split_name: str) -> np.ndarray:
        idx = self.split(split_name)
        return np.array([self.instances[i].label for i in idx], dtype=np.int64)

    def encode_indices(self, indices: np.ndarray) -> np.ndarray:
        return encode_instances(self, [self.instances[i] for i in indices])

    def encoded(self, split_name: str) -> np.ndarray:
        if split_name not in self._encoded:
            self._encoded[split_name] = self.encode_indices(self.split(split_name))
        return self._encoded[split_name]

    @property
    def input_dim(self) -> int:
        return self.encoded("train").shape[1]

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "ratios": list(self.ratios),
            "n_instances": len(self.instances),
            "label_names": list(self.schema.label_names),
            "train": [int(self.instances[i].id) for i in self.train_idx],
            "val": [int(self.instances[i].id) for i in self.val_idx],
            "test": [int(self.instances[i].id) for i in self.test_idx],
        }

    def write_manifest(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.manifest(), f, sort_keys=True)
            f.write("\n")


def _split_indices(n: int, ratios, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = math.floor(ratios[0] * n)
    n_val = math.floor(ratios[1] * n)
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train : n_train + n_val])
    test = np.sort(perm[n_train + n_val :])
    return train, val, test


def _nearest_rank_percentiles(values: np.ndarray, percents=(25, 50, 75)) -> tuple[float, ...]:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    s = np.sort(values)
    n = len(s)
    out = []
    for p in percents:
        rank = max(1, math.ceil(p / 100.0 * n))
        out.append(float(s[rank - 1]))
    # duplicate percentile values would mint identical atoms; keep unique
    return tuple(sorted(set(out)))


def _label_index(raw_labels: list[str], label_order) -> tuple[tuple[str, ...], dict]:
    if label_order is None:
        names = tuple(sorted(set(raw_labels)))
    else:
        names = tuple(label_order)
        unseen = set(raw_labels) - set(names)
        if unseen:
            raise DataError(f"unseen label values: {sorted(unseen)} (expected one of {list(names)})")
    return names, {name: i for i, name in enumerate(names)}


def load_tabular(
    path,
    label_column: str,
    ratios=(0.8, 0.1, 0.1),
    seed: int = 0,
    numeric_columns: list[str] | None = None,
    label_order: list[str] | None = None,
) -> Dataset:
    """Load an RFC-4180 CSV with a header row into a split tabular Dataset.

    Column kinds are inferred (a column whose every value parses as a float is
    numeric) unless numeric_columns pins them. Rows with empty cells are
    rejected: the release fed to this loader must be pre-cleaned.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if label_column not in header:
        raise DataError(f"{path}: missing label column '{label_column}' (header: {header})")
    width = len(header)
    for rownum, row in enumerate(rows, start=2):
        if len(row) != width:
            raise DataError(f"{path}:{rownum}: expected {width} fields, got {len(row)}")
        for col, cell in zip(header, row):
            if cell == "":
                raise DataError(f"{path}:{rownum}: missing value in column '{col}'")

    label_pos = header.index(label_column)
    feature_names = [h for h in header if h != label_column]

    def parses_numeric(col_idx: int) -> bool:
        try:
            for row in rows:
                float(row[col_idx])
            return True
        except ValueError:
            return False

    kinds: dict[str, str] = {}
    for name in feature_names:
        idx = header.index(name)
        if numeric_columns is not None:
            kinds[name] = "numeric" if name in numeric_columns else "categorical"
        else:
            kinds[name] = "numeric" if parses_numeric(idx) else "categorical"
    if numeric_columns is not None:
        for rownum, row in enumerate(rows, start=2):
            for name in numeric_columns:
                if name not in header:
                    raise DataError(f"{path}: numeric column '{name}' not in header")
                try:
                    float(row[header.index(name)])
                except ValueError:
                    raise DataError(
                        f"{path}:{rownum}: unparseable numeric value "
                        f"'{row[header.index(name)]}' in column '{name}'"
                    ) from None

    label_names, label_map = _label_index([r[label_pos] for r in rows], label_order)

    instances: list[Instance] = []
    for i, row in enumerate(rows):
        raw = {}
        for name in feature_names:
            cell = row[header.index(name)]
            raw[name] = float(cell) if kinds[name] == "numeric" else cell
        instances.append(Instance(id=i, raw=raw, label=label_map[row[label_pos]]))

    train, val, test = _split_indices(len(instances), ratios, seed)

    thresholds, numeric_stats = {}, {}
    for name in feature_names:
        if kinds[name] != "numeric":
            continue
        train_vals = np.array([instances[i].raw[name] for i in train], dtype=np.float64)
        if not np.all(np.isfinite(train_vals)):
            raise DataError(f"{path}: non-finite numeric values in column '{name}'")
        thresholds[name] = _nearest_rank_percentiles(train_vals)
        std = float(train_vals.std())
        numeric_stats[name] = (float(train_vals.mean()), std if std > 0 else 1.0)

    categories = {}
    for name in feature_names:
        if kinds[name] != "categorical":
            continue
        categories[name] = tuple(sorted({instances[i].raw[name] for i in train}))

    schema = TabularSchema(
        label_column=label_column,
        label_names=label_names,
        features=tuple((n, kinds[n]) for n in feature_names),
        categories=categories,
        thresholds=thresholds,
        numeric_stats=numeric_stats,
    )
    return Dataset(
        kind=TABULAR,
        instances=instances,
        K=len(label_names),
        schema=schema,
        train_idx=train,
        val_idx=val,
        test_idx=test,
        seed=seed,
        ratios=tuple(ratios),
    )


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def load_text(
    path,
    vocab_size: int = 5000,
    stopwords=None,
    ratios=(0.8, 0.1, 0.1),
    seed: int = 0,
    label_order: list[str] | None = None,
) -> Dataset:
    """Load a JSON-Lines corpus of {"text": str, "label": str} records.

    The vocabulary is the vocab_size most frequent train-split words after
    stopword removal (ties broken lexicographically); documents become count
    multisets over that vocabulary.
    """
    stop = frozenset(stopwords) if stopwords is not None else STOPWORDS
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e})") from None
            if "text" not in obj or "label" not in obj:
                raise DataError(f"{path}:{lineno}: record must contain 'text' and 'label'")
            records.append((str(obj["text"]), str(obj["label"])))
    if not records:
        raise DataError(f"{path}: empty corpus")

    label_names, label_map = _label_index([lab for _, lab in records], label_order)
    train, val, test = _split_indices(len(records), ratios, seed)

    token_lists = [
        [t for t in tokenize(text) if t not in stop] for text, _ in records
    ]
    freq: dict[str, int] = {}
    for i in train:
        for tok in token_lists[i]:
            freq[tok] = freq.get(tok, 0) + 1
    vocab = tuple(w for w, _ in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:vocab_size])
    vocab_set = set(vocab)

    instances = []
    for i, (text, lab) in enumerate(records):
        counts: dict[str, int] = {}
        for tok in token_lists[i]:
            if tok in vocab_set:
                counts[tok] = counts.get(tok, 0) + 1
        instances.append(
            Instance(id=i, raw=counts, label=label_map[lab], flagged=(len(counts) == 0))
        )

    schema = TextSchema(label_names=label_names, vocab=vocab, stopwords=stop)
    return Dataset(
        kind=TEXT,
        instances=instances,
        K=len(label_names),
        schema=schema,
        train_idx=train,
        val_idx=val,
        test_idx=test,
        seed=seed,
        ratios=tuple(ratios),
    )


def inject_symmetric_noise(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Reassign exactly round(ratio * N) train labels uniformly among the
    other K-1 classes. Validation and test labels are untouched."""
    if not 0.0 <= ratio <= 0.5:
        raise DataError(f"noise ratio must be within [0, 0.5], got {ratio}")
    n_flip = round(ratio * dataset.N)
    if n_flip == 0:
        return dataset
    rng = np.random.default_rng(seed)
    chosen = rng.choice(dataset.train_idx, size=n_flip, replace=False)
    new_instances = list(dataset.instances)
    for idx in chosen:
        inst = new_instances[idx]
        draw = int(rng.integers(0, dataset.K - 1))
        new_label = draw + 1 if draw >= inst.label else draw
        new_instances[idx] = replace(inst, label=new_label)
    return Dataset(
        kind=dataset.kind,
        instances=new_instances,
        K=dataset.K,
        schema=dataset.schema,
        train_idx=dataset.train_idx.copy(),
        val_idx=dataset.val_idx.copy(),
        test_idx=dataset.test_idx.copy(),
        seed=dataset.seed,
        ratios=dataset.ratios,
    )


def encode_instances(dataset: Dataset, instances: list[Instance]) -> np.ndarray:
    """Backbone input encoding.

    tabular: standardized numerics (train statistics) then one-hot categorical
    blocks in schema order; unknown categories encode as an all-zero block.
    text: L1-normalized count vector over the vocabulary.
    """
    schema = dataset.schema
    if dataset.kind == TABULAR:
        cols = []
        for name, kind in schema.features:
            if kind == "numeric":
                mean, std = schema.numeric_stats[name]
                cols.append(
                    (np.array([inst.raw[name] for inst in instances]) - mean)[:, None] / std
                )
            else:
                cats = schema.categories[name]
                cat_pos = {c: j for j, c in enumerate(cats)}
                block = np.zeros((len(instances), len(cats)))
                for i, inst in enumerate(instances):
                    j = cat_pos.get(inst.raw[name])
                    if j is not None:
                        block[i, j] = 1.0
                cols.append(block)
        return np.ascontiguousarray(np.hstack(cols))
    vocab_pos = {w: j for j, w in enumerate(schema.vocab)}
    X = np.zeros((len(instances), len(schema.vocab)))
    for i, inst in enumerate(instances):
        for tok, cnt in inst.raw.items():
            X[i, vocab_pos[tok]] = cnt
    sums = X.sum(axis=1, keepdims=True)
    np.divide(X, sums, out=X, where=sums > 0)
    return X


def load_adult(path, seed: int = 0) -> Dataset:
    """The census income benchmark: 48842 rows, binary '<=50K'/'>50K' labels."""
    return load_tabular(
        path,
        label_column="income",
        ratios=(0.8, 0.1, 0.1),
        seed=seed,
        label_order=["<=50K", ">50K"],
    )
